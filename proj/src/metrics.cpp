#include "wdnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace wdnet {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same(const ImageRGB& a, const ImageRGB& b) {
  require(a.height() == b.height() && a.width() == b.width(),
          "metrics: dimension mismatch");
}

double mse255(const ImageRGB& a, const ImageRGB& b) {
  double s = 0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    double d = (static_cast<double>(a.data()[i]) - b.data()[i]) * 255.0;
    s += d * d;
  }
  return s / static_cast<double>(a.data().size());
}

}  // namespace

double psnr(const ImageRGB& a, const ImageRGB& b) {
  require_same(a, b);
  double m = mse255(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / m));
}

double rmse(const ImageRGB& a, const ImageRGB& b) {
  require_same(a, b);
  return std::sqrt(mse255(a, b));
}

double rmse_w(const ImageRGB& a, const ImageRGB& b, const BinaryMask& m,
              bool* empty_flag) {
  require_same(a, b);
  require(a.height() == m.height() && a.width() == m.width(),
          "rmse_w: mask dimension mismatch");
  BinaryMask hard = m.is_hard() ? m : m.binarized();
  double s = 0;
  size_t count = 0;
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c) {
      if (hard.at(r, c) != 1.f) continue;
      ++count;
      for (int ch = 0; ch < 3; ++ch) {
        double d = (static_cast<double>(a.at(ch, r, c)) - b.at(ch, r, c)) * 255.0;
        s += d * d;
      }
    }
  if (empty_flag) *empty_flag = (count == 0);
  if (count == 0) return 0.0;
  return std::sqrt(s / (3.0 * static_cast<double>(count)));
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require(a.height() == b.height() && a.width() == b.width(),
          "mask_iou: dimension mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    bool pa = a.data()[i] > 0.5f, pb = b.data()[i] > 0.5f;
    inter += (pa && pb);
    uni += (pa || pb);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// SSIM, separable Gaussian window

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255) * (0.01 * 255);
constexpr double kC2 = (0.03 * 255) * (0.03 * 255);

const std::vector<double>& gaussian_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> g(kWin);
    double sum = 0;
    for (int i = 0; i < kWin; ++i) {
      double d = i - (kWin - 1) / 2.0;
      g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
      sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
  }();
  return k;
}

// valid-mode separable filtering: (h,w) -> (h-10, w-10)
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
  const auto& g = gaussian_kernel();
  int ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int k = 0; k < kWin; ++k) s += g[k] * img[static_cast<size_t>(y) * w + x + k];
      tmp[static_cast<size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<size_t>(y + k) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const ImageRGB& a, const ImageRGB& b) {
  require_same(a, b);
  require(a.height() >= kWin && a.width() >= kWin,
          "ssim: image smaller than the 11x11 window");
  int h = a.height(), w = a.width();
  size_t plane = static_cast<size_t>(h) * w;
  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
    for (size_t i = 0; i < plane; ++i) {
      double va = a.data()[ch * plane + i] * 255.0;
      double vb = b.data()[ch * plane + i] * 255.0;
      pa[i] = va;
      pb[i] = vb;
      paa[i] = va * va;
      pbb[i] = vb * vb;
      pab[i] = va * vb;
    }
    auto mu_a = filter_valid(pa, h, w);
    auto mu_b = filter_valid(pb, h, w);
    auto e_aa = filter_valid(paa, h, w);
    auto e_bb = filter_valid(pbb, h, w);
    auto e_ab = filter_valid(pab, h, w);
    double s = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      double ma = mu_a[i], mb = mu_b[i];
      double va = e_aa[i] - ma * ma;
      double vb = e_bb[i] - mb * mb;
      double cov = e_ab[i] - ma * mb;
      s += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
           ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    total += s / static_cast<double>(mu_a.size());
  }
  return total / 3.0;
}

// ---------------------------------------------------------------------------
// report

void MetricReport::finalize() {
  sample_count = per_image.size();
  mean_psnr = mean_ssim = mean_rmse = mean_rmse_w = 0;
  double iou_sum = 0;
  size_t iou_count = 0;
  for (const auto& m : per_image) {
    mean_psnr += m.psnr;
    mean_ssim += m.ssim;
    mean_rmse += m.rmse;
    mean_rmse_w += m.rmse_w;
    if (m.mask_iou >= 0) {
      iou_sum += m.mask_iou;
      ++iou_count;
    }
  }
  if (sample_count > 0) {
    mean_psnr /= sample_count;
    mean_ssim /= sample_count;
    mean_rmse /= sample_count;
    mean_rmse_w /= sample_count;
  }
  mean_mask_iou = iou_count > 0 ? iou_sum / iou_count : -1;
}

nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset_id;
  j["checkpoint"] = r.checkpoint_id;
  j["summary"] = {{"psnr", r.mean_psnr},   {"ssim", r.mean_ssim},
                  {"rmse", r.mean_rmse},   {"rmse_w", r.mean_rmse_w},
                  {"samples", r.sample_count}, {"skipped", r.skipped}};
  if (r.mean_mask_iou >= 0) j["summary"]["mask_iou"] = r.mean_mask_iou;
  j["per_image"] = nlohmann::ordered_json::array();
  for (const auto& m : r.per_image) {
    nlohmann::ordered_json jm = {{"id", m.id},     {"psnr", m.psnr},
                                 {"ssim", m.ssim}, {"rmse", m.rmse},
                                 {"rmse_w", m.rmse_w}};
    if (m.rmse_w_empty_mask) jm["rmse_w_empty_mask"] = true;
    if (m.mask_iou >= 0) jm["mask_iou"] = m.mask_iou;
    j["per_image"].push_back(std::move(jm));
  }
  return j;
}

std::string report_table(const MetricReport& r) {
  char line[160];
  std::ostringstream os;
  os << "  PSNR     SSIM     RMSE     RMSE_w\n";
  std::snprintf(line, sizeof(line), "  %-8.2f %-8.4f %-8.2f %-8.2f\n",
                r.mean_psnr, r.mean_ssim, r.mean_rmse, r.mean_rmse_w);
  os << line;
  return os.str();
}

}  // namespace wdnet
