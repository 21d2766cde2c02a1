#include "test_support.hpp"

#include <cmath>
#include <filesystem>

#include "wdnet/image_io.hpp"

namespace fs = std::filesystem;

namespace wdnet::testsup {

ImageRGB make_host(int h, int w, uint64_t seed) {
  Rng rng(Rng::derive(seed, "host", 0));
  double fx[3], fy[3], ph[3], base[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = rng.uniform(1.0, 4.0);
    fy[c] = rng.uniform(1.0, 4.0);
    ph[c] = rng.uniform(0.0, 6.28);
    base[c] = rng.uniform(0.25, 0.75);
  }
  ImageRGB img(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = base[c] +
                   0.25 * std::sin(fx[c] * 6.28 * x / w + ph[c]) *
                       std::cos(fy[c] * 6.28 * y / h);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return img;
}

WatermarkAsset make_asset(int size, int shape_kind, const std::string& name) {
  WatermarkAsset a;
  a.name = name;
  a.rgb = ImageRGB(size, size);
  a.intrinsic_alpha = AlphaMatte(size, size);
  double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0, r = size * 0.38;
  float color[3] = {static_cast<float>(0.2 + 0.15 * (shape_kind % 5)),
                    static_cast<float>(0.9 - 0.12 * (shape_kind % 6)),
                    static_cast<float>(0.35 + 0.1 * (shape_kind % 7))};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dx = x - cx, dy = y - cy;
      double d = std::sqrt(dx * dx + dy * dy);
      bool inside = false;
      switch (shape_kind % 5) {
        case 0: inside = d <= r; break;                            // disc
        case 1: inside = std::abs(dy) <= size * 0.18; break;       // bar
        case 2: inside = d <= r && d >= r * 0.55; break;           // ring
        case 3:                                                     // cross
          inside = std::abs(dx) <= size * 0.14 || std::abs(dy) <= size * 0.14;
          break;
        case 4:                                                     // diamond
          inside = std::abs(dx) + std::abs(dy) <= r;
          break;
      }
      if (!inside) continue;
      a.intrinsic_alpha.at(y, x) = 1.f;
      for (int c = 0; c < 3; ++c) a.rgb.at(c, y, x) = color[c];
    }
  return a;
}

void write_hosts(const std::string& dir, int count, int h, int w,
                 uint64_t seed) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "host_%03d.png", i);
    write_png_rgb((fs::path(dir) / buf).string(),
                  make_host(h, w, seed + 1000 * i));
  }
}

void write_assets(const std::string& dir, int first, int count, int size) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "asset_%03d", first + i);
    WatermarkAsset a = make_asset(size, first + i, buf);
    write_png_rgba((fs::path(dir) / (std::string(buf) + ".png")).string(),
                   a.rgb, a.intrinsic_alpha);
  }
}

nn::ModelConfig tiny_model(nn::GeneratorVariant variant) {
  nn::ModelConfig mc;
  mc.variant = variant;
  mc.decomp.depth = 3;
  mc.decomp.mult = 0.25;
  mc.decomp.norm = nn::Norm::instance;
  mc.refine.blocks = 2;
  mc.refine.width = 24;
  mc.refine.norm = nn::Norm::instance;
  mc.disc.mult = 0.125;
  mc.disc.norm = nn::Norm::instance;
  return mc;
}

namespace {

double gauss_win(int i, int j) {
  static double w[11][11];
  static bool init = false;
  if (!init) {
    double sum = 0;
    for (int a = 0; a < 11; ++a)
      for (int b = 0; b < 11; ++b) {
        double da = a - 5, db = b - 5;
        w[a][b] = std::exp(-(da * da + db * db) / (2 * 1.5 * 1.5));
        sum += w[a][b];
      }
    for (int a = 0; a < 11; ++a)
      for (int b = 0; b < 11; ++b) w[a][b] /= sum;
    init = true;
  }
  return w[i][j];
}

}  // namespace

double ssim_bruteforce(const ImageRGB& a, const ImageRGB& b) {
  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  int h = a.height(), w = a.width();
  double total = 0;
  long count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y + 11 <= h; ++y)
      for (int x = 0; x + 11 <= w; ++x) {
        double mu_a = 0, mu_b = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            double g = gauss_win(i, j);
            mu_a += g * a.at(c, y + i, x + j) * 255.0;
            mu_b += g * b.at(c, y + i, x + j) * 255.0;
          }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            double g = gauss_win(i, j);
            double da = a.at(c, y + i, x + j) * 255.0 - mu_a;
            double db = b.at(c, y + i, x + j) * 255.0 - mu_b;
            va += g * da * da;
            vb += g * db * db;
            cov += g * da * db;
          }
        double s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
        total += s;
        ++count;
      }
  return total / count;
}

void bbox_bruteforce(const BinaryMask& m, int& row0, int& col0, int& row1,
                     int& col1) {
  row0 = m.height();
  col0 = m.width();
  row1 = -1;
  col1 = -1;
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(r, c) > 0.5f) {
        row0 = std::min(row0, r);
        col0 = std::min(col0, c);
        row1 = std::max(row1, r);
        col1 = std::max(col1, c);
      }
}

std::string scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "wdnet_tests" / name;
  std::error_code ec;
  fs::remove_all(p, ec);
  fs::create_directories(p);
  return p.string();
}

}  // namespace wdnet::testsup
