#include <filesystem>

#include "wdnet/infer.hpp"
#include "wdnet/metrics.hpp"
#include "wdnet/synth.hpp"

namespace fs = std::filesystem;

namespace wdnet {

MetricReport evaluate(const std::string& checkpoint_path,
                      const std::string& dataset_root,
                      const EvaluateOptions& options) {
  MetricReport report;
  report.dataset_id = dataset_root;
  report.checkpoint_id =
      options.model_mode == "checkpoint" ? checkpoint_path : options.model_mode;

  LoadedGenerator lg;
  if (options.model_mode == "checkpoint") {
    lg = load_generator(checkpoint_path);
  } else if (options.model_mode != "identity" && options.model_mode != "oracle") {
    throw std::runtime_error("evaluate: unknown model mode '" +
                             options.model_mode + "'");
  }

  fs::path split_dir = fs::path(dataset_root) / options.split / "watermarked";
  if (!fs::is_directory(split_dir))
    throw std::runtime_error("evaluate: no such split directory: " +
                             split_dir.string());
  auto files = list_pngs(split_dir.string());
  if (files.empty())
    throw std::runtime_error("evaluate: split is empty: " + split_dir.string());

  for (const auto& f : files) {
    std::string id = fs::path(f).stem().string();
    Sample s;
    try {
      s = load_sample(dataset_root, options.split, id);
    } catch (const std::exception&) {
      ++report.skipped;
      continue;
    }
    PerImageMetrics m;
    m.id = id;
    ImageRGB pred;
    if (options.model_mode == "identity") {
      pred = s.x;
    } else if (options.model_mode == "oracle") {
      pred = s.y;
    } else {
      GenOutput out;
      try {
        out = run_generator(*lg.gen, s.x);
      } catch (const std::exception&) {
        ++report.skipped;  // e.g. dims not divisible by 2^depth
        continue;
      }
      pred = out.y_out;
      if (out.has_decomposition)
        m.mask_iou =
            mask_iou(out.m_soft.binarized(options.mask_threshold), s.mask);
    }
    m.psnr = psnr(pred, s.y);
    m.ssim = ssim(pred, s.y);
    m.rmse = rmse(pred, s.y);
    m.rmse_w = rmse_w(pred, s.y, s.mask, &m.rmse_w_empty_mask);
    report.per_image.push_back(std::move(m));
  }
  report.finalize();
  return report;
}

}  // namespace wdnet
