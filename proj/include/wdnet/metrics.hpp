#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wdnet/image.hpp"

namespace wdnet {

// All metrics are computed on the 0-255 intensity scale, per channel RGB.

// 10*log10(255^2 / MSE); identical images report the 99 dB cap.
double psnr(const ImageRGB& a, const ImageRGB& b);
constexpr double kPsnrCap = 99.0;

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 255, averaged over channels.
double ssim(const ImageRGB& a, const ImageRGB& b);

double rmse(const ImageRGB& a, const ImageRGB& b);

// RMSE over mask pixels only, normalized by the masked pixel count. An empty
// mask yields 0; `empty_flag` reports that degenerate case when non-null.
double rmse_w(const ImageRGB& a, const ImageRGB& b, const BinaryMask& m,
              bool* empty_flag = nullptr);

double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct PerImageMetrics {
  std::string id;
  double psnr = 0, ssim = 0, rmse = 0, rmse_w = 0;
  bool rmse_w_empty_mask = false;
  double mask_iou = -1;  // -1 when the model emits no mask
};

struct MetricReport {
  std::vector<PerImageMetrics> per_image;
  double mean_psnr = 0, mean_ssim = 0, mean_rmse = 0, mean_rmse_w = 0;
  double mean_mask_iou = -1;
  size_t sample_count = 0;
  size_t skipped = 0;
  std::string dataset_id, checkpoint_id;

  void finalize();  // recompute means from per_image
};

nlohmann::ordered_json report_to_json(const MetricReport& r);
std::string report_table(const MetricReport& r);  // fixed-width summary

struct EvaluateOptions {
  std::string split = "test";
  // "checkpoint": run the model; "identity": output = x; "oracle": output = y
  std::string model_mode = "checkpoint";
  float mask_threshold = 0.5f;
};

// Runs the checkpointed model over `<dataset_root>/<split>` and scores the
// four metrics against ground truth, using the ground-truth mask for RMSE_w.
MetricReport evaluate(const std::string& checkpoint_path,
                      const std::string& dataset_root,
                      const EvaluateOptions& options = {});

}  // namespace wdnet
