#include "wdnet/infer.hpp"

#include "wdnet/bridge.hpp"

namespace wdnet {

LoadedGenerator load_generator(const std::string& checkpoint_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  LoadedGenerator out;
  out.meta = ckpt.meta;
  out.config = model_config_from_json(ckpt.meta.at("model"));
  Rng rng(0);  // overwritten by restore
  out.gen = std::make_shared<nn::Generator<float>>(out.config, rng);
  out.gen->params().restore(ckpt.tensors);
  return out;
}

GenOutput run_generator(const nn::Generator<float>& gen, const ImageRGB& x) {
  auto xv = nn::constant(image_to_tensor<float>(x));
  nn::WDNetForward<float> f = gen.forward(xv, /*training=*/false);
  GenOutput out;
  out.y_out = tensor_to_image(f.y_out->value);
  if (f.alpha_hat) {
    out.has_decomposition = true;
    out.alpha = tensor_to_matte(f.alpha_hat->value);
    out.w = tensor_to_image(f.w_hat->value);
    out.m_soft = tensor_to_mask(f.m_hat->value);
    out.y_pre = tensor_to_image(f.y_pre->value);
  }
  return out;
}

}  // namespace wdnet
