#include "wdnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wdnet {

namespace {

constexpr char kMagic[4] = {'W', 'D', 'N', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  std::string meta = ckpt.meta.dump();
  put<uint64_t>(os, meta.size());
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint8_t>(os, 0);  // dtype: float32
    put<int32_t>(os, t.n);
    put<int32_t>(os, t.c);
    put<int32_t>(os, t.h);
    put<int32_t>(os, t.w);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic: " + path);
  uint32_t version = get<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  uint64_t meta_len = get<uint64_t>(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw std::runtime_error("checkpoint: truncated metadata");
  Checkpoint ckpt;
  ckpt.meta = nlohmann::json::parse(meta);
  uint32_t count = get<uint32_t>(is);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = get<uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint8_t dtype = get<uint8_t>(is);
    if (dtype != 0)
      throw std::runtime_error("checkpoint: unsupported dtype");
    int32_t n = get<int32_t>(is), c = get<int32_t>(is), h = get<int32_t>(is),
            w = get<int32_t>(is);
    nn::Tensor<float> t(n, c, h, w);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

nlohmann::json model_config_to_json(const nn::ModelConfig& cfg) {
  return nlohmann::json{
      {"variant", nn::to_string(cfg.variant)},
      {"decomp",
       {{"depth", cfg.decomp.depth},
        {"mult", cfg.decomp.mult},
        {"norm", nn::to_string(cfg.decomp.norm)}}},
      {"refine",
       {{"blocks", cfg.refine.blocks},
        {"width", cfg.refine.width},
        {"norm", nn::to_string(cfg.refine.norm)}}},
      {"disc",
       {{"mult", cfg.disc.mult},
        {"norm", nn::to_string(cfg.disc.norm)}}}};
}

nn::ModelConfig model_config_from_json(const nlohmann::json& j) {
  nn::ModelConfig cfg;
  cfg.variant = nn::variant_from_string(j.at("variant").get<std::string>());
  const auto& d = j.at("decomp");
  cfg.decomp.depth = d.at("depth").get<int>();
  cfg.decomp.mult = d.at("mult").get<double>();
  cfg.decomp.norm = nn::norm_from_string(d.at("norm").get<std::string>());
  const auto& r = j.at("refine");
  cfg.refine.blocks = r.at("blocks").get<int>();
  cfg.refine.width = r.at("width").get<int>();
  cfg.refine.norm = nn::norm_from_string(r.at("norm").get<std::string>());
  const auto& ds = j.at("disc");
  cfg.disc.mult = ds.at("mult").get<double>();
  cfg.disc.norm = nn::norm_from_string(ds.at("norm").get<std::string>());
  return cfg;
}

}  // namespace wdnet
