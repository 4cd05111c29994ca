#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpvs/seq2seq.hpp"

namespace gpvs {

// Checkpoint format (bit-exact): 5-byte magic "GPVS1", u32 little-endian
// manifest length, UTF-8 JSON manifest, then the concatenated row-major
// little-endian float64 payloads at the offsets listed in the tensor table.
// Offsets are byte positions within the payload region.

inline constexpr char kCheckpointMagic[5] = {'G', 'P', 'V', 'S', '1'};

namespace detail_ckpt {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(sizeof(double) == 8, "float64 payloads assume 8-byte doubles");

}  // namespace detail_ckpt

inline nlohmann::json gp_spec_to_json(const GpPriorSpec& spec) {
  nlohmann::json j;
  j["v"] = spec.v;
  j["r"] = spec.r;
  j["sigma2"] = spec.sigma2;
  j["mean_mode"] = to_string(spec.mean_mode);
  return j;
}

inline GpPriorSpec gp_spec_from_json(const nlohmann::json& j) {
  GpPriorSpec spec;
  spec.v = j.at("v").get<double>();
  spec.r = j.at("r").get<double>();
  spec.sigma2 = j.at("sigma2").get<double>();
  spec.mean_mode = mean_mode_from_string(j.at("mean_mode").get<std::string>());
  return spec;
}

inline void save_checkpoint(const Seq2SeqModel& model, const std::string& path) {
  const std::vector<ad::Tensor> params = model.params();
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["variant"] = to_string(model.cfg.variant);
  manifest["V"] = model.cfg.vocab_size;
  manifest["E"] = model.cfg.embed_dim;
  manifest["H"] = model.cfg.hidden_dim;
  manifest["D"] = model.cfg.latent_dim;
  manifest["projection"] = model.cfg.projection;
  if (model.cfg.variant == Variant::gp)
    manifest["gp_spec"] = gp_spec_to_json(model.cfg.gp);
  else
    manifest["gp_spec"] = nullptr;

  nlohmann::json table = nlohmann::json::object();
  std::size_t offset = 0;
  for (const ad::Tensor& p : params) {
    nlohmann::json entry;
    entry["offset"] = offset;
    entry["shape"] = p.shape();
    table[p.name()] = std::move(entry);
    offset += p.numel() * sizeof(double);
  }
  manifest["tensors"] = std::move(table);

  const std::string manifest_str = manifest.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, 5);
  detail_ckpt::write_u32_le(f, static_cast<std::uint32_t>(manifest_str.size()));
  f.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  for (const ad::Tensor& p : params)
    f.write(reinterpret_cast<const char*>(p.value().data()),
            static_cast<std::streamsize>(p.numel() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Seq2SeqModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::memcmp(magic, kCheckpointMagic, 5) != 0)
    throw std::runtime_error("not a GPVS1 checkpoint: " + path);
  const std::uint32_t mlen = detail_ckpt::read_u32_le(f);
  std::string manifest_str(mlen, '\0');
  f.read(manifest_str.data(), mlen);
  if (!f) throw std::runtime_error("truncated checkpoint manifest: " + path);
  const nlohmann::json manifest = nlohmann::json::parse(manifest_str);
  if (manifest.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version in " + path);

  ModelConfig cfg;
  cfg.vocab_size = manifest.at("V").get<std::size_t>();
  cfg.embed_dim = manifest.at("E").get<std::size_t>();
  cfg.hidden_dim = manifest.at("H").get<std::size_t>();
  cfg.latent_dim = manifest.at("D").get<std::size_t>();
  cfg.variant = variant_from_string(manifest.at("variant").get<std::string>());
  cfg.projection = manifest.value("projection", false);
  if (!manifest.at("gp_spec").is_null()) cfg.gp = gp_spec_from_json(manifest.at("gp_spec"));

  Seq2SeqModel model = Seq2SeqModel::init(cfg, 0);
  std::vector<char> payload((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
  const nlohmann::json& table = manifest.at("tensors");
  std::vector<ad::Tensor> params = model.params();
  for (ad::Tensor& p : params) {
    if (!table.contains(p.name()))
      throw std::runtime_error("checkpoint missing tensor '" + p.name() + "': " + path);
    const nlohmann::json& entry = table.at(p.name());
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != p.shape())
      throw std::runtime_error("checkpoint tensor '" + p.name() + "' has shape mismatch");
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t bytes = p.numel() * sizeof(double);
    if (offset + bytes > payload.size())
      throw std::runtime_error("checkpoint payload truncated at tensor '" + p.name() + "'");
    std::memcpy(p.value_mut().data(), payload.data() + offset, bytes);
  }
  return model;
}

}  // namespace gpvs
