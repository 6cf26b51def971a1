#pragma once

// "SPM1" model file:
//   magic "SPM1", u32 format version
//   config: u32 input_dim, 7 x u32 layer dims, u32 attention_dim,
//           5 x (u32 count, count x i32 offsets), u32 variant tag,
//           u32 n_speakers, u64 seed
//   every parameter tensor in ModelParams::visit order, float32 row-major
// All integers and floats little-endian.

#include "vfrpool/binary_io.hpp"
#include "vfrpool/network.hpp"

#include <cstdio>
#include <filesystem>
#include <string>

namespace vfrpool {

inline constexpr std::uint32_t kModelFormatVersion = 1;

template <typename S>
void save_model(std::ostream& os, const Model<S>& model) {
  const ModelConfig& cfg = model.config;
  os.write("SPM1", 4);
  io::put_u32(os, kModelFormatVersion);
  io::put_u32(os, static_cast<std::uint32_t>(cfg.input_dim));
  for (int d : cfg.layer_dims) io::put_u32(os, static_cast<std::uint32_t>(d));
  io::put_u32(os, static_cast<std::uint32_t>(cfg.attention_dim));
  for (const auto& ctx : cfg.contexts) {
    io::put_u32(os, static_cast<std::uint32_t>(ctx.size()));
    for (int o : ctx) io::put_i32(os, o);
  }
  io::put_u32(os, static_cast<std::uint32_t>(cfg.variant));
  io::put_u32(os, static_cast<std::uint32_t>(cfg.n_speakers));
  io::put_u64(os, cfg.seed);
  model.params.visit([&](std::string_view, const Mat<S>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) io::put_f32(os, static_cast<float>(m(r, c)));
    }
  });
}

/// Writes through a temporary file and renames, so a crash mid-write never
/// leaves a truncated checkpoint behind.
template <typename S>
void save_model(const std::string& path, const Model<S>& model) {
  const std::string tmp = path + ".tmp";
  {
    auto os = io::open_out(tmp);
    save_model(os, model);
    if (!os) throw Error(ErrorKind::IoError, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

template <typename S>
Model<S> load_model(std::istream& is) {
  constexpr auto bad = ErrorKind::MalformedHeader;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "SPM1") throw Error(bad, "missing SPM1 magic");
  const std::uint32_t version = io::get_u32(is, bad);
  if (version != kModelFormatVersion) throw Error(bad, "unsupported model format version " + std::to_string(version));

  ModelConfig cfg;
  cfg.input_dim = static_cast<int>(io::get_u32(is, bad));
  for (int& d : cfg.layer_dims) d = static_cast<int>(io::get_u32(is, bad));
  cfg.attention_dim = static_cast<int>(io::get_u32(is, bad));
  for (auto& ctx : cfg.contexts) {
    const std::uint32_t n = io::get_u32(is, bad);
    if (n > 64) throw Error(bad, "implausible context size");
    ctx.resize(n);
    for (int& o : ctx) o = io::get_i32(is, bad);
  }
  const std::uint32_t tag = io::get_u32(is, bad);
  if (tag >= std::size(kAllVariants)) throw Error(ErrorKind::UnknownVariant, "variant tag " + std::to_string(tag));
  cfg.variant = static_cast<Variant>(tag);
  cfg.n_speakers = static_cast<int>(io::get_u32(is, bad));
  cfg.seed = io::get_u64(is, bad);
  validate(cfg);

  Model<S> model{cfg, zero_params<S>(cfg)};
  model.params.visit([&](std::string_view, Mat<S>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(io::get_f32(is, bad));
    }
  });
  return model;
}

template <typename S>
Model<S> load_model(const std::string& path) {
  auto is = io::open_in(path);
  return load_model<S>(is);
}

}  // namespace vfrpool
