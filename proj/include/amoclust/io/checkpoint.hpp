#pragma once

// Checkpoint file: "TCPF1" magic, u64 little-endian manifest length, JSON
// manifest, then every parameter as little-endian float32 in manifest order.

#include <amoclust/io/config.hpp>
#include <amoclust/io/dataset_io.hpp>
#include <amoclust/model/cin.hpp>
#include <amoclust/model/pin.hpp>
#include <amoclust/train/trainer.hpp>

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace amoclust::io {

inline constexpr char kMagic[5] = {'T', 'C', 'P', 'F', '1'};
inline constexpr int kFormatVersion = 1;

struct CheckpointInfo {
  RunConfig config;
  long step = 0;
  std::string precision = "float64";
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T> || std::is_same_v<T, float>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const char* p) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <class F>
void visit_model(Model& m, F&& f) {
  m.pin.visit(f);
  m.cin.visit(f);
}

}  // namespace detail

inline std::string serialize_checkpoint(Model& m, const CheckpointInfo& info) {
  json params = json::array();
  std::string blob;
  std::uint64_t offset = 0;
  detail::visit_model(m, [&](const std::string& name, Tensor& t) {
    params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    for (double v : t.data()) detail::put_le(blob, static_cast<float>(v));
    offset += t.numel() * sizeof(float);
  });
  json manifest = {{"format_version", kFormatVersion},
                   {"precision", info.precision},
                   {"stored_precision", "float32"},
                   {"config", to_json(info.config)},
                   {"seed", info.config.train.seed},
                   {"step", info.step},
                   {"pin_loss", to_string(info.config.train.pin_loss_kind)},
                   {"cin_loss", to_string(info.config.train.cin_loss_kind)},
                   {"cin_hidden", m.cin.hidden},
                   {"params", params},
                   {"blob_bytes", offset}};
  const std::string text = manifest.dump();
  std::string out(kMagic, sizeof(kMagic));
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  out += blob;
  return out;
}

inline void save_checkpoint(const fs::path& path, Model& m, const CheckpointInfo& info) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, serialize_checkpoint(m, info));
}

struct LoadedCheckpoint {
  Model model;
  CheckpointInfo info;
  json manifest;
};

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  constexpr std::size_t head = sizeof(kMagic) + sizeof(std::uint64_t);
  if (bytes.size() < head || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError(source + ": not a checkpoint (bad magic)");
  }
  const auto len = detail::get_le<std::uint64_t>(bytes.data() + sizeof(kMagic));
  if (len > bytes.size() - head) throw IoError(source + ": truncated manifest");
  LoadedCheckpoint out;
  try {
    out.manifest = json::parse(bytes.substr(head, len));
  } catch (const json::exception& e) {
    throw IoError(source + ": corrupt manifest: " + e.what());
  }
  const json& mf = out.manifest;
  const int version = mf.value("format_version", -1);
  if (version != kFormatVersion) {
    throw IoError(source + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kFormatVersion) + ")");
  }
  try {
    out.info.config = parse_run_config(mf.at("config"));
  } catch (const ConfigError& e) {
    throw IoError(source + ": manifest config rejected: " + e.what());
  }
  out.info.step = mf.value("step", 0L);
  out.info.precision = mf.value("precision", std::string("float64"));

  Rng rng(0);
  out.model.pin = PinParams::init(out.info.config.model, rng);
  out.model.cin = CinParams::init(out.info.config.model.k_max, cin_head_for(out.info.config.train.cin_loss_kind), rng,
                                  mf.value("cin_hidden", std::size_t{256}));
  const json& params = mf.at("params");
  const std::size_t blob_start = head + len;
  const std::size_t blob_len = bytes.size() - blob_start;
  std::size_t idx = 0;
  std::size_t expected = 0;
  detail::visit_model(out.model, [&](const std::string& name, Tensor& t) {
    if (idx >= params.size()) throw IoError(source + ": manifest lacks parameter " + name);
    const json& e = params[idx++];
    if (e.at("name").get<std::string>() != name || e.at("shape").get<ad::Shape>() != t.shape()) {
      throw IoError(source + ": parameter " + e.at("name").get<std::string>() + " does not match model layout at " +
                    name + " " + ad::shape_str(t.shape()));
    }
    const auto off = e.at("offset").get<std::size_t>();
    if (off != expected || off + t.numel() * sizeof(float) > blob_len) {
      throw IoError(source + ": bad offset for " + name);
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<double>(detail::get_le<float>(bytes.data() + blob_start + off + i * sizeof(float)));
    expected = off + t.numel() * sizeof(float);
  });
  if (idx != params.size()) throw IoError(source + ": manifest lists parameters the model does not have");
  if (expected != blob_len) throw IoError(source + ": blob length " + std::to_string(blob_len) + " != " + std::to_string(expected));
  return out;
}

inline LoadedCheckpoint load_checkpoint(const fs::path& path) { return parse_checkpoint(read_text(path), path.string()); }

}  // namespace amoclust::io
