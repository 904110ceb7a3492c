// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Checkpoint file layout:
//   "FLOWVOC\0" | u32 version | u64 header bytes | JSON header | f32 payload
// The header lists every tensor (group, name, rows, cols) in payload order.

#ifndef FLOWVOC_CHECKPOINT_HPP_
#define FLOWVOC_CHECKPOINT_HPP_

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowvoc/network.hpp"
#include "flowvoc/nn/optim.hpp"

namespace flowvoc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Grid<float> data;
};

using TensorSet = std::vector<NamedTensor>;

struct Checkpoint {
  NetworkConfig network;
  long step = 0;
  bool distilled = false;
  /// Resolved run configuration and anything else worth recording.
  nlohmann::json meta = nlohmann::json::object();
  TensorSet params;
  /// Optional optimizer state (empty when absent).
  long optimizer_step = 0;
  TensorSet adam_m, adam_v;
  /// Optional EMA shadow parameters (distillation).
  TensorSet ema;
};

template <class T>
TensorSet capture_params(const VocoderNet<T>& net) {
  TensorSet out;
  net.visit([&](const nn::Param<T>& p) { out.push_back({p.name, p.value.template cast<float>()}); });
  return out;
}

/// Copies `params` into `net`. Names and shapes must match exactly.
template <class T>
void restore_params(VocoderNet<T>& net, const TensorSet& params) {
  std::size_t i = 0;
  net.visit([&](nn::Param<T>& p) {
    if (i >= params.size()) throw ShapeError("checkpoint has fewer tensors than the network");
    const NamedTensor& src = params[i++];
    if (src.name != p.name || src.data.rows() != p.value.rows() ||
        src.data.cols() != p.value.cols())
      throw ShapeError("checkpoint tensor " + src.name + " does not match network parameter " +
                       p.name);
    p.value = src.data.template cast<T>();
  });
  if (i != params.size()) throw ShapeError("checkpoint has more tensors than the network");
}

template <class T>
void capture_optimizer(const nn::AdamW<T>& opt, const VocoderNet<T>& net, Checkpoint& ck) {
  ck.optimizer_step = opt.steps_taken();
  ck.adam_m.clear();
  ck.adam_v.clear();
  if (opt.first_moments().empty()) return;
  std::size_t i = 0;
  net.visit([&](const nn::Param<T>& p) {
    ck.adam_m.push_back({p.name, opt.first_moments()[i].template cast<float>()});
    ck.adam_v.push_back({p.name, opt.second_moments()[i].template cast<float>()});
    ++i;
  });
}

template <class T>
void restore_optimizer(nn::AdamW<T>& opt, const Checkpoint& ck) {
  std::vector<Grid<T>> m, v;
  for (const auto& t : ck.adam_m) m.push_back(t.data.template cast<T>());
  for (const auto& t : ck.adam_v) v.push_back(t.data.template cast<T>());
  opt.restore(ck.optimizer_step, std::move(m), std::move(v));
}

namespace detail {

inline constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'V', 'O', 'C', '\0'};

inline void describe(nlohmann::json& list, const char* group, const TensorSet& set) {
  for (const auto& t : set)
    list.push_back({{"group", group}, {"name", t.name}, {"rows", t.data.rows()},
                    {"cols", t.data.cols()}});
}

}  // namespace detail

/// Writes atomically (temporary file, then rename).
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["network"] = ck.network;
  header["step"] = ck.step;
  header["distilled"] = ck.distilled;
  header["meta"] = ck.meta;
  header["optimizer_step"] = ck.optimizer_step;
  nlohmann::json list = nlohmann::json::array();
  detail::describe(list, "param", ck.params);
  detail::describe(list, "adam_m", ck.adam_m);
  detail::describe(list, "adam_v", ck.adam_v);
  detail::describe(list, "ema", ck.ema);
  header["tensors"] = list;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(detail::kMagic, sizeof(detail::kMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const TensorSet* set : {&ck.params, &ck.adam_m, &ck.adam_v, &ck.ema})
      for (const auto& t : *set)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, detail::kMagic, sizeof(magic)) != 0)
    throw IngestionError(path.string() + " is not a flowvoc checkpoint");
  if (version != kCheckpointVersion)
    throw IngestionError(path.string() + ": unsupported checkpoint version " +
                         std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IngestionError(path.string() + ": truncated header");
  const nlohmann::json header = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.network = header.at("network").get<NetworkConfig>();
  ck.step = header.at("step").get<long>();
  ck.distilled = header.at("distilled").get<bool>();
  ck.meta = header.at("meta");
  ck.optimizer_step = header.at("optimizer_step").get<long>();
  std::map<std::string, TensorSet*> groups{
      {"param", &ck.params}, {"adam_m", &ck.adam_m}, {"adam_v", &ck.adam_v}, {"ema", &ck.ema}};
  for (const auto& d : header.at("tensors")) {
    const auto it = groups.find(d.at("group").get<std::string>());
    if (it == groups.end()) throw IngestionError(path.string() + ": unknown tensor group");
    NamedTensor t{d.at("name").get<std::string>(),
                  Grid<float>(d.at("rows").get<Eigen::Index>(), d.at("cols").get<Eigen::Index>())};
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw IngestionError(path.string() + ": truncated payload at " + t.name);
    it->second->push_back(std::move(t));
  }
  return ck;
}

/// Loads the parameters into a network built from `expected`; a differing
/// stored configuration is an error.
template <class T>
VocoderNet<T> network_from_checkpoint(const Checkpoint& ck, const NetworkConfig& expected) {
  if (!(ck.network == expected))
    throw InvariantError("checkpoint network configuration differs from the requested one");
  VocoderNet<T> net(ck.network);
  restore_params(net, ck.params);
  return net;
}

}  // namespace flowvoc

#endif  // FLOWVOC_CHECKPOINT_HPP_
