// Copyright 2026 The flowvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Run configuration for the command-line tool: every hyperparameter in one
// JSON tree, resolved as defaults < config file < dotted overrides.

#ifndef FLOWVOC_CONFIG_HPP_
#define FLOWVOC_CONFIG_HPP_

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "flowvoc/distill.hpp"
#include "flowvoc/eval.hpp"
#include "flowvoc/flow.hpp"
#include "json.hpp"

namespace flowvoc {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MelConfig, n_mels, f_min, f_max, n_fft, win_length,
                                                hop_length, sample_rate, log_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StftConfig, fft_sizes, hop_sizes, win_lengths,
                                                mag_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, lambda0, lambda1, time_weight_cap)

struct PathsConfig {
  std::string manifest;
  std::string checkpoint_dir = "checkpoints";
  std::string log_dir = "logs";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PathsConfig, manifest, checkpoint_dir, log_dir)

struct EvalSettings {
  int n_steps = 6;
  int rtf_repeats = 3;
  /// Frames this far below the loudest frame count as silent.
  double silence_gate_db = 40.0;
  /// Clips with a larger silent share are skipped; 1 keeps everything.
  double max_silence_ratio = 1.0;
  /// External metric commands by metric name; environment variables fill gaps.
  std::map<std::string, std::string> tools;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalSettings, n_steps, rtf_repeats, silence_gate_db,
                                                max_silence_ratio, tools)

struct RunConfig {
  MelConfig mel;
  NetworkConfig network = NetworkConfig::reference();
  TrainConfig train;
  DistillConfig distill;
  StftConfig stft;
  LossWeights loss;
  bool classic_stft = false;
  PathsConfig paths;
  EvalSettings eval;
  std::uint64_t seed = 0;
  long checkpoint_every = 1000;
  int keep_last = 3;

  void validate() const {
    mel.validate();
    network.validate();
    train.validate();
    distill.validate();
    stft.validate();
    loss.validate();
    if (mel.hop_length != network.hop())
      throw InvariantError("RunConfig: mel.hop_length " + std::to_string(mel.hop_length) +
                           " differs from the network upsampling product " +
                           std::to_string(network.hop()));
    if (mel.n_mels != network.n_mels) throw InvariantError("RunConfig: mel.n_mels differs from network.n_mels");
    if (checkpoint_every < 1 || keep_last < 1)
      throw InvariantError("RunConfig: checkpoint_every and keep_last must be positive");
    if (eval.n_steps < 1 || eval.rtf_repeats < 1) throw InvariantError("RunConfig: bad eval settings");
  }

  LossSettings loss_settings() const { return {loss, stft, mel, classic_stft}; }
  /// The top-level seed is the only seed source.
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }
  DistillConfig distill_config() const {
    DistillConfig d = distill;
    d.seed = seed;
    return d;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"mel", c.mel},
                     {"network", c.network},
                     {"train", c.train},
                     {"distill", c.distill},
                     {"stft", c.stft},
                     {"loss", c.loss},
                     {"classic_stft", c.classic_stft},
                     {"paths", c.paths},
                     {"eval", c.eval},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"keep_last", c.keep_last}};
  j["train"].erase("seed");
  j["distill"].erase("seed");
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d;
  c.mel = j.value("mel", d.mel);
  c.network = j.value("network", d.network);
  c.train = j.value("train", d.train);
  c.distill = j.value("distill", d.distill);
  c.stft = j.value("stft", d.stft);
  c.loss = j.value("loss", d.loss);
  c.classic_stft = j.value("classic_stft", d.classic_stft);
  c.paths = j.value("paths", d.paths);
  c.eval = j.value("eval", d.eval);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.keep_last = j.value("keep_last", d.keep_last);
}

namespace detail {

// Every key of `patch` must already exist in `base` (maps under eval.tools excepted).
inline void check_known_keys(const nlohmann::json& base, const nlohmann::json& patch,
                             const std::string& prefix) {
  if (!patch.is_object()) return;
  for (const auto& [k, v] : patch.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (key.rfind("eval.tools.", 0) == 0) continue;
    if (!base.is_object() || !base.contains(k)) throw InvariantError("unknown config key '" + key + "'");
    if (base[k].is_object()) check_known_keys(base[k], v, key);
  }
}

inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;  // bare strings need no quotes
  }
}

}  // namespace detail

/// Applies "a.b.c=value" overrides to a config tree. Values parse as JSON
/// when possible and as plain strings otherwise.
inline void apply_overrides(nlohmann::json& tree, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw InvariantError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    if (key == "train.seed" || key == "distill.seed")
      throw InvariantError("override '" + key + "': use the top-level 'seed'");
    nlohmann::json* node = &tree;
    std::size_t start = 0;
    const bool free_form = key.rfind("eval.tools.", 0) == 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        if (!free_form && (!node->is_object() || !node->contains(part)))
          throw InvariantError("unknown config key '" + key + "'");
        (*node)[part] = detail::parse_override_value(o.substr(eq + 1));
        break;
      }
      if (!node->is_object() || !node->contains(part)) throw InvariantError("unknown config key '" + key + "'");
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

/// Resolves defaults < file (when non-empty) < overrides.
inline RunConfig resolve_config(const std::filesystem::path& file,
                                const std::vector<std::string>& overrides) {
  nlohmann::json tree = RunConfig{};
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IngestionError(file.string() + ": config file not found");
    nlohmann::json patch;
    try {
      patch = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw IngestionError(file.string() + ": " + e.what());
    }
    if (patch.contains("train") && patch["train"].contains("seed"))
      throw InvariantError("config: train.seed is not settable; use the top-level 'seed'");
    if (patch.contains("distill") && patch["distill"].contains("seed"))
      throw InvariantError("config: distill.seed is not settable; use the top-level 'seed'");
    detail::check_known_keys(tree, patch, "");
    tree.merge_patch(patch);
  }
  apply_overrides(tree, overrides);
  RunConfig cfg;
  try {
    cfg = tree.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw InvariantError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline void write_config(const std::filesystem::path& path, const RunConfig& cfg) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IngestionError(tmp + ": cannot open for writing");
    out << nlohmann::json(cfg).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace flowvoc

#endif  // FLOWVOC_CONFIG_HPP_
