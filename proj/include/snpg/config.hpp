#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "snpg/dataset.hpp"
#include "snpg/trainer.hpp"

namespace snpg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PathsConfig {
  std::string dataset = "data";
  std::string run_dir = "run";
  std::string checkpoint;        // embed: weights to load
  std::string output;            // embed: dump to write
  std::string sequence;          // sample: sequence directory
  std::string probe, gallery;    // eval: embedding dumps
};

struct EmbedConfig {
  std::vector<int> sequences;  // sequence ids to embed; empty means all
};

struct EvalConfig {
  bool exclude_self = true;  // skip gallery entries with the probe's own key
};

// Everything a subcommand may read. JSON layout:
//   {"synth":{}, "sampler":{}, "backbone":{}, "head":{}, "loss":{},
//    "optimizer":{}, "train":{}, "paths":{}, "embed":{}, "eval":{}}
struct RunConfig {
  SynthSpec synth;
  TrainConfig train;
  PathsConfig paths;
  EmbedConfig embed;
  EvalConfig eval;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::ordered_json& j);

// Training subset of the layout above (no synth/paths/embed/eval).
nlohmann::ordered_json train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

// Recursively overlays `patch` onto `base`; a key absent from `base` is an
// error naming its dotted path.
void merge_strict(nlohmann::ordered_json& base, const nlohmann::ordered_json& patch,
                  const std::string& where = "");

// "--a.b=value" (leading dashes optional). The value is parsed as a JSON
// literal and falls back to a plain string.
void apply_override(nlohmann::ordered_json& cfg, const std::string& arg);

// Defaults, then the optional file, then overrides in order. `resolved`
// receives the final JSON.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides,
                         nlohmann::ordered_json* resolved = nullptr);

}  // namespace snpg
