#include "snpg/config.hpp"

#include <fstream>

namespace snpg {

using nlohmann::ordered_json;

namespace {

ordered_json sampler_json(const SamplerConfig& s) {
  return {{"L", s.L}, {"M", s.M}, {"N", s.N}, {"seed", s.seed}};
}

ordered_json backbone_json(const BackboneConfig& b) {
  return {{"blocks", b.blocks},       {"channels", b.channels},   {"strides", b.strides},
          {"gathering", b.gathering}, {"smoothing", b.smoothing}, {"residual", b.residual},
          {"smoothing_norm", b.smoothing_norm}};
}

ordered_json head_json(const HeadConfig& h) {
  return {{"num_parts", h.num_parts},
          {"part_dim", h.part_dim},
          {"num_classes", h.num_classes},
          {"share_weights", h.share_weights}};
}

ordered_json loss_json(const LossConfig& l) {
  return {{"margin", l.margin}, {"alpha", l.alpha}, {"self_positive", l.self_positive}};
}

ordered_json optimizer_json(const OptimizerConfig& o) {
  return {{"lr", o.lr},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"milestones", o.milestones},
          {"decay", o.decay}};
}

ordered_json train_json(const TrainConfig& t) {
  return {{"U", t.U},
          {"V", t.V},
          {"steps", t.steps},
          {"checkpoint_interval", t.checkpoint_interval},
          {"seed", t.seed},
          {"sequences", t.sequences}};
}

// Reads every field from `j`, which must already hold the full layout.
TrainConfig read_train(const ordered_json& j) {
  TrainConfig t;
  const auto& s = j.at("sampler");
  t.sampler.L = s.at("L");
  t.sampler.M = s.at("M");
  t.sampler.N = s.at("N");
  t.sampler.seed = s.at("seed");
  const auto& b = j.at("backbone");
  t.backbone.blocks = b.at("blocks").get<std::vector<int>>();
  t.backbone.channels = b.at("channels").get<std::vector<int>>();
  t.backbone.strides = b.at("strides").get<std::vector<int>>();
  t.backbone.gathering = b.at("gathering");
  t.backbone.smoothing = b.at("smoothing");
  t.backbone.residual = b.at("residual");
  t.backbone.smoothing_norm = b.at("smoothing_norm");
  const auto& h = j.at("head");
  t.head.num_parts = h.at("num_parts");
  t.head.part_dim = h.at("part_dim");
  t.head.num_classes = h.at("num_classes");
  t.head.share_weights = h.at("share_weights");
  const auto& l = j.at("loss");
  t.loss.margin = l.at("margin");
  t.loss.alpha = l.at("alpha");
  t.loss.self_positive = l.at("self_positive");
  const auto& o = j.at("optimizer");
  t.optimizer.lr = o.at("lr");
  t.optimizer.momentum = o.at("momentum");
  t.optimizer.weight_decay = o.at("weight_decay");
  t.optimizer.milestones = o.at("milestones").get<std::vector<double>>();
  t.optimizer.decay = o.at("decay");
  const auto& tr = j.at("train");
  t.U = tr.at("U");
  t.V = tr.at("V");
  t.steps = tr.at("steps");
  t.checkpoint_interval = tr.at("checkpoint_interval");
  t.seed = tr.at("seed");
  t.sequences = tr.at("sequences").get<std::vector<int>>();
  return t;
}

template <typename F>
auto checked(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

ordered_json train_config_json(const TrainConfig& cfg) {
  ordered_json j;
  j["sampler"] = sampler_json(cfg.sampler);
  j["backbone"] = backbone_json(cfg.backbone);
  j["head"] = head_json(cfg.head);
  j["loss"] = loss_json(cfg.loss);
  j["optimizer"] = optimizer_json(cfg.optimizer);
  j["train"] = train_json(cfg);
  return j;
}

TrainConfig train_config_from_json(const ordered_json& j) {
  ordered_json full = train_config_json(TrainConfig{});
  merge_strict(full, j);
  return checked("config", [&] { return read_train(full); });
}

ordered_json to_json(const RunConfig& cfg) {
  ordered_json j;
  j["synth"] = {{"num_subjects", cfg.synth.num_subjects},
                {"sequences_per_subject", cfg.synth.sequences_per_subject},
                {"frames_per_sequence", cfg.synth.frames_per_sequence},
                {"height", cfg.synth.height},
                {"width", cfg.synth.width},
                {"seed", cfg.synth.seed},
                {"noise_level", cfg.synth.noise_level}};
  const ordered_json train = train_config_json(cfg.train);
  for (auto it = train.begin(); it != train.end(); ++it) j[it.key()] = it.value();
  j["paths"] = {{"dataset", cfg.paths.dataset},       {"run_dir", cfg.paths.run_dir},
                {"checkpoint", cfg.paths.checkpoint}, {"output", cfg.paths.output},
                {"sequence", cfg.paths.sequence},     {"probe", cfg.paths.probe},
                {"gallery", cfg.paths.gallery}};
  j["embed"] = {{"sequences", cfg.embed.sequences}};
  j["eval"] = {{"exclude_self", cfg.eval.exclude_self}};
  return j;
}

RunConfig run_config_from_json(const ordered_json& patch) {
  ordered_json j = to_json(RunConfig{});
  merge_strict(j, patch);
  return checked("config", [&] {
    RunConfig cfg;
    const auto& s = j.at("synth");
    cfg.synth.num_subjects = s.at("num_subjects");
    cfg.synth.sequences_per_subject = s.at("sequences_per_subject");
    cfg.synth.frames_per_sequence = s.at("frames_per_sequence");
    cfg.synth.height = s.at("height");
    cfg.synth.width = s.at("width");
    cfg.synth.seed = s.at("seed");
    cfg.synth.noise_level = s.at("noise_level");
    cfg.train = read_train(j);
    const auto& p = j.at("paths");
    cfg.paths.dataset = p.at("dataset");
    cfg.paths.run_dir = p.at("run_dir");
    cfg.paths.checkpoint = p.at("checkpoint");
    cfg.paths.output = p.at("output");
    cfg.paths.sequence = p.at("sequence");
    cfg.paths.probe = p.at("probe");
    cfg.paths.gallery = p.at("gallery");
    cfg.embed.sequences = j.at("embed").at("sequences").get<std::vector<int>>();
    cfg.eval.exclude_self = j.at("eval").at("exclude_self");
    return cfg;
  });
}

void merge_strict(ordered_json& base, const ordered_json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config" + (where.empty() ? "" : " at " + where) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.is_object() || !base.contains(it.key())) throw ConfigError("unknown config key: " + path);
    ordered_json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

void apply_override(ordered_json& cfg, const std::string& arg) {
  std::string s = arg;
  while (!s.empty() && s.front() == '-') s.erase(s.begin());
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must be --key=value: " + arg);
  const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
  ordered_json value = ordered_json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  // Build the nested patch so merge_strict reports unknown keys uniformly.
  ordered_json patch = value;
  size_t end = key.size();
  while (true) {
    const size_t dot = key.rfind('.', end - 1);
    const size_t begin = dot == std::string::npos ? 0 : dot + 1;
    const std::string part = key.substr(begin, end - begin);
    if (part.empty()) throw ConfigError("malformed override key: " + key);
    patch = ordered_json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_strict(cfg, patch);
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides, ordered_json* resolved) {
  ordered_json j = to_json(RunConfig{});
  if (file) {
    std::ifstream is(*file);
    if (!is) throw ConfigError("cannot open config file " + file->string());
    ordered_json patch = ordered_json::parse(is, nullptr, false);
    if (patch.is_discarded()) throw ConfigError("config file is not valid JSON: " + file->string());
    merge_strict(j, patch);
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig cfg = run_config_from_json(j);
  if (resolved) *resolved = std::move(j);
  return cfg;
}

}  // namespace snpg
