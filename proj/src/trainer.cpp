#include "snpg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "snpg/checkpoint.hpp"
#include "snpg/config.hpp"

namespace snpg {

void OptimizerConfig::validate() const {
  if (!(lr >= 0)) throw std::invalid_argument("optimizer: lr must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("optimizer: momentum in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  if (!(decay > 0)) throw std::invalid_argument("optimizer: decay must be > 0");
  for (double m : milestones) {
    if (!(m >= 0 && m <= 1)) throw std::invalid_argument("optimizer: milestones are fractions in [0, 1]");
  }
}

double OptimizerConfig::lr_at(int step, int total_steps) const {
  double out = lr;
  for (double m : milestones) {
    if (step >= static_cast<int>(std::lround(m * total_steps))) out *= decay;
  }
  return out;
}

void TrainConfig::validate() const {
  if (U < 2) throw std::invalid_argument("train: U must be >= 2");
  if (V < 1) throw std::invalid_argument("train: V must be >= 1");
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (checkpoint_interval < 0) throw std::invalid_argument("train: checkpoint_interval must be >= 0");
  sampler.validate();
  backbone.validate();
  HeadConfig h = head;
  if (h.num_classes == 0) h.num_classes = 1;  // resolved from the data in fit
  h.validate();
  loss.validate();
  optimizer.validate();
}

TrainingSet::TrainingSet(const std::vector<SilhouetteSequence>& data,
                         const std::vector<int>& sequence_ids) {
  const std::set<int> keep(sequence_ids.begin(), sequence_ids.end());
  std::map<int, std::vector<const SilhouetteSequence*>> grouped;
  for (const auto& s : data) {
    if (keep.empty() || keep.count(s.sequence_id)) grouped[s.subject_id].push_back(&s);
  }
  for (auto& [subject, seqs] : grouped) {
    subjects_.push_back(subject);
    by_class_.push_back(std::move(seqs));
  }
}

TrainBatch make_batch(const TrainingSet& data, const TrainConfig& cfg, Rng& rng) {
  if (data.num_classes() < cfg.U) {
    throw std::invalid_argument("make_batch: dataset has " + std::to_string(data.num_classes()) +
                                " subjects, batch needs U=" + std::to_string(cfg.U));
  }
  std::vector<int> classes(static_cast<size_t>(data.num_classes()));
  for (size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int>(i);
  for (int i = 0; i < cfg.U; ++i) {
    const int j = uniform_int(rng, i, data.num_classes() - 1);
    std::swap(classes[static_cast<size_t>(i)], classes[static_cast<size_t>(j)]);
  }
  TrainBatch batch;
  for (int u = 0; u < cfg.U; ++u) {
    const int cls = classes[static_cast<size_t>(u)];
    const auto& pool = data.sequences(cls);
    const int n = static_cast<int>(pool.size());
    std::vector<int> pick(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pick[static_cast<size_t>(i)] = i;
    if (n >= cfg.V) {
      for (int i = 0; i < cfg.V; ++i) {
        std::swap(pick[static_cast<size_t>(i)], pick[static_cast<size_t>(uniform_int(rng, i, n - 1))]);
      }
      pick.resize(static_cast<size_t>(cfg.V));
    } else {
      pick.resize(static_cast<size_t>(cfg.V));
      for (int& p : pick) p = uniform_int(rng, 0, n - 1);
    }
    for (int p : pick) {
      const SilhouetteSequence* seq = pool[static_cast<size_t>(p)];
      const Partition part = partition_train(static_cast<int>(seq->length()), cfg.sampler, rng);
      SnippetPlan plan = sample_snippets_train(part, cfg.sampler, rng);
      batch.sequences.push_back(seq);
      batch.seq_labels.push_back(cls);
      batch.snippet_labels.insert(batch.snippet_labels.end(), plan.snippets.size(), cls);
      batch.plans.push_back(std::move(plan));
    }
  }
  return batch;
}

void SgdOptimizer::step(ParamStore<float>& store, double lr) {
  const float mom = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const float rate = static_cast<float>(lr);
  for (Parameter<float>* p : store.params()) {
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    NdArray<float>& buf = momentum_.try_emplace(p->name, p->value.shape()).first->second;
    float* w = p->value.data();
    const float* g = p->grad.data();
    float* b = buf.data();
    for (int64_t i = 0; i < buf.size(); ++i) {
      b[i] = mom * b[i] + (g[i] + wd * w[i]);
      w[i] -= rate * b[i];
    }
  }
}

std::vector<NamedTensor> SgdOptimizer::export_tensors() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, buf] : momentum_) out.push_back({"optimizer." + name + ".momentum", buf});
  return out;
}

void SgdOptimizer::import_tensors(const std::vector<NamedTensor>& tensors) {
  const std::string prefix = "optimizer.", suffix = ".momentum";
  momentum_.clear();
  for (const auto& t : tensors) {
    if (t.name.size() <= prefix.size() + suffix.size() || t.name.rfind(prefix, 0) != 0 ||
        t.name.compare(t.name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    momentum_[t.name.substr(prefix.size(), t.name.size() - prefix.size() - suffix.size())] = t.tensor;
  }
}

LossReport train_step(SnippetNet<float>& model, SgdOptimizer& opt, const TrainBatch& batch,
                      const LossConfig& loss, double lr) {
  model.store().zero_grad();
  SnippetBatch<float> sb = assemble_batch<float>(batch.sequences, batch.plans);
  LossReport report;
  {
    Tape<float> tape;
    Var frames = tape.constant(std::move(sb.frames));
    Var fm = model.backbone_forward(tape, frames, sb.snippets, Phase::train);
    HeadOutputs heads = model.heads_forward(tape, fm, sb.snippets, sb.sequences, Phase::train);
    Var total = dual_level_loss(tape, heads, batch.seq_labels, batch.snippet_labels, loss, &report);
    tape.backward(total);
  }
  opt.step(model.store(), lr);
  return report;
}

std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06d.bin", step);
  return buf;
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir) {
  std::optional<std::filesystem::path> best;
  if (!std::filesystem::is_directory(run_dir)) return best;
  for (const auto& e : std::filesystem::directory_iterator(run_dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() == 15 && name.rfind("ckpt_", 0) == 0 && name.ends_with(".bin")) {
      if (!best || name > best->filename().string()) best = e.path();
    }
  }
  return best;
}

std::unique_ptr<SnippetNet<float>> make_model(const TrainConfig& cfg) {
  return std::make_unique<SnippetNet<float>>(cfg.backbone, cfg.head, mix_seed(cfg.seed, 0x1417));
}

std::unique_ptr<SnippetNet<float>> load_model(const std::filesystem::path& checkpoint,
                                              const TrainConfig& cfg) {
  auto model = make_model(cfg);
  model->store().import_tensors(read_checkpoint(checkpoint));
  return model;
}

namespace {

int checkpoint_step(const std::vector<NamedTensor>& tensors) {
  for (const auto& t : tensors) {
    if (t.name == "trainer.step") return static_cast<int>(t.tensor[0]);
  }
  throw std::runtime_error("checkpoint has no trainer.step entry");
}

// Keeps the log lines of steps <= last_step, dropping any written after the
// checkpoint that a resumed run replays.
void truncate_log(const std::filesystem::path& log, int last_step) {
  std::ifstream is(log);
  if (!is) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("step").get<int>() <= last_step) keep.push_back(line);
  }
  is.close();
  std::ofstream os(log, std::ios::trunc);
  for (const auto& l : keep) os << l << '\n';
}

}  // namespace

FitResult fit(const std::vector<SilhouetteSequence>& data, TrainConfig cfg,
              const FitOptions& options) {
  retain_freed_memory();
  const TrainingSet set(data, cfg.sequences);
  if (cfg.head.num_classes == 0) cfg.head.num_classes = set.num_classes();
  if (cfg.head.num_classes != set.num_classes()) {
    throw std::invalid_argument("train: head.num_classes=" + std::to_string(cfg.head.num_classes) +
                                " but the training split has " +
                                std::to_string(set.num_classes()) + " subjects");
  }
  cfg.validate();

  FitResult result;
  result.model = make_model(cfg);
  SgdOptimizer opt(cfg.optimizer);
  const bool write = !options.run_dir.empty();
  const std::filesystem::path log_path = options.run_dir / "log.jsonl";

  if (write) {
    std::filesystem::create_directories(options.run_dir);
    if (options.resume) {
      if (auto ckpt = latest_checkpoint(options.run_dir)) {
        const auto tensors = read_checkpoint(*ckpt);
        result.model->store().import_tensors(tensors);
        opt.import_tensors(tensors);
        result.start_step = checkpoint_step(tensors);
        truncate_log(log_path, result.start_step);
      }
    } else {
      std::filesystem::remove(log_path);
    }
    if (!options.resume || result.start_step == 0) {
      nlohmann::ordered_json stored =
          options.resolved_config ? *options.resolved_config : train_config_json(cfg);
      if (stored.contains("head")) stored["head"]["num_classes"] = cfg.head.num_classes;
      std::ofstream(options.run_dir / "config.json") << stored.dump(2) << '\n';
    }
  } else if (options.resume) {
    throw std::invalid_argument("train: resume needs a run directory");
  }

  auto save = [&](int step) {
    std::vector<NamedTensor> tensors = result.model->store().export_tensors();
    for (auto& t : opt.export_tensors()) tensors.push_back(std::move(t));
    tensors.push_back({"trainer.step", NdArray<float>({1}, static_cast<float>(step))});
    write_checkpoint(options.run_dir / checkpoint_name(step), tensors);
  };

  std::ofstream log;
  if (write) log.open(log_path, std::ios::app);
  for (int step = result.start_step; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::clock_t c0 = std::clock();
    Rng rng = make_stream(cfg.seed, static_cast<uint64_t>(step), 1);
    const TrainBatch batch = make_batch(set, cfg, rng);
    const double lr = cfg.optimizer.lr_at(step, cfg.steps);
    const LossReport report = train_step(*result.model, opt, batch, cfg.loss, lr);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // Summed over all worker threads.
    const double cpu_seconds = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
    result.losses.push_back(report.mean.all);
    if (write) {
      nlohmann::ordered_json line;
      line["step"] = step + 1;
      line["lr"] = lr;
      line["loss"] = report.mean.all;
      line["tp"] = report.mean.tp;
      line["ce"] = report.mean.ce;
      line["tp_snippet"] = report.mean.tp_snippet;
      line["ce_snippet"] = report.mean.ce_snippet;
      line["n_tp"] = report.mean.n_tp;
      line["n_tp_snippet"] = report.mean.n_tp_snippet;
      line["seconds"] = seconds;
      line["cpu_seconds"] = cpu_seconds;
      log << line.dump() << '\n' << std::flush;
      const bool last = step + 1 == cfg.steps;
      if (last || (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0)) {
        save(step + 1);
      }
    }
    if (options.on_step) options.on_step(step + 1, lr, report);
  }
  return result;
}

EmbeddingSet embed_sequences(SnippetNet<float>& model,
                             const std::vector<const SilhouetteSequence*>& seqs, int L) {
  EmbeddingSet set;
  set.entries.resize(seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i) {
    set.entries[i] = {seqs[i]->subject_id, seqs[i]->sequence_id, model.inference_embed(*seqs[i], L)};
  }
  return set;
}

}  // namespace snpg
