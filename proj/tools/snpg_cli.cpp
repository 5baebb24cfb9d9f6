// Command-line driver: synth, sample, train, embed, eval, gradcheck.
//
// Every subcommand accepts --config FILE and dotted overrides such as
// --sampler.L=16 or --backbone.blocks=[1,4,4,1].

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "snpg/config.hpp"
#include "snpg/dataset.hpp"
#include "snpg/eval.hpp"
#include "snpg/gradcheck.hpp"
#include "snpg/sampler.hpp"
#include "snpg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace snpg;

namespace {

struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<SilhouetteSequence> filter_sequences(const std::vector<SilhouetteSequence>& data,
                                                 const std::vector<int>& ids) {
  std::vector<SilhouetteSequence> out;
  for (const auto& s : data) {
    if (ids.empty() || std::find(ids.begin(), ids.end(), s.sequence_id) != ids.end()) {
      out.push_back(s);
    }
  }
  return out;
}

int cmd_synth(const RunConfig& cfg) {
  const auto data = synth_dataset(cfg.synth);
  save_dataset(cfg.paths.dataset, data);
  ordered_json j{{"dataset", cfg.paths.dataset}, {"sequences", data.size()}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_sample(const RunConfig& cfg, const std::string& seq_dir, bool infer) {
  const std::string dir = seq_dir.empty() ? cfg.paths.sequence : seq_dir;
  if (dir.empty()) throw CommandError("sample needs a sequence directory");
  const SilhouetteSequence seq = load_sequence(dir);
  const int len = static_cast<int>(seq.length());
  const SamplerConfig& s = cfg.train.sampler;
  s.validate();
  SnippetPlan plan;
  if (infer) {
    plan = plan_infer(partition_infer(len, s.L));
  } else {
    Rng rng = make_stream(s.seed);
    plan = sample_snippets_train(partition_train(len, s, rng), s, rng);
  }
  ordered_json j = plan_to_json(plan);
  j["sequence_length"] = len;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const ordered_json& resolved, bool resume) {
  const fs::path run_dir = cfg.paths.run_dir;
  if (!resume && fs::exists(run_dir) && !fs::is_empty(run_dir)) {
    throw CommandError("run directory " + run_dir.string() + " exists; pass --resume to continue it");
  }
  const auto data = load_dataset(cfg.paths.dataset);
  FitOptions opts;
  opts.run_dir = run_dir;
  opts.resume = resume;
  opts.resolved_config = resolved;
  const int every = std::max(1, cfg.train.steps / 50);
  opts.on_step = [&](int step, double lr, const LossReport& r) {
    if (step % every == 0 || step == cfg.train.steps) {
      std::fprintf(stderr, "step %d/%d lr %.4g loss %.5f tp %.4f ce %.4f\n", step,
                   cfg.train.steps, lr, r.mean.all, r.mean.tp, r.mean.ce);
    }
  };
  const FitResult res = fit(data, cfg.train, opts);
  ordered_json j{{"run_dir", run_dir.string()},
                 {"checkpoint", (run_dir / checkpoint_name(cfg.train.steps)).string()},
                 {"start_step", res.start_step},
                 {"steps", cfg.train.steps},
                 {"final_loss", res.losses.empty() ? 0.0 : res.losses.back()}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_embed(const RunConfig& cfg) {
  if (cfg.paths.checkpoint.empty()) throw CommandError("embed needs --paths.checkpoint");
  if (cfg.paths.output.empty()) throw CommandError("embed needs --paths.output");
  if (cfg.train.head.num_classes < 1) {
    throw CommandError("embed needs head.num_classes; pass the run's config.json via --config");
  }
  auto model = load_model(cfg.paths.checkpoint, cfg.train);
  const auto data = filter_sequences(load_dataset(cfg.paths.dataset), cfg.embed.sequences);
  std::vector<const SilhouetteSequence*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  const EmbeddingSet set = embed_sequences(*model, ptrs, cfg.train.sampler.L);
  write_embeddings(cfg.paths.output, set);
  ordered_json j{{"output", cfg.paths.output}, {"entries", set.size()}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::string probe, std::string gallery) {
  if (probe.empty()) probe = cfg.paths.probe;
  if (gallery.empty()) gallery = cfg.paths.gallery;
  if (probe.empty() || gallery.empty()) throw CommandError("eval needs probe and gallery dumps");
  const RetrievalResult r =
      evaluate(read_embeddings(probe), read_embeddings(gallery), cfg.eval.exclude_self);
  std::cout << r.to_json().dump() << '\n';
  return 0;
}

int cmd_gradcheck() {
  const auto results = run_gradcheck();
  const ordered_json j = gradcheck_json(results);
  std::cout << j.dump(2) << '\n';
  if (!j["pass"].get<bool>()) {
    std::cerr << ordered_json{{"error", "gradient check failed"}, {"command", "gradcheck"}}.dump()
              << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Snippet-based gait recognition"};
  app.require_subcommand(1);
  std::string config_file;
  app.add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Render the synthetic silhouette dataset");
  auto* sample = app.add_subcommand("sample", "Print a snippet plan for one sequence");
  std::string seq_dir;
  bool infer = false;
  sample->add_option("sequence", seq_dir, "Sequence directory of PGM frames");
  sample->add_flag("--infer", infer, "Print the inference plan instead of a training draw");
  auto* train = app.add_subcommand("train", "Train a model into paths.run_dir");
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the latest checkpoint");
  auto* embed = app.add_subcommand("embed", "Write sequence embeddings as JSON lines");
  auto* eval = app.add_subcommand("eval", "Retrieval metrics of probe vs gallery dumps");
  std::string probe, gallery;
  eval->add_option("probe", probe, "Probe embedding dump");
  eval->add_option("gallery", gallery, "Gallery embedding dump");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");

  for (auto* sub : {synth, sample, train, embed, eval, gradcheck}) {
    sub->allow_extras();
    sub->add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
  }

  std::string command = "snpg";
  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    command = sub->get_name();
    std::vector<std::string> overrides = sub->remaining();
    ordered_json resolved;
    const RunConfig cfg = resolve_config(
        config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), overrides, &resolved);
    if (sub == synth) return cmd_synth(cfg);
    if (sub == sample) return cmd_sample(cfg, seq_dir, infer);
    if (sub == train) return cmd_train(cfg, resolved, resume);
    if (sub == embed) return cmd_embed(cfg);
    if (sub == eval) return cmd_eval(cfg, probe, gallery);
    if (sub == gradcheck) return cmd_gradcheck();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << ordered_json{{"error", e.what()}, {"command", command}, {"kind", "usage"}}.dump()
              << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << ordered_json{{"error", e.what()}, {"command", command}}.dump() << '\n';
    return 1;
  }
  return 1;
}
