#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "criteria.hpp"

using namespace snpg::acceptance;

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the snippet gait pipeline"};
  std::vector<int> only;
  std::string work_dir = "acceptance_runs";
  app.add_option("--only", only, "Criterion numbers to run (default: all)")->delimiter(',');
  app.add_option("--work-dir", work_dir, "Directory for the desk-scale training runs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"hierarchical max identity", hierarchical_max_identity},
      {"within-snippet permutation invariance", snippet_permutation_invariance},
      {"sampling contracts", sampling_contracts},
      {"loss oracle equivalence", loss_oracle_equivalence},
      {"inference independence", inference_independence},
      {"desk-scale learning", [&] { return desk_learning(work_dir); }},
      {"paper-scale shape", paper_scale_shape},
      {"metric oracles", metric_oracles},
  };
  const std::set<int> selected(only.begin(), only.end());
  bool all = true;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s: %s (%.1fs) %s\n", id, criteria[i].first.c_str(),
                v.pass ? "PASS" : "FAIL", s, v.detail.c_str());
    std::fflush(stdout);
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
