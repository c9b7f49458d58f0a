#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coopmcts/mcts.hpp"
#include "coopmcts/scenario.hpp"

namespace coopmcts {

/// One strategy variant of the evaluation grid.
struct CellSpec {
  enum class Kind { kBaseline, kMdn, kMdnStandalone };
  Kind kind = Kind::kBaseline;
  int components = 2;
  Integration integration = Integration::kRoot;
  bool selection = false;

  /// Stable label used in tables, e.g. "baseline", "mdn2-root-sel".
  std::string label() const;
  friend bool operator==(const CellSpec&, const CellSpec&) = default;
};

struct ExperimentSpec {
  std::vector<Scenario> scenarios;
  int runs = 50;
  std::optional<int> baseline_runs;  // defaults to `runs`
  std::vector<int> iterations{200, 500, 1000, 2000, 4000, 8000};
  std::vector<CellSpec> cells;
  std::map<int, std::filesystem::path> weights;  // by component count
  std::uint64_t base_seed = 0;

  void validate() const;
};

/// Parses the evaluate spec file; scenario paths resolve against `base_dir`.
ExperimentSpec parse_experiment_spec(const std::string& json_text, const std::filesystem::path& base_dir);
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

struct SuccessRow {
  std::string scenario;
  std::string strategy;
  int iterations = 0;
  int runs = 0;
  int successes = 0;
  double mean_wall_ms = 0.0;

  double success_rate() const { return runs > 0 ? static_cast<double>(successes) / runs : 0.0; }
};

struct SuccessTable {
  std::vector<SuccessRow> rows;
  std::vector<std::string> warnings;
};

struct EpisodeOutcome {
  bool success = false;
  int steps = 0;
  double wall_ms = 0.0;
  Scene initial;
};

/// The randomized start of run `run`; identical for every strategy cell.
Scene initial_scene(const Scenario& scenario, std::uint64_t base_seed, int run);

/// Plans and executes one episode. A null prior with `standalone` unset runs
/// the search configured in `config`; `standalone` samples the prior's
/// mixtures directly instead of searching.
EpisodeOutcome run_episode(const Scenario& scenario, const SearchConfig& config, const PolicyPrior* prior,
                           std::uint64_t base_seed, int run, bool standalone = false);

/// Worker count from COOPMCTS_THREADS, else the hardware concurrency.
int worker_threads();

/// Evaluates every (cell, scenario, iterations) combination. Results are
/// merged in (cell, scenario, iterations, run) order, so the thread count
/// never changes the output.
SuccessTable run_experiment(const ExperimentSpec& spec, int threads = 0);

std::string table_csv(const SuccessTable& table);
std::string table_json(const SuccessTable& table);
SuccessTable parse_table_json(const std::string& text);

/// Mean success rate over scenarios per (strategy, iterations).
std::map<std::string, std::map<int, double>> aggregate(const SuccessTable& table);

std::string heatmap_svg(const SuccessTable& table, const std::string& strategy);
std::string curves_svg(const SuccessTable& table);

/// Writes table.csv, table.json, curves.svg and one heatmap_<strategy>.svg
/// per strategy into `out_dir`.
void report(const SuccessTable& table, const std::filesystem::path& out_dir);

}  // namespace coopmcts
