#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "coopmcts/datagen.hpp"
#include "coopmcts/error.hpp"
#include "coopmcts/experiment.hpp"
#include "coopmcts/mcts.hpp"
#include "coopmcts/mdn.hpp"
#include "coopmcts/scenario.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace coopmcts;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

json action_json(const Action& a) { return {{"dv", a.dv}, {"dy", a.dy}}; }

json joint_json(const JointAction& ja) {
  json out = json::array();
  for (const auto& a : ja) out.push_back(action_json(a));
  return out;
}

struct PlanArgs {
  std::string scenario, weights, out, strategy = "baseline", integration = "root", selection = "off";
  int iterations = 0, components = 2;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_plan(const PlanArgs& args) {
  Scenario sc = load_scenario(args.scenario);
  SearchConfig cfg = sc.search;
  if (args.iterations > 0) cfg.iterations = args.iterations;
  if (args.seed_set) cfg.seed = args.seed;
  cfg.strategy = parse_strategy(args.strategy);
  cfg.integration = parse_integration(args.integration);
  cfg.selection_bias = args.selection == "on";
  cfg.components = args.components;

  std::optional<MdnWeights> weights;
  if (cfg.strategy == Strategy::kMdn) {
    if (args.weights.empty()) throw ConfigError("--mdn-weights is required for the mdn strategy");
    weights = load_weights(args.weights);
    if (weights->metadata().components != cfg.components)
      throw ConfigError("weights have " + std::to_string(weights->metadata().components) +
                        " components, --components is " + std::to_string(cfg.components));
  }
  const SearchResult r = search(sc.scene, cfg, weights ? &*weights : nullptr);

  json children = json::array();
  for (const auto& c : r.root_children)
    children.push_back({{"action", joint_json(c.action)}, {"visits", c.visits}, {"q", c.q}});
  json out = {{"scenario", sc.name},
              {"selected_action", joint_json(r.best)},
              {"root_children", children},
              {"root_visits", r.root_visits},
              {"iterations", r.iterations},
              {"seed", cfg.seed},
              {"termination", r.termination},
              {"strategy",
               {{"strategy", to_string(cfg.strategy)},
                {"integration", to_string(cfg.integration)},
                {"selection", cfg.selection_bias},
                {"components", cfg.components}}},
              {"wall_time_ms", r.wall_time_ms}};
  const std::string text = out.dump(2) + "\n";
  if (args.out.empty())
    std::cout << text;
  else
    write_text(args.out, text);
  return 0;
}

int cmd_evaluate(const std::string& spec_path, const std::string& out_dir) {
  const ExperimentSpec spec = load_experiment_spec(spec_path);
  const SuccessTable table = run_experiment(spec, worker_threads());
  for (const auto& w : table.warnings) std::cerr << json{{"warning", w}}.dump() << "\n";
  report(table, out_dir);
  return 0;
}

std::vector<fs::path> scenario_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(dir)) return {dir};
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no scenario files in " + dir.string());
  return files;
}

struct DatagenArgs {
  std::string scenarios, out;
  int runs = 5;
  std::uint64_t seed = 0;
  bool balance = false;
  int iterations = 0;
  int grid_rows = 0, grid_cols = 0;
};

int cmd_datagen(const DatagenArgs& args) {
  DatagenConfig cfg;
  if (args.iterations > 0) cfg.iterations = args.iterations;
  if (args.grid_rows > 0) cfg.features.grid_rows = args.grid_rows;
  if (args.grid_cols > 0) cfg.features.grid_cols = args.grid_cols;

  Dataset ds;
  ds.features = cfg.features;
  int failed = 0;
  const auto files = scenario_files(args.scenarios);
  for (std::size_t s = 0; s < files.size(); ++s) {
    const Scenario sc = load_scenario(files[s]);
    for (int run = 0; run < args.runs; ++run) {
      const std::uint64_t seed = args.seed + static_cast<std::uint64_t>(s) * 1000003u + static_cast<std::uint64_t>(run);
      RunResult rr = generate_run(sc, seed, cfg, run, ds.records.size());
      failed += rr.failed ? 1 : 0;
      for (auto& rec : rr.records) ds.records.push_back(std::move(rec));
    }
  }
  const std::size_t before = ds.records.size();
  if (args.balance) ds.records = balance_classes(ds.records);
  ds.config_echo = json{{"scenarios", args.scenarios},
                        {"runs", args.runs},
                        {"seed", args.seed},
                        {"balance", args.balance},
                        {"iterations", args.iterations},
                        {"records_before_balance", before},
                        {"failed_runs", failed}}
                       .dump();
  write_dataset(ds, args.out);
  std::cerr << json{{"records", ds.records.size()}, {"failed_runs", failed}}.dump() << "\n";
  return 0;
}

int cmd_fit_labels(const std::string& dir, const std::string& out) {
  Dataset ds = read_dataset(dir);
  std::vector<DatasetRecord> kept;
  int dropped = 0;
  for (const auto& rec : ds.records) {
    std::string reason;
    if (auto labelled = fit_labels(rec, &reason)) {
      kept.push_back(std::move(*labelled));
    } else {
      ++dropped;
      std::cerr << json{{"dropped", rec.id}, {"reason", reason}}.dump() << "\n";
    }
  }
  ds.records = std::move(kept);
  write_dataset(ds, out.empty() ? dir : out);
  std::cerr << json{{"labelled", ds.records.size()}, {"dropped", dropped}}.dump() << "\n";
  return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out_dir) {
  const SuccessTable table = parse_table_json(read_text(fs::path(in_dir) / "table.json"));
  if (table.rows.empty()) throw ConfigError("table has no rows");
  report(table, out_dir);
  return 0;
}

int cmd_random_weights(const std::string& out, int components, std::uint64_t seed, int rows, int cols) {
  MdnMetadata meta;
  meta.components = components;
  if (rows > 0) meta.features.grid_rows = rows;
  if (cols > 0) meta.features.grid_cols = cols;
  save_weights(out, MdnWeights::random(meta, seed));
  return 0;
}

int report_error(const std::string& kind, const std::exception& e, const std::string& path = {}) {
  json err = {{"error", kind}, {"message", e.what()}};
  if (!path.empty()) err["path"] = path;
  std::cerr << err.dump() << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative MCTS planner with learned mixture priors"};
  app.require_subcommand(1);

  PlanArgs plan;
  auto* p = app.add_subcommand("plan", "Run one search on a scenario and print the result JSON");
  p->add_option("--scenario", plan.scenario)->required();
  p->add_option("--iterations", plan.iterations);
  p->add_option("--strategy", plan.strategy)->check(CLI::IsMember({"baseline", "mdn"}));
  p->add_option("--mdn-weights", plan.weights);
  p->add_option("--components", plan.components)->check(CLI::IsMember({1, 2, 3}));
  p->add_option("--integration", plan.integration)->check(CLI::IsMember({"none", "root", "all"}));
  p->add_option("--selection", plan.selection)->check(CLI::IsMember({"on", "off"}));
  auto* seed_opt = p->add_option("--seed", plan.seed);
  p->add_option("--out", plan.out);

  std::string spec_path, eval_out;
  auto* ev = app.add_subcommand("evaluate", "Run an experiment grid and write tables and plots");
  ev->add_option("--spec", spec_path)->required();
  ev->add_option("--out", eval_out)->required();

  DatagenArgs dg;
  auto* d = app.add_subcommand("datagen", "Generate a training dataset with baseline searches");
  d->add_option("--scenarios", dg.scenarios)->required();
  d->add_option("--runs", dg.runs)->check(CLI::PositiveNumber);
  d->add_option("--seed", dg.seed);
  d->add_option("--out", dg.out)->required();
  d->add_flag("--balance", dg.balance, "Downsample to equal semantic class counts");
  d->add_option("--iterations", dg.iterations, "Override the scenario search budget");
  d->add_option("--grid-rows", dg.grid_rows, "Reduced lateral grid size");
  d->add_option("--grid-cols", dg.grid_cols, "Reduced longitudinal grid size");

  std::string fit_dir, fit_out;
  auto* f = app.add_subcommand("fit-labels", "Fit K=2 and K=3 mixture labels to a dataset");
  f->add_option("--dataset", fit_dir)->required();
  f->add_option("--out", fit_out, "Output directory (default: in place)");

  std::string rep_in, rep_out;
  auto* r = app.add_subcommand("report", "Render tables and plots from a table.json");
  r->add_option("--in", rep_in)->required();
  r->add_option("--out", rep_out)->required();

  std::string rw_out;
  int rw_k = 2, rw_rows = 0, rw_cols = 0;
  std::uint64_t rw_seed = 0;
  auto* rw = app.add_subcommand("random-weights", "Write a randomly initialized weights file");
  rw->add_option("--out", rw_out)->required();
  rw->add_option("--components", rw_k)->check(CLI::IsMember({1, 2, 3}));
  rw->add_option("--seed", rw_seed);
  rw->add_option("--grid-rows", rw_rows);
  rw->add_option("--grid-cols", rw_cols);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 64;
  }

  try {
    if (*p) {
      plan.seed_set = seed_opt->count() > 0;
      return cmd_plan(plan);
    }
    if (*ev) return cmd_evaluate(spec_path, eval_out);
    if (*d) return cmd_datagen(dg);
    if (*f) return cmd_fit_labels(fit_dir, fit_out);
    if (*r) return cmd_report(rep_in, rep_out);
    if (*rw) return cmd_random_weights(rw_out, rw_k, rw_seed, rw_rows, rw_cols);
  } catch (const ParseError& e) {
    return report_error("parse", e, e.path());
  } catch (const ConfigError& e) {
    return report_error("config", e);
  } catch (const ShapeError& e) {
    return report_error("shape", e);
  } catch (const TruncationError& e) {
    return report_error("truncation", e);
  } catch (const ChecksumError& e) {
    return report_error("checksum", e);
  } catch (const VersionError& e) {
    return report_error("version", e);
  } catch (const OffsetError& e) {
    return report_error("offset", e);
  } catch (const std::exception& e) {
    return report_error("error", e);
  }
  return 1;
}
