#include "coopmcts/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "coopmcts/error.hpp"

namespace coopmcts {

using json = nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t episode_seed(std::uint64_t base_seed, int run) {
  return splitmix64(base_seed + static_cast<std::uint64_t>(run));
}

std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

CellSpec parse_cell(const json& j, const std::string& path) {
  CellSpec c;
  const std::string strategy = j.value("strategy", "baseline");
  if (strategy == "baseline")
    c.kind = CellSpec::Kind::kBaseline;
  else if (strategy == "mdn")
    c.kind = CellSpec::Kind::kMdn;
  else if (strategy == "mdn-standalone")
    c.kind = CellSpec::Kind::kMdnStandalone;
  else
    throw ParseError(path + ".strategy", "expected baseline|mdn|mdn-standalone");
  c.components = j.value("components", 2);
  if (c.components < 1 || c.components > 3) throw ParseError(path + ".components", "must be in [1, 3]");
  try {
    c.integration = parse_integration(j.value("integration", "root"));
  } catch (const ConfigError& e) {
    throw ParseError(path + ".integration", e.what());
  }
  c.selection = j.value("selection", false);
  return c;
}

struct Task {
  std::size_t row;
  int run;
};

// Rows of the table for one experiment, in deterministic order.
struct RowPlan {
  std::size_t cell;
  std::size_t scenario;
  int iterations;
  int runs;
};

}  // namespace

std::string CellSpec::label() const {
  switch (kind) {
    case Kind::kBaseline: return "baseline";
    case Kind::kMdnStandalone: return "mdn" + std::to_string(components) + "-standalone";
    case Kind::kMdn:
      return "mdn" + std::to_string(components) + "-" + to_string(integration) + (selection ? "-sel" : "-nosel");
  }
  return "baseline";
}

void ExperimentSpec::validate() const {
  if (scenarios.empty()) throw ConfigError("experiment needs at least one scenario");
  if (cells.empty()) throw ConfigError("experiment grid is empty");
  if (runs < 1 || (baseline_runs && *baseline_runs < 1)) throw ConfigError("runs must be >= 1");
  if (iterations.empty()) throw ConfigError("iteration sweep is empty");
  for (int it : iterations)
    if (it < 1) throw ConfigError("iteration counts must be >= 1");
}

ExperimentSpec parse_experiment_spec(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError("<document>", e.what());
  }
  ExperimentSpec spec;
  try {
    if (!j.contains("scenarios")) throw ParseError("scenarios", "missing required field");
    for (const auto& p : j.at("scenarios")) {
      std::filesystem::path path = p.get<std::string>();
      if (path.is_relative()) path = base_dir / path;
      spec.scenarios.push_back(load_scenario(path));
    }
    spec.runs = j.value("runs", spec.runs);
    if (j.contains("baseline_runs")) spec.baseline_runs = j.at("baseline_runs").get<int>();
    if (j.contains("iterations")) spec.iterations = j.at("iterations").get<std::vector<int>>();
    spec.base_seed = j.value("base_seed", std::uint64_t{0});
    if (j.contains("cells")) {
      for (std::size_t i = 0; i < j.at("cells").size(); ++i)
        spec.cells.push_back(parse_cell(j.at("cells").at(i), "cells[" + std::to_string(i) + "]"));
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      const auto strategies = g.value("strategies", std::vector<std::string>{"baseline", "mdn"});
      const auto comps = g.value("components", std::vector<int>{2, 3});
      const auto integ = g.value("integration", std::vector<std::string>{"root", "all"});
      const auto sel = g.value("selection", std::vector<bool>{true, false});
      for (const auto& s : strategies) {
        if (s == "baseline") {
          spec.cells.push_back(parse_cell({{"strategy", "baseline"}}, "grid"));
          continue;
        }
        for (int k : comps) {
          if (s == "mdn-standalone") {
            spec.cells.push_back(parse_cell({{"strategy", s}, {"components", k}}, "grid"));
            continue;
          }
          for (const auto& in : integ)
            for (bool se : sel)
              spec.cells.push_back(
                  parse_cell({{"strategy", s}, {"components", k}, {"integration", in}, {"selection", se}}, "grid"));
        }
      }
    }
    if (j.contains("weights")) {
      for (const auto& [key, value] : j.at("weights").items()) {
        std::filesystem::path path = value.get<std::string>();
        if (path.is_relative()) path = base_dir / path;
        spec.weights[std::stoi(key)] = path;
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("experiment spec", e.what());
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), "cannot open experiment spec");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_spec(buf.str(), path.parent_path());
}

Scene initial_scene(const Scenario& scenario, std::uint64_t base_seed, int run) {
  return randomize_scenario(scenario.scene, episode_seed(base_seed, run), scenario.randomization);
}

EpisodeOutcome run_episode(const Scenario& scenario, const SearchConfig& config, const PolicyPrior* prior,
                           std::uint64_t base_seed, int run, bool standalone) {
  const auto start = std::chrono::steady_clock::now();
  EpisodeOutcome out;
  Scene scene = initial_scene(scenario, base_seed, run);
  out.initial = scene;
  std::vector<Scene> history{scene};
  const std::uint64_t seed = episode_seed(base_seed, run);
  out.success = true;
  for (int step = 0; !episode_finished(scene, scenario.episode, step); ++step) {
    SearchConfig cfg = config;
    cfg.seed = splitmix64(seed ^ (0x5851F42D4C957F2Dull * static_cast<std::uint64_t>(step + 1)));
    const std::size_t keep = std::min<std::size_t>(history.size(), 8);
    const std::span<const Scene> window(history.data() + history.size() - keep, keep);
    JointAction action;
    if (standalone) {
      if (prior == nullptr) throw ConfigError("standalone policy needs a prior");
      Rng rng(cfg.seed);
      action = standalone_policy(prior->predict(window), scene.agents.size(), rng, cfg.bounds);
    } else {
      Planner planner(scene, cfg, prior, std::vector<Scene>(window.begin(), window.end() - 1));
      planner.run(cfg.iterations);
      action = planner.result().best;
    }
    const Scene next = step_scene(scene, action, cfg.dt);
    const auto hits = check_collision(scene, next, cfg.collision_substeps);
    out.steps = step + 1;
    scene = next;
    history.push_back(scene);
    if (std::find(hits.begin(), hits.end(), true) != hits.end()) {
      out.success = false;
      break;
    }
  }
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

int worker_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("COOPMCTS_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

SuccessTable run_experiment(const ExperimentSpec& spec, int threads) {
  spec.validate();
  SuccessTable table;

  std::map<int, std::shared_ptr<const MdnWeights>> weights;
  std::vector<RowPlan> plan;
  for (std::size_t c = 0; c < spec.cells.size(); ++c) {
    const CellSpec& cell = spec.cells[c];
    if (cell.kind != CellSpec::Kind::kBaseline && !weights.count(cell.components)) {
      const auto it = spec.weights.find(cell.components);
      if (it == spec.weights.end()) {
        table.warnings.push_back("skipping " + cell.label() + ": no weights for " + std::to_string(cell.components) +
                                 " components");
        continue;
      }
      weights[cell.components] = std::make_shared<const MdnWeights>(load_weights(it->second));
    }
    const int runs = cell.kind == CellSpec::Kind::kBaseline ? spec.baseline_runs.value_or(spec.runs) : spec.runs;
    for (std::size_t s = 0; s < spec.scenarios.size(); ++s) {
      if (cell.kind == CellSpec::Kind::kMdnStandalone) {
        plan.push_back({c, s, 0, runs});
        continue;
      }
      for (int it : spec.iterations) plan.push_back({c, s, it, runs});
    }
  }

  std::map<int, std::shared_ptr<const MdnPrior>> priors;
  for (const auto& [k, w] : weights) priors[k] = std::make_shared<const MdnPrior>(*w);

  std::vector<Task> tasks;
  for (std::size_t r = 0; r < plan.size(); ++r)
    for (int run = 0; run < plan[r].runs; ++run) tasks.push_back({r, run});
  std::vector<EpisodeOutcome> outcomes(tasks.size());

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const RowPlan& row = plan[tasks[i].row];
        const CellSpec& cell = spec.cells[row.cell];
        const Scenario& sc = spec.scenarios[row.scenario];
        SearchConfig cfg = sc.search;
        cfg.iterations = std::max(1, row.iterations);
        cfg.components = cell.components;
        const PolicyPrior* prior = nullptr;
        if (cell.kind == CellSpec::Kind::kBaseline) {
          cfg.strategy = Strategy::kBaseline;
          cfg.selection_bias = false;
        } else {
          cfg.strategy = Strategy::kMdn;
          cfg.integration = cell.integration;
          cfg.selection_bias = cell.selection;
          prior = priors.at(cell.components).get();
        }
        outcomes[i] = run_episode(sc, cfg, prior, spec.base_seed, tasks[i].run,
                                  cell.kind == CellSpec::Kind::kMdnStandalone);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = tasks.size();
      }
    }
  };
  const int n = std::max(1, threads > 0 ? threads : worker_threads());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  table.rows.resize(plan.size());
  for (std::size_t r = 0; r < plan.size(); ++r) {
    table.rows[r].scenario = spec.scenarios[plan[r].scenario].name;
    table.rows[r].strategy = spec.cells[plan[r].cell].label();
    table.rows[r].iterations = plan[r].iterations;
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    SuccessRow& row = table.rows[tasks[i].row];
    row.runs += 1;
    row.successes += outcomes[i].success ? 1 : 0;
    row.mean_wall_ms += outcomes[i].wall_ms;
  }
  for (auto& row : table.rows)
    if (row.runs > 0) row.mean_wall_ms /= row.runs;
  return table;
}

std::string table_csv(const SuccessTable& table) {
  std::string out = "scenario,strategy,iterations,runs,successes,success_rate\n";
  for (const auto& r : table.rows)
    out += r.scenario + "," + r.strategy + "," + std::to_string(r.iterations) + "," + std::to_string(r.runs) + "," +
           std::to_string(r.successes) + "," + format_rate(r.success_rate()) + "\n";
  return out;
}

std::string table_json(const SuccessTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows)
    rows.push_back({{"scenario", r.scenario},
                    {"strategy", r.strategy},
                    {"iterations", r.iterations},
                    {"runs", r.runs},
                    {"successes", r.successes},
                    {"success_rate", r.success_rate()},
                    {"mean_wall_ms", r.mean_wall_ms}});
  return json{{"rows", rows}, {"warnings", table.warnings}}.dump(2) + "\n";
}

SuccessTable parse_table_json(const std::string& text) {
  SuccessTable t;
  try {
    const json j = json::parse(text);
    for (const auto& r : j.at("rows")) {
      SuccessRow row;
      row.scenario = r.at("scenario").get<std::string>();
      row.strategy = r.at("strategy").get<std::string>();
      row.iterations = r.at("iterations").get<int>();
      row.runs = r.at("runs").get<int>();
      row.successes = r.at("successes").get<int>();
      row.mean_wall_ms = r.value("mean_wall_ms", 0.0);
      t.rows.push_back(row);
    }
    if (j.contains("warnings")) t.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError("table.json", e.what());
  }
  return t;
}

std::map<std::string, std::map<int, double>> aggregate(const SuccessTable& table) {
  std::map<std::string, std::map<int, std::pair<double, int>>> acc;
  for (const auto& r : table.rows) {
    auto& cell = acc[r.strategy][r.iterations];
    cell.first += r.success_rate();
    cell.second += 1;
  }
  std::map<std::string, std::map<int, double>> out;
  for (const auto& [strategy, by_it] : acc)
    for (const auto& [it, sum] : by_it) out[strategy][it] = sum.first / sum.second;
  return out;
}

std::string heatmap_svg(const SuccessTable& table, const std::string& strategy) {
  std::vector<std::string> scenarios;
  std::set<int> iteration_set;
  for (const auto& r : table.rows) {
    if (r.strategy != strategy) continue;
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end()) scenarios.push_back(r.scenario);
    iteration_set.insert(r.iterations);
  }
  const std::vector<int> iterations(iteration_set.begin(), iteration_set.end());
  const int cell = 48, left = 160, top = 40;
  const int width = left + cell * static_cast<int>(iterations.size()) + 20;
  const int height = top + cell * static_cast<int>(scenarios.size()) + 40;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">success rate: " << strategy << "</text>\n";
  for (std::size_t c = 0; c < iterations.size(); ++c)
    s << "<text x=\"" << left + cell * static_cast<int>(c) + cell / 2 << "\" y=\"" << height - 15
      << "\" font-size=\"10\" text-anchor=\"middle\">" << iterations[c] << "</text>\n";
  for (std::size_t r = 0; r < scenarios.size(); ++r) {
    const int y = top + cell * static_cast<int>(r);
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
      << scenarios[r] << "</text>\n";
    for (std::size_t c = 0; c < iterations.size(); ++c) {
      for (const auto& row : table.rows) {
        if (row.strategy != strategy || row.scenario != scenarios[r] || row.iterations != iterations[c]) continue;
        const double rate = row.success_rate();
        // Red (0) to green (1).
        const int red = static_cast<int>(std::lround(255 * (1.0 - rate)));
        const int green = static_cast<int>(std::lround(200 * rate));
        const int x = left + cell * static_cast<int>(c);
        s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << red << "," << green << ",60)\"/>\n";
        s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
          << "\" font-size=\"10\" text-anchor=\"middle\">" << fmt(rate) << "</text>\n";
      }
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string curves_svg(const SuccessTable& table) {
  const auto agg = aggregate(table);
  std::set<int> iteration_set;
  for (const auto& [strategy, by_it] : agg)
    for (const auto& [it, rate] : by_it)
      if (it > 0) iteration_set.insert(it);
  const double left = 60, right = 460, top = 30, bottom = 330;
  const double lmin = iteration_set.empty() ? 0.0 : std::log10(*iteration_set.begin());
  const double lmax = iteration_set.empty() ? 1.0 : std::log10(*iteration_set.rbegin());
  auto px = [&](int it) {
    if (lmax <= lmin) return 0.5 * (left + right);
    return left + (std::log10(it) - lmin) / (lmax - lmin) * (right - left);
  };
  auto py = [&](double rate) { return bottom - rate * (bottom - top); };
  static const char* colors[] = {"#d4a017", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"380\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
    << "\" stroke=\"black\"/>\n";
  for (int it : iteration_set)
    s << "<text x=\"" << fmt(px(it)) << "\" y=\"" << bottom + 16 << "\" font-size=\"10\" text-anchor=\"middle\">" << it
      << "</text>\n";
  for (int tick = 0; tick <= 4; ++tick)
    s << "<text x=\"" << left - 8 << "\" y=\"" << fmt(py(tick / 4.0) + 4) << "\" font-size=\"10\" text-anchor=\"end\">"
      << fmt(tick / 4.0) << "</text>\n";
  int color = 0;
  double legend_y = top;
  for (const auto& [strategy, by_it] : agg) {
    std::string points;
    for (const auto& [it, rate] : by_it) {
      if (it <= 0) continue;
      if (!points.empty()) points += " ";
      points += fmt(px(it)) + "," + fmt(py(rate));
    }
    const char* col = colors[color++ % 8];
    if (!points.empty())
      s << "<polyline data-strategy=\"" << strategy << "\" fill=\"none\" stroke=\"" << col
        << "\" stroke-width=\"2\" points=\"" << points << "\"/>\n";
    s << "<text x=\"" << right + 10 << "\" y=\"" << fmt(legend_y) << "\" font-size=\"11\" fill=\"" << col << "\">"
      << strategy << "</text>\n";
    legend_y += 16;
  }
  s << "</svg>\n";
  return s.str();
}

void report(const SuccessTable& table, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream(out_dir / "table.csv") << table_csv(table);
  std::ofstream(out_dir / "table.json") << table_json(table);
  std::ofstream(out_dir / "curves.svg") << curves_svg(table);
  std::set<std::string> strategies;
  for (const auto& r : table.rows) strategies.insert(r.strategy);
  for (const auto& s : strategies) std::ofstream(out_dir / ("heatmap_" + s + ".svg")) << heatmap_svg(table, s);
}

}  // namespace coopmcts
