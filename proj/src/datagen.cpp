#include "coopmcts/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "coopmcts/error.hpp"
#include "coopmcts/mcts.hpp"

namespace coopmcts {

using json = nlohmann::json;

namespace {

constexpr const char* kClassNames[kNumActionClasses] = {
    "decelerate-left", "decelerate-keep", "decelerate-right", "hold-left",       "hold-keep",
    "hold-right",      "accelerate-left", "accelerate-keep",  "accelerate-right",
};

json gmm_json(const Gmm1D& g) { return {{"K", g.k()}, {"phi", g.phi}, {"mu", g.mu}, {"var", g.var}}; }

Gmm1D gmm_parse(const json& j) {
  Gmm1D g{j.at("phi").get<std::vector<double>>(), j.at("mu").get<std::vector<double>>(),
          j.at("var").get<std::vector<double>>()};
  if (j.at("K").get<int>() != g.k()) throw ParseError("K", "component count disagrees with parameter arrays");
  return g;
}

json samples_json(const WeightedSamples& s) { return {{"values", s.values}, {"weights", s.weights}}; }

WeightedSamples samples_parse(const json& j) {
  return {j.at("values").get<std::vector<double>>(), j.at("weights").get<std::vector<double>>()};
}

json feature_config_json(const FeatureConfig& f) {
  return {{"grid_rows", f.grid_rows}, {"grid_cols", f.grid_cols}, {"cell_lon", f.cell_lon}, {"cell_lat", f.cell_lat},
          {"lane_classes", f.lane_classes}, {"object_classes", f.object_classes}, {"slots", f.slots},
          {"history", f.history}, {"x_norm", f.x_norm}, {"y_norm", f.y_norm}, {"v_norm", f.v_norm},
          {"a_norm", f.a_norm}};
}

FeatureConfig feature_config_parse(const json& j) {
  FeatureConfig f;
  f.grid_rows = j.at("grid_rows").get<int>();
  f.grid_cols = j.at("grid_cols").get<int>();
  f.cell_lon = j.at("cell_lon").get<double>();
  f.cell_lat = j.at("cell_lat").get<double>();
  f.lane_classes = j.at("lane_classes").get<int>();
  f.object_classes = j.at("object_classes").get<int>();
  f.slots = j.at("slots").get<int>();
  f.history = j.at("history").get<int>();
  f.x_norm = j.at("x_norm").get<double>();
  f.y_norm = j.at("y_norm").get<double>();
  f.v_norm = j.at("v_norm").get<double>();
  f.a_norm = j.at("a_norm").get<double>();
  return f;
}

json record_json(const DatasetRecord& r, std::uint64_t grid_offset) {
  json j;
  j["id"] = r.id;
  j["scenario"] = r.scenario;
  j["run"] = r.run;
  j["timestep"] = r.timestep;
  j["ego"] = r.ego;
  j["class"] = to_string(r.action_class);
  j["failed"] = r.failed;
  j["grid"] = {{"offset", grid_offset}, {"length", r.grid.size()}};
  j["scalars"] = r.scalars.values;
  j["mask"] = r.scalars.mask;
  j["slot_agent"] = r.scalars.slot_agent;
  j["samples"] = json::array();
  for (const auto& s : r.samples)
    j["samples"].push_back({{"slot", s.slot}, {"lon", samples_json(s.lon)}, {"lat", samples_json(s.lat)}});
  j["labels"] = json::array();
  for (const auto& l : r.labels)
    j["labels"].push_back({{"slot", l.slot},
                           {"k2", {{"lon", gmm_json(l.k2.lon)}, {"lat", gmm_json(l.k2.lat)}}},
                           {"k3", {{"lon", gmm_json(l.k3.lon)}, {"lat", gmm_json(l.k3.lat)}}}});
  return j;
}

}  // namespace

std::string to_string(SemanticActionClass c) { return kClassNames[static_cast<int>(c)]; }

SemanticActionClass parse_action_class(const std::string& s) {
  for (int i = 0; i < kNumActionClasses; ++i)
    if (s == kClassNames[i]) return static_cast<SemanticActionClass>(i);
  throw ParseError("class", "unknown semantic action class '" + s + "'");
}

SemanticActionClass classify_action(const Action& a, const ClassThresholds& thr) {
  const int lon = std::abs(a.dv) < thr.dv ? 1 : (a.dv > 0.0 ? 2 : 0);
  const int lat = std::abs(a.dy) < thr.dy ? 1 : (a.dy > 0.0 ? 0 : 2);
  return static_cast<SemanticActionClass>(lon * 3 + lat);
}

RunResult generate_run(const Scenario& scenario, std::uint64_t seed, const DatagenConfig& config, int run_index,
                       std::uint64_t first_id) {
  if (scenario.search.strategy != Strategy::kBaseline)
    throw ConfigError("data generation runs the baseline search only");
  RunResult out;
  Scene scene = randomize_scenario(scenario.scene, seed, scenario.randomization);
  std::vector<Scene> history{scene};
  SearchConfig cfg = scenario.search;
  if (config.iterations) cfg.iterations = *config.iterations;
  std::uint64_t next_id = first_id;

  for (int step = 0; !episode_finished(scene, scenario.episode, step); ++step) {
    cfg.seed = seed * 7919u + static_cast<std::uint64_t>(step);
    const auto past = std::span<const Scene>(history).first(history.size() - 1);
    Planner planner(scene, cfg, nullptr, std::vector<Scene>(past.begin(), past.end()));
    planner.run(cfg.iterations);
    const SearchResult result = planner.result();

    const std::size_t keep = std::min<std::size_t>(history.size(), config.features.history);
    const std::span<const Scene> window(history.data() + history.size() - keep, keep);
    for (int ego = 0; ego < static_cast<int>(scene.agents.size()); ++ego) {
      DatasetRecord rec;
      rec.id = next_id++;
      rec.scenario = scenario.name;
      rec.run = run_index;
      rec.timestep = step;
      rec.ego = ego;
      rec.action_class = classify_action(result.best[ego], config.thresholds);
      rec.grid = rasterize(scene, ego, config.features).cells;
      rec.scalars = shift_slots(build_scalars(window, ego, config.features), step, config.features);
      for (int slot = 0; slot < config.features.slots; ++slot) {
        const int agent = rec.scalars.slot_agent[slot];
        if (agent < 0) continue;
        SlotSamples s;
        s.slot = slot;
        for (const auto& child : result.root_children) {
          s.lon.values.push_back(child.action[agent].dv);
          s.lon.weights.push_back(child.visits);
          s.lat.values.push_back(child.action[agent].dy);
          s.lat.weights.push_back(child.visits);
        }
        rec.samples.push_back(std::move(s));
      }
      out.records.push_back(std::move(rec));
    }

    const Scene next = step_scene(scene, result.best, cfg.dt);
    const auto hits = check_collision(scene, next, cfg.collision_substeps);
    out.steps = step + 1;
    scene = next;
    history.push_back(scene);
    if (std::find(hits.begin(), hits.end(), true) != hits.end()) {
      out.failed = true;
      break;
    }
  }
  if (out.failed)
    for (auto& r : out.records) r.failed = true;
  return out;
}

std::array<int, kNumActionClasses> class_histogram(const std::vector<DatasetRecord>& records) {
  std::array<int, kNumActionClasses> h{};
  for (const auto& r : records) ++h[static_cast<int>(r.action_class)];
  return h;
}

std::vector<DatasetRecord> balance_classes(const std::vector<DatasetRecord>& records) {
  const auto hist = class_histogram(records);
  int target = 0;
  for (int c : hist)
    if (c > 0 && (target == 0 || c < target)) target = c;
  std::vector<const DatasetRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::array<int, kNumActionClasses> taken{};
  std::vector<DatasetRecord> out;
  for (const auto* r : sorted) {
    int& n = taken[static_cast<int>(r->action_class)];
    if (n < target) {
      ++n;
      out.push_back(*r);
    }
  }
  return out;
}

std::optional<DatasetRecord> fit_labels(const DatasetRecord& record, std::string* reason, const EmOptions& base) {
  DatasetRecord out = record;
  out.labels.clear();
  for (const auto& s : record.samples) {
    for (const auto* axis : {&s.lon, &s.lat}) {
      const std::set<double> distinct(axis->values.begin(), axis->values.end());
      if (distinct.size() < 3) {
        if (reason)
          *reason = "record " + std::to_string(record.id) + " slot " + std::to_string(s.slot) + ": only " +
                    std::to_string(distinct.size()) + " distinct " + (axis == &s.lon ? "dv" : "dy") + " samples";
        return std::nullopt;
      }
    }
    SlotLabels l;
    l.slot = s.slot;
    EmOptions opts = base;
    for (int axis = 0; axis < 2; ++axis) {
      const WeightedSamples& ws = axis == 0 ? s.lon : s.lat;
      for (int k : {2, 3}) {
        opts.seed = base.seed ^ (record.id * 1000003u + static_cast<std::uint64_t>(s.slot) * 31u +
                                 static_cast<std::uint64_t>(axis) * 7u + static_cast<std::uint64_t>(k));
        Gmm1D g;
        try {
          g = fit_em(ws, k, opts);
        } catch (const DegenerateInputError& e) {
          if (reason) *reason = "record " + std::to_string(record.id) + ": " + e.what();
          return std::nullopt;
        }
        FactoredActionGmm& target = k == 2 ? l.k2 : l.k3;
        (axis == 0 ? target.lon : target.lat) = std::move(g);
      }
    }
    out.labels.push_back(std::move(l));
  }
  return out;
}

std::string gmm_to_json(const Gmm1D& g) { return gmm_json(g).dump(); }
Gmm1D gmm_from_json(const std::string& text) { return gmm_parse(json::parse(text)); }

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream records(dir / "records.jsonl");
  std::ofstream grids(dir / "grids.bin", std::ios::binary);
  if (!records || !grids) throw Error("cannot write dataset into " + dir.string());
  std::uint64_t offset = 0;
  for (const auto& r : dataset.records) {
    records << record_json(r, offset).dump() << '\n';
    grids.write(reinterpret_cast<const char*>(r.grid.data()), static_cast<std::streamsize>(r.grid.size()));
    offset += r.grid.size();
  }
  const auto hist = class_histogram(dataset.records);
  json histogram = json::object();
  for (int c = 0; c < kNumActionClasses; ++c) histogram[kClassNames[c]] = hist[c];
  json manifest = {
      {"format_version", kDatasetFormatVersion},
      {"record_count", dataset.records.size()},
      {"grid_bytes", offset},
      {"class_histogram", histogram},
      {"features", feature_config_json(dataset.features)},
      {"config", json::parse(dataset.config_echo)},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ParseError((dir / "manifest.json").string(), "cannot open dataset manifest");
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw ParseError("manifest.json", e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kDatasetFormatVersion)
    throw VersionError("dataset format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kDatasetFormatVersion) + ")");

  Dataset ds;
  ds.features = feature_config_parse(manifest.at("features"));
  ds.config_echo = manifest.at("config").dump();

  std::ifstream gf(dir / "grids.bin", std::ios::binary);
  if (!gf) throw ParseError((dir / "grids.bin").string(), "cannot open grid blob");
  const std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(gf)), std::istreambuf_iterator<char>());

  std::ifstream rf(dir / "records.jsonl");
  if (!rf) throw ParseError((dir / "records.jsonl").string(), "cannot open records");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(rf, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "records.jsonl:" + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      DatasetRecord r;
      r.id = j.at("id").get<std::uint64_t>();
      r.scenario = j.at("scenario").get<std::string>();
      r.run = j.at("run").get<int>();
      r.timestep = j.at("timestep").get<int>();
      r.ego = j.at("ego").get<int>();
      r.action_class = parse_action_class(j.at("class").get<std::string>());
      r.failed = j.at("failed").get<bool>();
      const auto offset = j.at("grid").at("offset").get<std::uint64_t>();
      const auto length = j.at("grid").at("length").get<std::uint64_t>();
      if (offset > blob.size() || length > blob.size() - offset)
        throw OffsetError(where + ": grid range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                          ") exceeds grids.bin size " + std::to_string(blob.size()));
      r.grid.assign(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                    blob.begin() + static_cast<std::ptrdiff_t>(offset + length));
      r.scalars.values = j.at("scalars").get<std::vector<float>>();
      r.scalars.mask = j.at("mask").get<std::vector<std::uint8_t>>();
      r.scalars.slot_agent = j.at("slot_agent").get<std::vector<int>>();
      for (const auto& s : j.at("samples"))
        r.samples.push_back({s.at("slot").get<int>(), samples_parse(s.at("lon")), samples_parse(s.at("lat"))});
      for (const auto& l : j.at("labels")) {
        SlotLabels sl;
        sl.slot = l.at("slot").get<int>();
        sl.k2 = {gmm_parse(l.at("k2").at("lon")), gmm_parse(l.at("k2").at("lat"))};
        sl.k3 = {gmm_parse(l.at("k3").at("lon")), gmm_parse(l.at("k3").at("lat"))};
        r.labels.push_back(std::move(sl));
      }
      ds.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(where, e.what());
    }
  }
  return ds;
}

}  // namespace coopmcts
