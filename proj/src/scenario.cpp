#include "coopmcts/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "coopmcts/error.hpp"

namespace coopmcts {

using json = nlohmann::json;

namespace {

// Cursor over a JSON value that remembers its path for error messages.
class Field {
 public:
  Field(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const json& raw() const { return j_; }
  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  Field at(const std::string& key) const {
    const std::string p = path_.empty() ? key : path_ + "." + key;
    if (!j_.is_object()) throw ParseError(path_.empty() ? "<root>" : path_, "expected an object");
    if (!j_.contains(key)) throw ParseError(p, "missing required field");
    return Field(j_.at(key), p);
  }
  Field at(std::size_t i) const { return Field(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

  std::size_t array_size() const {
    if (!j_.is_array()) throw ParseError(path_, "expected an array");
    return j_.size();
  }
  double number() const {
    if (!j_.is_number()) throw ParseError(path_, "expected a number");
    return j_.get<double>();
  }
  int integer() const {
    if (!j_.is_number_integer()) throw ParseError(path_, "expected an integer");
    return j_.get<int>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) throw ParseError(path_, "expected a boolean");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) throw ParseError(path_, "expected a string");
    return j_.get<std::string>();
  }
  Range range() const {
    if (!j_.is_array() || j_.size() != 2) throw ParseError(path_, "expected [lo, hi]");
    const Range r{at(0).number(), at(1).number()};
    if (r.lo > r.hi) throw ParseError(path_, "lo must be <= hi");
    return r;
  }

  double number_or(const std::string& key, double fallback) const { return has(key) ? at(key).number() : fallback; }
  int integer_or(const std::string& key, int fallback) const { return has(key) ? at(key).integer() : fallback; }
  Range range_or(const std::string& key, Range fallback) const { return has(key) ? at(key).range() : fallback; }

 private:
  const json& j_;
  std::string path_;
};

void require(const Field& f, bool ok, const char* what) {
  if (!ok) throw ParseError(f.path(), what);
}

double positive(const Field& f) {
  const double v = f.number();
  require(f, v > 0.0, "must be > 0");
  return v;
}

double non_negative(const Field& f) {
  const double v = f.number();
  require(f, v >= 0.0, "must be >= 0");
  return v;
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Scenario parse(const json& doc) {
  const Field root(doc, "");
  Scenario sc;
  if (root.has("name")) sc.name = root.at("name").string();

  const Field road = root.at("road");
  sc.scene.road_length = positive(road.at("length_m"));
  const Field lanes = road.at("lanes");
  for (std::size_t i = 0; i < lanes.array_size(); ++i) {
    const Field l = lanes.at(i);
    LaneSpec lane;
    lane.id = l.at("id").integer();
    require(l.at("id"), lane.id >= 0, "must be >= 0");
    lane.center_offset = l.at("center_offset_m").number();
    lane.width = positive(l.at("width_m"));
    sc.scene.lanes.push_back(lane);
  }
  require(lanes, !sc.scene.lanes.empty(), "at least one lane required");

  const Field agents = root.at("agents");
  const std::size_t g = agents.array_size();
  require(agents, g >= 1 && g <= static_cast<std::size_t>(kMaxAgents), "agent count must be in [1, 8]");
  for (std::size_t i = 0; i < g; ++i) {
    const Field a = agents.at(i);
    AgentState s;
    s.x = a.at("x").number();
    s.y = a.at("y").number();
    s.heading = a.at("heading").number();
    s.v = non_negative(a.at("v"));
    s.a = a.at("a").number();
    s.length = positive(a.at("length"));
    s.width = positive(a.at("width"));
    s.v_desired = non_negative(a.at("v_desired"));
    s.lane_desired = a.at("lane_desired").integer();
    require(a.at("lane_desired"), sc.scene.find_lane(s.lane_desired) != nullptr, "no lane with this id");
    sc.scene.agents.push_back(s);
  }

  if (root.has("obstacles")) {
    const Field obs = root.at("obstacles");
    for (std::size_t i = 0; i < obs.array_size(); ++i) {
      const Field o = obs.at(i);
      sc.scene.obstacles.push_back(
          {o.at("x").number(), o.at("y").number(), positive(o.at("length")), positive(o.at("width"))});
    }
  }

  RewardWeights& rw = sc.search.reward;
  if (root.has("reward")) {
    const Field r = root.at("reward");
    rw.w_v = r.has("w_v") ? non_negative(r.at("w_v")) : rw.w_v;
    rw.w_l = r.has("w_l") ? non_negative(r.at("w_l")) : rw.w_l;
    rw.w_a = r.has("w_a") ? non_negative(r.at("w_a")) : rw.w_a;
    if (r.has("collision_penalty")) {
      rw.collision_penalty = r.at("collision_penalty").number();
      require(r.at("collision_penalty"), rw.collision_penalty < 0.0, "must be < 0");
    }
  }

  SearchConfig& cfg = sc.search;
  if (root.has("search")) {
    const Field s = root.at("search");
    if (s.has("dt")) cfg.dt = positive(s.at("dt"));
    cfg.horizon = s.integer_or("horizon", cfg.horizon);
    require(s, cfg.horizon >= 1, "horizon must be >= 1");
    cfg.iterations = s.integer_or("iterations", cfg.iterations);
    require(s, cfg.iterations >= 1, "iterations must be >= 1");
    if (s.has("c")) cfg.c = positive(s.at("c"));
    if (s.has("pw_k")) cfg.pw_k = positive(s.at("pw_k"));
    if (s.has("pw_alpha")) {
      cfg.pw_alpha = s.at("pw_alpha").number();
      require(s.at("pw_alpha"), cfg.pw_alpha > 0.0 && cfg.pw_alpha <= 1.0, "must be in (0, 1]");
    }
    if (s.has("seed")) {
      const Field seed = s.at("seed");
      require(seed, seed.raw().is_number_unsigned(), "expected a non-negative integer");
      cfg.seed = seed.raw().get<std::uint64_t>();
    }
    cfg.collision_substeps = s.integer_or("collision_substeps", cfg.collision_substeps);
    require(s, cfg.collision_substeps >= 1, "collision_substeps must be >= 1");
    if (s.has("prior_floor")) {
      cfg.prior_floor = s.at("prior_floor").number();
      require(s.at("prior_floor"), cfg.prior_floor > 0.0 && cfg.prior_floor <= 1.0, "must be in (0, 1]");
    }
    cfg.components = s.integer_or("components", cfg.components);
    if (s.has("strategy")) {
      try {
        cfg.strategy = parse_strategy(s.at("strategy").string());
      } catch (const ConfigError& e) {
        throw ParseError(s.path() + ".strategy", e.what());
      }
    }
    if (s.has("integration")) {
      try {
        cfg.integration = parse_integration(s.at("integration").string());
      } catch (const ConfigError& e) {
        throw ParseError(s.path() + ".integration", e.what());
      }
    }
    if (s.has("selection")) cfg.selection_bias = s.at("selection").boolean();
    if (s.has("uct")) {
      const std::string mode = s.at("uct").string();
      require(s.at("uct"), mode == "sqrt" || mode == "sqrt_log", "expected sqrt|sqrt_log");
      cfg.uct_mode = mode == "sqrt" ? UctMode::kSqrtRatio : UctMode::kSqrtLogRatio;
    }
    if (s.has("action_bounds")) {
      const Field b = s.at("action_bounds");
      cfg.bounds.dv_min = b.at("dv_min").number();
      cfg.bounds.dv_max = b.at("dv_max").number();
      cfg.bounds.dy_min = b.at("dy_min").number();
      cfg.bounds.dy_max = b.at("dy_max").number();
      require(b, cfg.bounds.dv_min <= cfg.bounds.dv_max && cfg.bounds.dy_min <= cfg.bounds.dy_max,
              "min must be <= max");
    }
  }

  if (root.has("randomization")) {
    const Field r = root.at("randomization");
    auto& rr = sc.randomization;
    if (r.has("agent")) {
      const Field a = r.at("agent");
      rr.agent_x = a.range_or("x", {});
      rr.agent_y = a.range_or("y", {});
      rr.agent_heading = a.range_or("heading", {});
      rr.agent_length = a.range_or("length", {});
      rr.agent_width = a.range_or("width", {});
      rr.agent_v = a.range_or("v", {});
      rr.agent_v_desired = a.range_or("v_desired", {});
    }
    if (r.has("obstacle")) {
      const Field o = r.at("obstacle");
      rr.obstacle_x = o.range_or("x", {});
      rr.obstacle_y = o.range_or("y", {});
      rr.obstacle_length = o.range_or("length", {});
      rr.obstacle_width = o.range_or("width", {});
    }
    rr.road_width_scale = r.range_or("road_width_scale", {1.0, 1.0});
    require(r, rr.road_width_scale.lo > 0.0, "road_width_scale must be > 0");
  }

  if (root.has("episode")) {
    const Field e = root.at("episode");
    sc.episode.max_steps = e.integer_or("max_steps", sc.episode.max_steps);
    require(e, sc.episode.max_steps >= 1, "max_steps must be >= 1");
    if (e.has("end_x")) sc.episode.end_x = e.at("end_x").number();
  }

  try {
    sc.scene.validate();
  } catch (const ConfigError& e) {
    throw ParseError("scene", e.what());
  }
  return sc;
}

}  // namespace

void RandomizationRanges::validate() const {
  for (const Range* r : {&agent_x, &agent_y, &agent_heading, &agent_length, &agent_width, &agent_v, &agent_v_desired,
                         &obstacle_x, &obstacle_y, &obstacle_length, &obstacle_width, &road_width_scale})
    if (r->lo > r->hi) throw ConfigError("randomization range has lo > hi");
  if (road_width_scale.lo <= 0.0) throw ConfigError("road_width_scale must be > 0");
}

Scenario parse_scenario(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError("<document>", e.what());
  }
  return parse(doc);
}

std::string serialize_scenario(const Scenario& sc) {
  json doc;
  doc["name"] = sc.name;
  json lanes = json::array();
  for (const auto& l : sc.scene.lanes) lanes.push_back({{"id", l.id}, {"center_offset_m", l.center_offset}, {"width_m", l.width}});
  doc["road"] = {{"length_m", sc.scene.road_length}, {"lanes", lanes}};
  json agents = json::array();
  for (const auto& a : sc.scene.agents)
    agents.push_back({{"x", a.x}, {"y", a.y}, {"heading", a.heading}, {"v", a.v}, {"a", a.a}, {"length", a.length},
                      {"width", a.width}, {"v_desired", a.v_desired}, {"lane_desired", a.lane_desired}});
  doc["agents"] = agents;
  json obstacles = json::array();
  for (const auto& o : sc.scene.obstacles)
    obstacles.push_back({{"x", o.x}, {"y", o.y}, {"length", o.length}, {"width", o.width}});
  doc["obstacles"] = obstacles;
  const auto& rw = sc.search.reward;
  doc["reward"] = {{"w_v", rw.w_v}, {"w_l", rw.w_l}, {"w_a", rw.w_a}, {"collision_penalty", rw.collision_penalty}};
  const auto& s = sc.search;
  doc["search"] = {
      {"dt", s.dt},
      {"horizon", s.horizon},
      {"iterations", s.iterations},
      {"c", s.c},
      {"pw_k", s.pw_k},
      {"pw_alpha", s.pw_alpha},
      {"seed", s.seed},
      {"collision_substeps", s.collision_substeps},
      {"prior_floor", s.prior_floor},
      {"components", s.components},
      {"strategy", to_string(s.strategy)},
      {"integration", to_string(s.integration)},
      {"selection", s.selection_bias},
      {"uct", s.uct_mode == UctMode::kSqrtRatio ? "sqrt" : "sqrt_log"},
      {"action_bounds",
       {{"dv_min", s.bounds.dv_min}, {"dv_max", s.bounds.dv_max}, {"dy_min", s.bounds.dy_min}, {"dy_max", s.bounds.dy_max}}},
  };
  const auto& r = sc.randomization;
  doc["randomization"] = {
      {"agent",
       {{"x", range_json(r.agent_x)},
        {"y", range_json(r.agent_y)},
        {"heading", range_json(r.agent_heading)},
        {"length", range_json(r.agent_length)},
        {"width", range_json(r.agent_width)},
        {"v", range_json(r.agent_v)},
        {"v_desired", range_json(r.agent_v_desired)}}},
      {"obstacle",
       {{"x", range_json(r.obstacle_x)},
        {"y", range_json(r.obstacle_y)},
        {"length", range_json(r.obstacle_length)},
        {"width", range_json(r.obstacle_width)}}},
      {"road_width_scale", range_json(r.road_width_scale)},
  };
  doc["episode"] = {{"max_steps", sc.episode.max_steps}};
  if (sc.episode.end_x) doc["episode"]["end_x"] = *sc.episode.end_x;
  return doc.dump(2) + "\n";
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), "cannot open scenario file");
  std::stringstream buf;
  buf << in.rdbuf();
  Scenario sc = parse_scenario(buf.str());
  if (sc.name.empty()) sc.name = path.stem().string();
  return sc;
}

void save_scenario(const std::filesystem::path& path, const Scenario& scenario) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << serialize_scenario(scenario);
}

Scene randomize_scenario(const Scene& scene, std::uint64_t seed, const RandomizationRanges& ranges) {
  ranges.validate();
  Rng rng(seed);
  auto draw = [&rng](const Range& r) {
    return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Scene s = scene;
    const double scale = draw(ranges.road_width_scale);
    for (auto& l : s.lanes) {
      l.center_offset *= scale;
      l.width *= scale;
    }
    for (auto& a : s.agents) {
      a.x += draw(ranges.agent_x);
      a.y = a.y * scale + draw(ranges.agent_y);
      a.heading += draw(ranges.agent_heading);
      a.length += draw(ranges.agent_length);
      a.width += draw(ranges.agent_width);
      a.v += draw(ranges.agent_v);
      a.v_desired += draw(ranges.agent_v_desired);
    }
    for (auto& o : s.obstacles) {
      o.x += draw(ranges.obstacle_x);
      o.y = o.y * scale + draw(ranges.obstacle_y);
      o.length += draw(ranges.obstacle_length);
      o.width += draw(ranges.obstacle_width);
    }
    try {
      s.validate();
    } catch (const ConfigError&) {
      continue;
    }
    const auto hits = check_collision(s);
    if (std::find(hits.begin(), hits.end(), true) != hits.end()) continue;
    return s;
  }
  throw RandomizationError("no valid scene after 100 randomization attempts");
}

bool episode_finished(const Scene& scene, const EpisodeSpec& episode, int steps_done) {
  if (steps_done >= episode.max_steps) return true;
  if (!episode.end_x) return false;
  for (const auto& a : scene.agents)
    if (a.x < *episode.end_x) return false;
  return true;
}

}  // namespace coopmcts
