#include "coopmcts/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "coopmcts/error.hpp"

namespace coopmcts {

namespace {

struct Box {
  double x0, x1, y0, y1;
};

Box box_of(double x, double y, double length, double width) {
  return {x - 0.5 * length, x + 0.5 * length, y - 0.5 * width, y + 0.5 * width};
}

// Lateral drivable intervals: the union of lane extents, merged.
std::vector<std::pair<double, double>> drivable_intervals(const std::vector<LaneSpec>& lanes) {
  std::vector<std::pair<double, double>> iv;
  iv.reserve(lanes.size());
  for (const auto& l : lanes) iv.emplace_back(l.center_offset - 0.5 * l.width, l.center_offset + 0.5 * l.width);
  std::sort(iv.begin(), iv.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& seg : iv) {
    if (!merged.empty() && seg.first <= merged.back().second + 1e-9)
      merged.back().second = std::max(merged.back().second, seg.second);
    else
      merged.push_back(seg);
  }
  return merged;
}

bool inside_drivable(const Box& b, double road_length,
                     const std::vector<std::pair<double, double>>& intervals) {
  if (b.x0 < 0.0 || b.x1 > road_length) return false;
  for (const auto& [lo, hi] : intervals)
    if (b.y0 >= lo && b.y1 <= hi) return true;
  return false;
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  while (a <= -pi) a += 2 * pi;
  while (a > pi) a -= 2 * pi;
  return a;
}

}  // namespace

int Scene::lane_rank(int id) const {
  int rank = 0;
  bool found = false;
  for (const auto& l : lanes) {
    if (l.id < id) ++rank;
    if (l.id == id) found = true;
  }
  return found ? rank : -1;
}

const LaneSpec* Scene::find_lane(int id) const {
  for (const auto& l : lanes)
    if (l.id == id) return &l;
  return nullptr;
}

double Scene::lane_center(int id) const {
  const LaneSpec* l = find_lane(id);
  if (l == nullptr) throw ConfigError("unknown lane id " + std::to_string(id));
  return l->center_offset;
}

void Scene::validate() const {
  if (lanes.empty()) throw ConfigError("scene has no lanes");
  std::set<int> ids;
  for (const auto& l : lanes) {
    if (l.id < 0) throw ConfigError("lane id must be >= 0");
    if (!ids.insert(l.id).second) throw ConfigError("duplicate lane id " + std::to_string(l.id));
    if (!(l.width > 0.0)) throw ConfigError("lane " + std::to_string(l.id) + " width must be > 0");
  }
  std::vector<LaneSpec> sorted = lanes;
  std::sort(sorted.begin(), sorted.end(),
            [](const LaneSpec& a, const LaneSpec& b) { return a.center_offset < b.center_offset; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    double gap = (sorted[i].center_offset - 0.5 * sorted[i].width) -
                 (sorted[i - 1].center_offset + 0.5 * sorted[i - 1].width);
    if (gap < -1e-9) throw ConfigError("lanes " + std::to_string(sorted[i - 1].id) + " and " +
                                       std::to_string(sorted[i].id) + " overlap");
  }
  if (!(road_length > 0.0)) throw ConfigError("road length must be > 0");
  if (agents.empty() || agents.size() > static_cast<std::size_t>(kMaxAgents))
    throw ConfigError("agent count must be in [1, 8], got " + std::to_string(agents.size()));
  const auto intervals = drivable_intervals(lanes);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& a = agents[i];
    const std::string who = "agent " + std::to_string(i);
    if (!(a.v >= 0.0)) throw ConfigError(who + ": v must be >= 0");
    if (!(a.v_desired >= 0.0)) throw ConfigError(who + ": v_desired must be >= 0");
    if (!(a.length > 0.0 && a.width > 0.0)) throw ConfigError(who + ": dimensions must be > 0");
    if (find_lane(a.lane_desired) == nullptr)
      throw ConfigError(who + ": lane_desired " + std::to_string(a.lane_desired) + " does not exist");
    if (!inside_drivable(box_of(a.x, a.y, a.length, a.width), road_length, intervals))
      throw ConfigError(who + ": outside road bounds");
  }
  for (std::size_t i = 0; i < obstacles.size(); ++i)
    if (!(obstacles[i].length > 0.0 && obstacles[i].width > 0.0))
      throw ConfigError("obstacle " + std::to_string(i) + ": dimensions must be > 0");
}

AgentState step_kinematics(const AgentState& state, const Action& action, double dt) {
  AgentState next = state;
  next.v = std::max(0.0, state.v + action.dv);
  const double advance = 0.5 * (state.v + next.v) * dt;
  next.x = state.x + advance;
  next.y = state.y + action.dy;
  next.heading = (action.dy == 0.0 && advance == 0.0) ? 0.0 : wrap_angle(std::atan2(action.dy, advance));
  next.a = action.dv / dt;
  return next;
}

Scene step_scene(const Scene& scene, const JointAction& action, double dt) {
  Scene next = scene;
  for (std::size_t i = 0; i < scene.agents.size(); ++i)
    next.agents[i] = step_kinematics(scene.agents[i], action[i], dt);
  next.t = scene.t + 1;
  return next;
}

CollisionChecker::CollisionChecker(const Scene& geometry)
    : road_length_(geometry.road_length), intervals_(drivable_intervals(geometry.lanes)) {
  for (const auto& o : geometry.obstacles) {
    const auto b = box_of(o.x, o.y, o.length, o.width);
    obstacles_.push_back({b.x0, b.x1, b.y0, b.y1});
  }
}

bool CollisionChecker::drivable(const Box& b) const {
  return inside_drivable({b.x0, b.x1, b.y0, b.y1}, road_length_, intervals_);
}

bool CollisionChecker::check(std::span<const AgentState> before, std::span<const AgentState> after,
                             int substeps, std::vector<bool>& out) const {
  const std::size_t n = after.size();
  if (n > static_cast<std::size_t>(kMaxAgents) || before.size() != n)
    throw ConfigError("collision check expects matching agent lists of at most 8 agents");
  out.assign(n, false);
  std::array<Box, kMaxAgents> boxes{};
  const int steps = std::max(1, substeps);
  auto hit = [](const Box& a, const Box& b) {
    return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
  };
  for (int s = 1; s <= steps; ++s) {
    const double f = static_cast<double>(s) / steps;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = before[i];
      const auto& q = after[i];
      const auto b = box_of(p.x + f * (q.x - p.x), p.y + f * (q.y - p.y), q.length, q.width);
      boxes[i] = {b.x0, b.x1, b.y0, b.y1};
      if (!drivable(boxes[i])) out[i] = true;
      for (const auto& o : obstacles_)
        if (hit(boxes[i], o)) out[i] = true;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (hit(boxes[i], boxes[j])) out[i] = out[j] = true;
  }
  return std::find(out.begin(), out.end(), true) != out.end();
}

std::vector<bool> check_collision(const Scene& before, const Scene& after, int substeps) {
  std::vector<bool> out;
  CollisionChecker(after).check(before.agents, after.agents, substeps, out);
  return out;
}

std::vector<bool> check_collision(const Scene& scene) {
  return check_collision(scene, scene, 1);
}

double step_reward(const AgentState& /*prev*/, const AgentState& next, const Action& action,
                   bool collided, const RewardWeights& w, const Scene& scene) {
  double r = -w.w_v * std::abs(next.v - next.v_desired) -
             w.w_l * std::abs(next.y - scene.lane_center(next.lane_desired)) -
             w.w_a * (std::abs(action.dv) + std::abs(action.dy));
  if (collided) r += w.collision_penalty;
  return r;
}

StepOutcome evaluate_step(const Scene& before, const Scene& after, const JointAction& action,
                          const RewardWeights& w, int substeps) {
  StepOutcome out;
  out.collided = check_collision(before, after, substeps);
  out.rewards.resize(after.agents.size());
  for (std::size_t i = 0; i < after.agents.size(); ++i) {
    out.rewards[i] = step_reward(before.agents[i], after.agents[i], action[i], out.collided[i], w, after);
    out.any_collision = out.any_collision || out.collided[i];
  }
  return out;
}

double trajectory_return(const Trajectory& traj) {
  double total = 0.0;
  for (const auto& step : traj.steps)
    for (double r : step.rewards) total += r;
  return total;
}

}  // namespace coopmcts
