#pragma once

#include <cstdint>
#include <utility>
#include <span>
#include <vector>

namespace coopmcts {

inline constexpr int kMaxAgents = 8;

struct LaneSpec {
  int id = 0;
  double center_offset = 0.0;  // m, lateral, from the road reference line
  double width = 3.5;          // m

  friend bool operator==(const LaneSpec&, const LaneSpec&) = default;
};

struct AgentState {
  double x = 0.0;        // m along the road
  double y = 0.0;        // m lateral, positive to the left
  double heading = 0.0;  // rad in (-pi, pi]
  double v = 0.0;        // m/s
  double a = 0.0;        // m/s^2
  double length = 4.5;
  double width = 1.8;
  double v_desired = 0.0;
  int lane_desired = 0;

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct Obstacle {
  double x = 0.0;
  double y = 0.0;
  double length = 1.0;
  double width = 1.0;

  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

struct Action {
  double dv = 0.0;  // change in longitudinal velocity, m/s
  double dy = 0.0;  // change in lateral position, m

  friend bool operator==(const Action&, const Action&) = default;
};

using JointAction = std::vector<Action>;

struct ActionBounds {
  double dv_min = -5.0;
  double dv_max = 5.0;
  double dy_min = -3.5;
  double dy_max = 3.5;

  bool contains(const Action& a) const {
    return a.dv >= dv_min && a.dv <= dv_max && a.dy >= dy_min && a.dy <= dy_max;
  }
  friend bool operator==(const ActionBounds&, const ActionBounds&) = default;
};

struct RewardWeights {
  double w_v = 1.0;
  double w_l = 0.5;
  double w_a = 0.2;
  double collision_penalty = -1000.0;

  friend bool operator==(const RewardWeights&, const RewardWeights&) = default;
};

/// Immutable world snapshot on a straight road in road-aligned coordinates.
struct Scene {
  std::vector<LaneSpec> lanes;
  double road_length = 1000.0;
  std::vector<AgentState> agents;
  std::vector<Obstacle> obstacles;
  int t = 0;

  /// Index of the lane with `id` in id-sorted order, or -1.
  int lane_rank(int id) const;
  const LaneSpec* find_lane(int id) const;
  double lane_center(int id) const;
  /// Throws ConfigError naming the violated invariant.
  void validate() const;
  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Per-agent outcome of one transition.
struct StepOutcome {
  std::vector<double> rewards;
  std::vector<bool> collided;
  bool any_collision = false;
};

/// One recorded transition: the state before the joint action, the action,
/// and the per-agent rewards it produced.
struct TrajectoryStep {
  Scene scene;
  JointAction action;
  std::vector<double> rewards;
};

struct Trajectory {
  enum class Terminal { kNone, kHorizon, kInvalid };
  std::vector<TrajectoryStep> steps;
  Terminal terminal = Terminal::kNone;
};

AgentState step_kinematics(const AgentState& state, const Action& action, double dt);

/// Advances every agent by its action. The returned scene has t + 1.
Scene step_scene(const Scene& scene, const JointAction& action, double dt);

/// Per-agent collision flags for the transition `before` -> `after`, sampled
/// at `substeps` interpolation points across the step (the end state is
/// always included). Flags an agent that overlaps an obstacle or another
/// agent, or leaves the drivable area.
std::vector<bool> check_collision(const Scene& before, const Scene& after, int substeps);

/// Static check of a single snapshot.
std::vector<bool> check_collision(const Scene& scene);

/// Precomputed static geometry (drivable intervals, obstacle boxes) for
/// repeated collision checks against one road.
class CollisionChecker {
 public:
  explicit CollisionChecker(const Scene& geometry);

  /// Writes per-agent flags into `out`; returns true if any flag is set.
  bool check(std::span<const AgentState> before, std::span<const AgentState> after, int substeps,
             std::vector<bool>& out) const;

 private:
  struct Box {
    double x0, x1, y0, y1;
  };
  bool drivable(const Box& b) const;

  double road_length_;
  std::vector<std::pair<double, double>> intervals_;
  std::vector<Box> obstacles_;
};

double step_reward(const AgentState& prev, const AgentState& next, const Action& action,
                   bool collided, const RewardWeights& w, const Scene& scene);

/// Applies the joint action, checks collisions and scores every agent.
StepOutcome evaluate_step(const Scene& before, const Scene& after, const JointAction& action,
                          const RewardWeights& w, int substeps);

/// Cooperative return: sum over steps of the sum of per-agent rewards.
double trajectory_return(const Trajectory& traj);

}  // namespace coopmcts
