#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coopmcts/gmm.hpp"
#include "coopmcts/mdn.hpp"
#include "coopmcts/scene.hpp"

namespace coopmcts {

enum class Strategy { kBaseline, kMdn };
/// Where learned priors steer expansion. kNone keeps the sampler uniform
/// even for the mdn strategy (selection bias may still apply).
enum class Integration { kNone, kRoot, kAll };
enum class UctMode { kSqrtRatio, kSqrtLogRatio };

struct SearchConfig {
  int iterations = 1000;
  double c = 1.0;
  double pw_k = 2.0;
  double pw_alpha = 0.5;
  int horizon = 8;
  double dt = 1.0;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::kBaseline;
  Integration integration = Integration::kRoot;
  bool selection_bias = false;
  int components = 2;
  double prior_floor = 0.05;
  UctMode uct_mode = UctMode::kSqrtRatio;
  ActionBounds bounds;
  int collision_substeps = 10;
  RewardWeights reward;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

std::string to_string(Strategy s);
std::string to_string(Integration i);
Strategy parse_strategy(const std::string& s);
Integration parse_integration(const std::string& s);

using AgentPriors = std::vector<std::optional<FactoredActionGmm>>;

/// Source of per-agent action mixtures for a scene history (oldest first).
class PolicyPrior {
 public:
  virtual ~PolicyPrior() = default;
  virtual AgentPriors predict(std::span<const Scene> history) const = 0;
};

/// Runs the network once from agent 0's point of view and maps the output
/// slots back onto agent indices.
class MdnPrior final : public PolicyPrior {
 public:
  explicit MdnPrior(const MdnWeights& weights) : weights_(weights) {}
  AgentPriors predict(std::span<const Scene> history) const override;

 private:
  const MdnWeights& weights_;
};

class FunctionPrior final : public PolicyPrior {
 public:
  using Fn = std::function<AgentPriors(std::span<const Scene>)>;
  explicit FunctionPrior(Fn fn) : fn_(std::move(fn)) {}
  AgentPriors predict(std::span<const Scene> history) const override { return fn_(history); }

 private:
  Fn fn_;
};

struct Edge {
  JointAction action;
  int visits = 0;         // N(s, a)
  double q = 0.0;         // incremental mean of returns
  double return_sum = 0;  // shadow sum, q == return_sum / visits
  double prior = 1.0;     // normalized density weight for the exploration term
  double reward = 0.0;    // cooperative reward of the transition
  int child = -1;         // node index
};

struct Node {
  int parent = -1;
  int depth = 0;
  bool terminal = false;  // horizon reached or invalid state
  int visits = 1;         // N(s), counting the creation visit
  std::vector<AgentState> agents;
  std::vector<Edge> edges;
  std::optional<AgentPriors> prediction;
};

/// Arena of nodes; node 0 is the root.
struct SearchTree {
  std::vector<Node> nodes;
  const Node& root() const { return nodes.front(); }
};

struct RootChild {
  JointAction action;
  int visits = 0;
  double q = 0.0;
};

struct SearchResult {
  JointAction best;
  int best_index = -1;
  std::vector<RootChild> root_children;
  int root_visits = 0;
  std::vector<double> iteration_returns;
  int iterations = 0;
  std::string termination = "iteration budget";
  double wall_time_ms = 0.0;
};

/// UCT value; `prior` scales the exploration term (1 leaves it unchanged).
double uct(double q, int n_s, int n_sa, double c, double prior = 1.0, UctMode mode = UctMode::kSqrtRatio);

/// Progressive widening: true iff children < ceil(pw_k * n_s^pw_alpha).
bool expandable(std::size_t children, int n_s, double pw_k, double pw_alpha);
bool expandable(const Node& node, const SearchConfig& config);

/// Index of the edge with maximal UCT; ties go to the lowest index.
int select(const Node& node, const SearchConfig& config);

JointAction sample_uniform_action(std::size_t agents, Rng& rng, const ActionBounds& bounds);

/// Per-agent axis draws from the priors; agents without a prior fall back
/// to uniform and are reported through `fallbacks` when given.
JointAction sample_biased_action(const AgentPriors& priors, std::size_t agents, Rng& rng,
                                 const ActionBounds& bounds, std::vector<int>* fallbacks = nullptr);

/// Exploration weight of `action` under `priors`: per agent the density
/// divided by its largest value over component-mean pairs, multiplied over
/// agents and clamped to [floor, 1]. Agents without a prior contribute 1.
double normalized_prior(const AgentPriors& priors, const JointAction& action, double floor);

/// Uniform random rollout from `agents` at `depth` until the horizon or an
/// invalid state; returns the cooperative return of the rollout.
double simulate(const Scene& geometry, const CollisionChecker& checker, std::vector<AgentState> agents, int depth,
                Rng& rng, const SearchConfig& config);

struct PathStep {
  int node;
  int edge;
};

/// For every edge on the path: N(s,a) += 1, N(s) += 1, q += (R - q) / N(s,a).
void backpropagate(SearchTree& tree, std::span<const PathStep> path, double ret);

/// Owns one search tree. Not thread-safe; run independent planners in
/// parallel instead.
class Planner {
 public:
  /// `past` holds earlier scenes of the episode (oldest first) for feature
  /// history; `prior` must outlive the planner and is required for the mdn
  /// strategy.
  Planner(Scene scene, SearchConfig config, const PolicyPrior* prior = nullptr, std::vector<Scene> past = {});

  /// Runs one select/expand/simulate/backpropagate loop and returns its return.
  double iterate();
  void run(int iterations);

  const SearchTree& tree() const { return tree_; }
  const Scene& scene() const { return scene_; }
  SearchResult result() const;
  /// Agents that fell back to uniform sampling because no prior was available.
  int fallback_count() const { return fallbacks_; }

 private:
  const AgentPriors& prediction_for(int node_index);
  std::vector<Scene> history_for(int node_index) const;
  bool biased_expansion(int node_index) const;
  bool needs_prediction(int node_index) const;
  int expand(int node_index);

  Scene scene_;
  SearchConfig config_;
  const PolicyPrior* prior_;
  std::vector<Scene> past_;
  CollisionChecker checker_;
  Rng rng_;
  SearchTree tree_;
  std::vector<double> returns_;
  std::vector<bool> collided_;
  int fallbacks_ = 0;
};

SearchResult search(const Scene& scene, const SearchConfig& config, const PolicyPrior* prior = nullptr,
                    std::span<const Scene> past = {});
SearchResult search(const Scene& scene, const SearchConfig& config, const MdnWeights* weights,
                    std::span<const Scene> past = {});

/// Draws `samples` actions per agent from its mixture and keeps the draw of
/// highest joint density. Agents without a prior keep the zero action.
JointAction standalone_policy(const AgentPriors& priors, std::size_t agents, Rng& rng, const ActionBounds& bounds,
                              int samples = 1000);
JointAction mdn_standalone_policy(const MdnWeights& weights, std::span<const Scene> history, Rng& rng,
                                  int samples = 1000);

}  // namespace coopmcts
