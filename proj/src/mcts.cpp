#include "coopmcts/mcts.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "coopmcts/error.hpp"

namespace coopmcts {

namespace {

struct Transition {
  double reward = 0.0;
  bool invalid = false;
};

// Advances `agents` in place by `action` and scores the step cooperatively.
Transition apply_action(const Scene& geometry, const CollisionChecker& checker, std::vector<AgentState>& agents,
                        const JointAction& action, const SearchConfig& config, std::vector<AgentState>& scratch,
                        std::vector<bool>& collided) {
  scratch = agents;
  for (std::size_t i = 0; i < agents.size(); ++i) agents[i] = step_kinematics(scratch[i], action[i], config.dt);
  Transition t;
  t.invalid = checker.check(scratch, agents, config.collision_substeps, collided);
  for (std::size_t i = 0; i < agents.size(); ++i)
    t.reward += step_reward(scratch[i], agents[i], action[i], collided[i], config.reward, geometry);
  return t;
}

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double mode_density(const FactoredActionGmm& f) {
  double best = 0.0;
  for (double mu_lon : f.lon.mu)
    for (double mu_lat : f.lat.mu) best = std::max(best, joint_density(f, {mu_lon, mu_lat}));
  return best;
}

}  // namespace

void SearchConfig::validate() const {
  if (iterations < 1) throw ConfigError("search.iterations must be >= 1");
  if (!(c > 0.0)) throw ConfigError("search.c must be > 0");
  if (!(pw_k > 0.0)) throw ConfigError("search.pw_k must be > 0");
  if (!(pw_alpha > 0.0 && pw_alpha <= 1.0)) throw ConfigError("search.pw_alpha must be in (0, 1]");
  if (horizon < 1) throw ConfigError("search.horizon must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("search.dt must be > 0");
  if (components < 1 || components > 3) throw ConfigError("search.components must be in [1, 3]");
  if (!(prior_floor > 0.0 && prior_floor <= 1.0)) throw ConfigError("search.prior_floor must be in (0, 1]");
  if (bounds.dv_min > bounds.dv_max || bounds.dy_min > bounds.dy_max)
    throw ConfigError("search.action_bounds must satisfy min <= max");
  if (collision_substeps < 1) throw ConfigError("search.collision_substeps must be >= 1");
  if (!(reward.collision_penalty < 0.0)) throw ConfigError("reward.collision_penalty must be < 0");
  if (reward.w_v < 0.0 || reward.w_l < 0.0 || reward.w_a < 0.0) throw ConfigError("reward weights must be >= 0");
}

std::string to_string(Strategy s) { return s == Strategy::kBaseline ? "baseline" : "mdn"; }

std::string to_string(Integration i) {
  switch (i) {
    case Integration::kNone: return "none";
    case Integration::kRoot: return "root";
    case Integration::kAll: return "all";
  }
  return "root";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "baseline") return Strategy::kBaseline;
  if (s == "mdn") return Strategy::kMdn;
  throw ConfigError("unknown strategy '" + s + "' (expected baseline|mdn)");
}

Integration parse_integration(const std::string& s) {
  if (s == "none") return Integration::kNone;
  if (s == "root") return Integration::kRoot;
  if (s == "all") return Integration::kAll;
  throw ConfigError("unknown integration '" + s + "' (expected root|all|none)");
}

AgentPriors MdnPrior::predict(std::span<const Scene> history) const {
  const MdnPrediction pred = predict_policy(weights_, history, 0);
  AgentPriors out(history.back().agents.size());
  for (std::size_t s = 0; s < pred.slots.size(); ++s) {
    const int agent = pred.slot_agent[s];
    if (pred.valid[s] && agent >= 0 && agent < static_cast<int>(out.size())) out[agent] = pred.slots[s];
  }
  return out;
}

double uct(double q, int n_s, int n_sa, double c, double prior, UctMode mode) {
  const double ns = static_cast<double>(n_s);
  const double ratio = (mode == UctMode::kSqrtLogRatio ? std::log(ns) : ns) / static_cast<double>(n_sa);
  return q + prior * c * std::sqrt(ratio);
}

bool expandable(std::size_t children, int n_s, double pw_k, double pw_alpha) {
  const double limit = std::ceil(pw_k * std::pow(static_cast<double>(n_s), pw_alpha));
  return static_cast<double>(children) < limit;
}

bool expandable(const Node& node, const SearchConfig& config) {
  return !node.terminal && expandable(node.edges.size(), node.visits, config.pw_k, config.pw_alpha);
}

int select(const Node& node, const SearchConfig& config) {
  int best = -1;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < node.edges.size(); ++i) {
    const Edge& e = node.edges[i];
    const double value = uct(e.q, node.visits, std::max(1, e.visits), config.c, e.prior, config.uct_mode);
    if (best < 0 || value > best_value) {
      best = static_cast<int>(i);
      best_value = value;
    }
  }
  return best;
}

JointAction sample_uniform_action(std::size_t agents, Rng& rng, const ActionBounds& bounds) {
  JointAction a(agents);
  for (auto& act : a) {
    act.dv = uniform(rng, bounds.dv_min, bounds.dv_max);
    act.dy = uniform(rng, bounds.dy_min, bounds.dy_max);
  }
  return a;
}

JointAction sample_biased_action(const AgentPriors& priors, std::size_t agents, Rng& rng, const ActionBounds& bounds,
                                 std::vector<int>* fallbacks) {
  JointAction a(agents);
  for (std::size_t i = 0; i < agents; ++i) {
    if (i < priors.size() && priors[i]) {
      a[i].dv = sample(priors[i]->lon, rng, bounds.dv_min, bounds.dv_max);
      a[i].dy = sample(priors[i]->lat, rng, bounds.dy_min, bounds.dy_max);
    } else {
      a[i].dv = uniform(rng, bounds.dv_min, bounds.dv_max);
      a[i].dy = uniform(rng, bounds.dy_min, bounds.dy_max);
      if (fallbacks) fallbacks->push_back(static_cast<int>(i));
    }
  }
  return a;
}

double normalized_prior(const AgentPriors& priors, const JointAction& action, double floor) {
  double p = 1.0;
  for (std::size_t i = 0; i < action.size() && i < priors.size(); ++i) {
    if (!priors[i]) continue;
    const double peak = mode_density(*priors[i]);
    if (!(peak > 0.0)) continue;
    p *= joint_density(*priors[i], action[i]) / peak;
  }
  return std::clamp(p, floor, 1.0);
}

double simulate(const Scene& geometry, const CollisionChecker& checker, std::vector<AgentState> agents, int depth,
                Rng& rng, const SearchConfig& config) {
  double total = 0.0;
  std::vector<AgentState> scratch;
  std::vector<bool> collided;
  for (int d = depth; d < config.horizon; ++d) {
    const JointAction a = sample_uniform_action(agents.size(), rng, config.bounds);
    const Transition t = apply_action(geometry, checker, agents, a, config, scratch, collided);
    total += t.reward;
    if (t.invalid) break;
  }
  return total;
}

void backpropagate(SearchTree& tree, std::span<const PathStep> path, double ret) {
  for (const auto& step : path) {
    Node& node = tree.nodes[step.node];
    Edge& e = node.edges[step.edge];
    e.visits += 1;
    node.visits += 1;
    e.return_sum += ret;
    e.q += (ret - e.q) / e.visits;
  }
}

Planner::Planner(Scene scene, SearchConfig config, const PolicyPrior* prior, std::vector<Scene> past)
    : scene_(std::move(scene)),
      config_(config),
      prior_(prior),
      past_(std::move(past)),
      checker_(scene_),
      rng_(config.seed) {
  config_.validate();
  scene_.validate();
  if (config_.strategy == Strategy::kMdn && prior_ == nullptr)
    throw ConfigError("the mdn strategy needs a policy prior (weights)");
  Node root;
  root.agents = scene_.agents;
  tree_.nodes.push_back(std::move(root));
}

std::vector<Scene> Planner::history_for(int node_index) const {
  const int keep = 8;
  std::vector<int> chain;
  for (int n = node_index; n >= 0 && static_cast<int>(chain.size()) < keep; n = tree_.nodes[n].parent)
    chain.push_back(n);
  std::vector<Scene> history;
  const int from_past = std::max(0, keep - static_cast<int>(chain.size()));
  const int past_start = std::max(0, static_cast<int>(past_.size()) - from_past);
  for (int i = past_start; i < static_cast<int>(past_.size()); ++i) history.push_back(past_[i]);
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    Scene s = scene_;
    s.agents = tree_.nodes[*it].agents;
    s.t = scene_.t + tree_.nodes[*it].depth;
    history.push_back(std::move(s));
  }
  return history;
}

bool Planner::biased_expansion(int node_index) const {
  if (config_.strategy != Strategy::kMdn) return false;
  return config_.integration == Integration::kAll || (config_.integration == Integration::kRoot && node_index == 0);
}

bool Planner::needs_prediction(int node_index) const {
  return config_.strategy == Strategy::kMdn && (config_.selection_bias || biased_expansion(node_index));
}

const AgentPriors& Planner::prediction_for(int node_index) {
  Node& node = tree_.nodes[node_index];
  if (!node.prediction) {
    const auto history = history_for(node_index);
    tree_.nodes[node_index].prediction = prior_->predict(history);
  }
  return *tree_.nodes[node_index].prediction;
}

int Planner::expand(int node_index) {
  JointAction action;
  double prior_weight = 1.0;
  if (needs_prediction(node_index)) {
    const AgentPriors& pred = prediction_for(node_index);
    if (biased_expansion(node_index)) {
      std::vector<int> fallbacks;
      action = sample_biased_action(pred, scene_.agents.size(), rng_, config_.bounds, &fallbacks);
      fallbacks_ += static_cast<int>(fallbacks.size());
    } else {
      action = sample_uniform_action(scene_.agents.size(), rng_, config_.bounds);
    }
    if (config_.selection_bias) prior_weight = normalized_prior(pred, action, config_.prior_floor);
  } else {
    action = sample_uniform_action(scene_.agents.size(), rng_, config_.bounds);
  }

  Node child;
  child.parent = node_index;
  child.depth = tree_.nodes[node_index].depth + 1;
  child.agents = tree_.nodes[node_index].agents;
  std::vector<AgentState> scratch;
  const Transition t = apply_action(scene_, checker_, child.agents, action, config_, scratch, collided_);
  child.terminal = t.invalid || child.depth >= config_.horizon;

  Edge e;
  e.action = std::move(action);
  e.prior = prior_weight;
  e.reward = t.reward;
  e.child = static_cast<int>(tree_.nodes.size());
  tree_.nodes.push_back(std::move(child));
  tree_.nodes[node_index].edges.push_back(std::move(e));
  return static_cast<int>(tree_.nodes[node_index].edges.size()) - 1;
}

double Planner::iterate() {
  std::vector<PathStep> path;
  double ret = 0.0;
  int node = 0;
  while (!tree_.nodes[node].terminal) {
    if (expandable(tree_.nodes[node], config_)) {
      const int edge = expand(node);
      path.push_back({node, edge});
      const Edge& e = tree_.nodes[node].edges[edge];
      ret += e.reward;
      const Node& leaf = tree_.nodes[e.child];
      if (!leaf.terminal) ret += simulate(scene_, checker_, leaf.agents, leaf.depth, rng_, config_);
      break;
    }
    const int edge = select(tree_.nodes[node], config_);
    path.push_back({node, edge});
    const Edge& e = tree_.nodes[node].edges[edge];
    ret += e.reward;
    node = e.child;
  }
  backpropagate(tree_, path, ret);
  returns_.push_back(ret);
  return ret;
}

void Planner::run(int iterations) {
  for (int i = 0; i < iterations; ++i) iterate();
}

SearchResult Planner::result() const {
  SearchResult r;
  const Node& root = tree_.root();
  r.root_visits = root.visits;
  r.iterations = static_cast<int>(returns_.size());
  r.iteration_returns = returns_;
  for (std::size_t i = 0; i < root.edges.size(); ++i) {
    const Edge& e = root.edges[i];
    r.root_children.push_back({e.action, e.visits, e.q});
    if (r.best_index < 0 || e.visits > root.edges[r.best_index].visits ||
        (e.visits == root.edges[r.best_index].visits && e.q > root.edges[r.best_index].q))
      r.best_index = static_cast<int>(i);
  }
  if (r.best_index >= 0) r.best = root.edges[r.best_index].action;
  if (root.terminal) r.termination = "terminal root";
  return r;
}

SearchResult search(const Scene& scene, const SearchConfig& config, const PolicyPrior* prior,
                    std::span<const Scene> past) {
  const auto start = std::chrono::steady_clock::now();
  Planner planner(scene, config, prior, std::vector<Scene>(past.begin(), past.end()));
  planner.run(config.iterations);
  SearchResult r = planner.result();
  r.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

SearchResult search(const Scene& scene, const SearchConfig& config, const MdnWeights* weights,
                    std::span<const Scene> past) {
  if (weights == nullptr) return search(scene, config, static_cast<const PolicyPrior*>(nullptr), past);
  const MdnPrior prior(*weights);
  return search(scene, config, &prior, past);
}

JointAction standalone_policy(const AgentPriors& priors, std::size_t agents, Rng& rng, const ActionBounds& bounds,
                              int samples) {
  JointAction out(agents);
  for (std::size_t i = 0; i < agents; ++i) {
    if (i >= priors.size() || !priors[i]) continue;
    double best = -1.0;
    for (int s = 0; s < samples; ++s) {
      const Action a{sample(priors[i]->lon, rng, bounds.dv_min, bounds.dv_max),
                     sample(priors[i]->lat, rng, bounds.dy_min, bounds.dy_max)};
      const double d = joint_density(*priors[i], a);
      if (d > best) {
        best = d;
        out[i] = a;
      }
    }
  }
  return out;
}

JointAction mdn_standalone_policy(const MdnWeights& weights, std::span<const Scene> history, Rng& rng, int samples) {
  const MdnPrior prior(weights);
  return standalone_policy(prior.predict(history), history.back().agents.size(), rng, weights.metadata().bounds,
                           samples);
}

}  // namespace coopmcts
