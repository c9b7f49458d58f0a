#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "coopmcts/mcts.hpp"
#include "coopmcts/scene.hpp"

namespace coopmcts {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Additive perturbation ranges, except road_width_scale which multiplies
/// the lateral layout (lane centres and widths, agent and obstacle offsets).
struct RandomizationRanges {
  Range agent_x, agent_y, agent_heading, agent_length, agent_width, agent_v, agent_v_desired;
  Range obstacle_x, obstacle_y, obstacle_length, obstacle_width;
  Range road_width_scale{1.0, 1.0};

  void validate() const;
  friend bool operator==(const RandomizationRanges&, const RandomizationRanges&) = default;
};

/// When an executed episode ends. Success means no collision before then.
struct EpisodeSpec {
  int max_steps = 10;
  /// Optional early end once every agent's x reaches this value.
  std::optional<double> end_x;
  friend bool operator==(const EpisodeSpec&, const EpisodeSpec&) = default;
};

struct Scenario {
  std::string name;
  Scene scene;
  SearchConfig search;
  RandomizationRanges randomization;
  EpisodeSpec episode;
};

/// Throws ParseError whose path names the offending field.
Scenario parse_scenario(const std::string& json_text);
std::string serialize_scenario(const Scenario& scenario);
Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const std::filesystem::path& path, const Scenario& scenario);

/// Perturbs the scene uniformly within `ranges`, redrawing until the result
/// is valid and collision free. Throws RandomizationError after 100 attempts.
Scene randomize_scenario(const Scene& scene, std::uint64_t seed, const RandomizationRanges& ranges);

bool episode_finished(const Scene& scene, const EpisodeSpec& episode, int steps_done);

}  // namespace coopmcts
