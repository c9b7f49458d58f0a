#include "coopmcts/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "coopmcts/error.hpp"

namespace coopmcts {

namespace {

// Index range [first, last) of cells whose centres fall inside [lo, hi),
// for cells of size `cell` where cell i spans [(i - half) * cell, (i - half + 1) * cell).
std::pair<int, int> cell_span(double lo, double hi, double cell, int count) {
  const int half = count / 2;
  // centre of cell i: (i - half + 0.5) * cell  in [lo, hi)
  int first = static_cast<int>(std::ceil(lo / cell + half - 0.5));
  int last = static_cast<int>(std::ceil(hi / cell + half - 0.5));
  return {std::clamp(first, 0, count), std::clamp(last, 0, count)};
}

void paint(SemanticGrid& grid, int channel, double x0, double x1, double y0, double y1,
           const FeatureConfig& cfg, std::uint8_t value) {
  const auto [c0, c1] = cell_span(x0, x1, cfg.cell_lon, cfg.grid_cols);
  const auto [r0, r1] = cell_span(y0, y1, cfg.cell_lat, cfg.grid_rows);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) grid.at(channel, r, c) = value;
}

float clamp_unit(double v) { return static_cast<float>(std::clamp(v, -1.0, 1.0)); }

}  // namespace

SemanticGrid rasterize(const Scene& scene, int ego_index, const FeatureConfig& cfg) {
  if (ego_index < 0 || ego_index >= static_cast<int>(scene.agents.size()))
    throw ConfigError("ego index out of range");
  if (static_cast<int>(scene.lanes.size()) >= cfg.lane_classes)
    throw ConfigError("scene has more lanes than the lane map can encode");
  SemanticGrid grid{cfg.grid_rows, cfg.grid_cols,
                    std::vector<std::uint8_t>(static_cast<std::size_t>(cfg.grid_size()), 0)};
  const auto& ego = scene.agents[ego_index];

  for (const auto& lane : scene.lanes) {
    const auto cls = static_cast<std::uint8_t>(scene.lane_rank(lane.id) + 1);
    paint(grid, 0, 0.0 - ego.x, scene.road_length - ego.x, lane.center_offset - 0.5 * lane.width - ego.y,
          lane.center_offset + 0.5 * lane.width - ego.y, cfg, cls);
  }
  for (const auto& o : scene.obstacles)
    paint(grid, 1, o.x - 0.5 * o.length - ego.x, o.x + 0.5 * o.length - ego.x, o.y - 0.5 * o.width - ego.y,
          o.y + 0.5 * o.width - ego.y, cfg, kStatic);
  for (const auto& a : scene.agents)
    paint(grid, 1, a.x - 0.5 * a.length - ego.x, a.x + 0.5 * a.length - ego.x, a.y - 0.5 * a.width - ego.y,
          a.y + 0.5 * a.width - ego.y, cfg, kDynamic);
  return grid;
}

ScalarFeatures build_scalars(std::span<const Scene> history, int ego_index, const FeatureConfig& cfg) {
  if (history.empty()) throw ConfigError("scalar features need at least one scene");
  const Scene& now = history.back();
  if (ego_index < 0 || ego_index >= static_cast<int>(now.agents.size()))
    throw ConfigError("ego index out of range");

  ScalarFeatures out;
  out.values.assign(static_cast<std::size_t>(cfg.scalar_size()), 0.0f);
  out.mask.assign(cfg.slots, 0);
  out.slot_agent.assign(cfg.slots, -1);

  // Slot 0 is the ego, the rest follow agent order.
  int slot = 0;
  out.slot_agent[slot++] = ego_index;
  for (int i = 0; i < static_cast<int>(now.agents.size()) && slot < cfg.slots; ++i)
    if (i != ego_index) out.slot_agent[slot++] = i;

  const auto& ego_now = now.agents[ego_index];
  const int lanes = static_cast<int>(now.lanes.size());
  const int available = static_cast<int>(history.size());
  for (int s = 0; s < cfg.slots; ++s) {
    const int agent = out.slot_agent[s];
    if (agent < 0) continue;
    out.mask[s] = 1;
    for (int step = 0; step < cfg.history; ++step) {
      // Right-align the available history; pad the front with the oldest scene.
      const int src = std::max(0, available - cfg.history + step);
      const Scene& scene = history[src];
      if (agent >= static_cast<int>(scene.agents.size())) continue;
      const auto& a = scene.agents[agent];
      float* v = &out.values[(static_cast<std::size_t>(s) * cfg.history + step) * FeatureConfig::kScalarValues];
      v[kHeading] = clamp_unit(a.heading / std::numbers::pi);
      v[kX] = clamp_unit((a.x - ego_now.x) / cfg.x_norm);
      v[kY] = clamp_unit((a.y - ego_now.y) / cfg.y_norm);
      v[kV] = clamp_unit(a.v / cfg.v_norm);
      v[kA] = clamp_unit(a.a / cfg.a_norm);
      v[kVDesired] = clamp_unit(a.v_desired / cfg.v_norm);
      v[kLaneDesired] =
          lanes <= 1 ? 0.0f : clamp_unit(2.0 * scene.lane_rank(a.lane_desired) / (lanes - 1) - 1.0);
    }
  }
  return out;
}

float normalize_class(int c, int num_classes) {
  return static_cast<float>(2.0 * c / (num_classes - 1) - 1.0);
}

std::vector<float> normalize_grid(const SemanticGrid& grid, const FeatureConfig& cfg) {
  if (cfg.lane_classes < 2 || cfg.object_classes < 2) throw ConfigError("each channel needs >= 2 classes");
  std::vector<float> out(grid.cells.size());
  const std::size_t plane = static_cast<std::size_t>(grid.rows) * grid.cols;
  for (std::size_t i = 0; i < grid.cells.size(); ++i)
    out[i] = normalize_class(grid.cells[i], i < plane ? cfg.lane_classes : cfg.object_classes);
  return out;
}

ScalarFeatures shift_slots(const ScalarFeatures& scalars, int t, const FeatureConfig& cfg) {
  const int others = cfg.slots - 1;
  if (others <= 0) return scalars;
  const int shift = ((t % others) + others) % others;
  if (shift == 0) return scalars;
  ScalarFeatures out = scalars;
  const std::size_t block = static_cast<std::size_t>(cfg.history) * FeatureConfig::kScalarValues;
  for (int i = 0; i < others; ++i) {
    const int src = 1 + (i + shift) % others;
    const int dst = 1 + i;
    std::copy_n(scalars.values.begin() + src * block, block, out.values.begin() + dst * block);
    out.mask[dst] = scalars.mask[src];
    out.slot_agent[dst] = scalars.slot_agent[src];
  }
  return out;
}

FeatureTensor build_features(std::span<const Scene> history, int ego_index, const FeatureConfig& cfg) {
  if (history.empty()) throw ConfigError("features need at least one scene");
  FeatureTensor f;
  const SemanticGrid grid = rasterize(history.back(), ego_index, cfg);
  f.grid = normalize_grid(grid, cfg);
  f.rows = grid.rows;
  f.cols = grid.cols;
  f.scalars = build_scalars(history, ego_index, cfg);
  return f;
}

}  // namespace coopmcts
