#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "coopmcts/scene.hpp"

namespace coopmcts {

/// Geometry and normalization constants shared by feature extraction,
/// the weights file metadata and the dataset manifest.
struct FeatureConfig {
  int grid_cols = 128;    // longitudinal cells
  int grid_rows = 256;    // lateral cells
  double cell_lon = 1.0;  // m per column
  double cell_lat = 0.1;  // m per row
  int lane_classes = 5;   // non-drivable + up to 4 lanes
  int object_classes = 3; // free, static, dynamic
  int slots = 8;
  int history = 8;
  double x_norm = 64.0;
  double y_norm = 12.8;
  double v_norm = 20.0;
  double a_norm = 4.0;

  int scalar_size() const { return slots * history * kScalarValues; }
  int grid_size() const { return 2 * grid_rows * grid_cols; }

  static constexpr int kScalarValues = 7;
  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

/// Order of the per-step scalar values.
enum ScalarIndex : int { kHeading = 0, kX, kY, kV, kA, kVDesired, kLaneDesired };

enum ObjectClass : std::uint8_t { kFree = 0, kStatic = 1, kDynamic = 2 };

/// Two class-id planes, channel-major then row-major: channel 0 is the lane
/// map (0 = non-drivable, r + 1 for the lane of id rank r), channel 1 the
/// object map. Rows run laterally, columns longitudinally.
struct SemanticGrid {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t at(int channel, int row, int col) const {
    return cells[(static_cast<std::size_t>(channel) * rows + row) * cols + col];
  }
  std::uint8_t& at(int channel, int row, int col) {
    return cells[(static_cast<std::size_t>(channel) * rows + row) * cols + col];
  }
  friend bool operator==(const SemanticGrid&, const SemanticGrid&) = default;
};

struct ScalarFeatures {
  /// index = (slot * history + step) * 7 + value; step 0 is the oldest.
  std::vector<float> values;
  std::vector<std::uint8_t> mask;  // per slot
  std::vector<int> slot_agent;     // agent index per slot, -1 if empty

  friend bool operator==(const ScalarFeatures&, const ScalarFeatures&) = default;
};

struct FeatureTensor {
  std::vector<float> grid;  // normalized SemanticGrid, same layout
  int rows = 0;
  int cols = 0;
  ScalarFeatures scalars;
};

/// Ego-centred semantic raster. Column i covers [i - cols/2, i - cols/2 + 1)
/// cells longitudinally relative to the ego centre, row j likewise laterally;
/// a cell is painted when its centre lies inside a footprint.
SemanticGrid rasterize(const Scene& scene, int ego_index, const FeatureConfig& cfg = {});

/// Scalar history vector. `history` is ordered oldest first; the last scene
/// defines the ego frame. Missing older steps repeat the oldest scene.
ScalarFeatures build_scalars(std::span<const Scene> history, int ego_index,
                             const FeatureConfig& cfg = {});

/// Class id c of a channel with C classes maps to 2c/(C-1) - 1.
float normalize_class(int c, int num_classes);
std::vector<float> normalize_grid(const SemanticGrid& grid, const FeatureConfig& cfg = {});

/// Rotates the non-ego slots: non-ego slot i receives what non-ego slot
/// (i + t) mod (slots - 1) held. Slot 0 stays put.
ScalarFeatures shift_slots(const ScalarFeatures& scalars, int t, const FeatureConfig& cfg = {});

FeatureTensor build_features(std::span<const Scene> history, int ego_index,
                             const FeatureConfig& cfg = {});

}  // namespace coopmcts
