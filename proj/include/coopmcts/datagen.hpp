#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coopmcts/features.hpp"
#include "coopmcts/gmm.hpp"
#include "coopmcts/scenario.hpp"

namespace coopmcts {

/// {decelerate, hold, accelerate} x {left, keep, right}, index = lon * 3 + lat.
enum class SemanticActionClass : int {
  kDecelerateLeft = 0, kDecelerateKeep, kDecelerateRight,
  kHoldLeft, kHoldKeep, kHoldRight,
  kAccelerateLeft, kAccelerateKeep, kAccelerateRight,
};
inline constexpr int kNumActionClasses = 9;

std::string to_string(SemanticActionClass c);
SemanticActionClass parse_action_class(const std::string& s);

struct ClassThresholds {
  double dv = 0.5;  // m/s
  double dy = 0.5;  // m; positive lateral is left
};

SemanticActionClass classify_action(const Action& a, const ClassThresholds& thr = {});

struct SlotSamples {
  int slot = 0;
  WeightedSamples lon;
  WeightedSamples lat;
  friend bool operator==(const SlotSamples&, const SlotSamples&) = default;
};

struct SlotLabels {
  int slot = 0;
  FactoredActionGmm k2;
  FactoredActionGmm k3;
  friend bool operator==(const SlotLabels&, const SlotLabels&) = default;
};

struct DatasetRecord {
  std::uint64_t id = 0;
  std::string scenario;
  int run = 0;
  int timestep = 0;
  int ego = 0;
  SemanticActionClass action_class = SemanticActionClass::kHoldKeep;
  bool failed = false;  // the run this record came from ended in a collision
  std::vector<std::uint8_t> grid;  // raw SemanticGrid cells
  ScalarFeatures scalars;          // already slot-shifted
  std::vector<SlotSamples> samples;
  std::vector<SlotLabels> labels;  // empty until fit_labels

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

struct DatagenConfig {
  FeatureConfig features;
  ClassThresholds thresholds;
  std::optional<int> iterations;  // overrides the scenario's search budget
};

struct RunResult {
  std::vector<DatasetRecord> records;
  bool failed = false;
  int steps = 0;
};

/// Randomizes the scenario with `seed`, then repeatedly runs a baseline
/// search and executes its selection, emitting one record per agent per
/// executed step. Record ids start at `first_id`.
RunResult generate_run(const Scenario& scenario, std::uint64_t seed, const DatagenConfig& config,
                       int run_index = 0, std::uint64_t first_id = 0);

/// Downsamples every non-empty class to the smallest non-empty class count,
/// keeping the lowest ids. Output is ordered by id.
std::vector<DatasetRecord> balance_classes(const std::vector<DatasetRecord>& records);

std::array<int, kNumActionClasses> class_histogram(const std::vector<DatasetRecord>& records);

/// Fits K = 2 and K = 3 axis mixtures to every slot's samples. Returns
/// nullopt and sets `reason` when any slot has fewer than 3 distinct values
/// on an axis.
std::optional<DatasetRecord> fit_labels(const DatasetRecord& record, std::string* reason = nullptr,
                                        const EmOptions& base = {});

inline constexpr int kDatasetFormatVersion = 1;

struct Dataset {
  std::vector<DatasetRecord> records;
  FeatureConfig features;
  std::string config_echo = "{}";  // JSON text
};

/// Writes records.jsonl, grids.bin and manifest.json into `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

std::string gmm_to_json(const Gmm1D& g);
Gmm1D gmm_from_json(const std::string& text);

}  // namespace coopmcts
