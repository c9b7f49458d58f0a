#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "coopmcts/features.hpp"
#include "coopmcts/gmm.hpp"
#include "coopmcts/scene.hpp"

namespace coopmcts {

struct ConvSpec {
  int filters = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Architecture description stored in the weights file header. The file, not
/// the code, owns the layer widths.
struct MdnMetadata {
  int components = 2;  // K
  int agents = 8;      // G, one output head group per scalar slot
  FeatureConfig features;
  ConvSpec conv1{16, 7, 4, 3};
  ConvSpec conv2{32, 3, 1, 1};
  int n1 = 256, n2 = 128, n3 = 256, n4 = 256, n5 = 128;
  /// Means leave the network in [-1, 1] action units and are mapped onto
  /// these bounds; variances are emitted in physical units.
  ActionBounds bounds;

  /// Output height/width of conv2, i.e. the flattened visual feature size
  /// divided by conv2.filters.
  std::pair<int, int> conv2_output() const;
  int flatten_size() const;
  int head_size() const { return 2 * agents * components; }
  friend bool operator==(const MdnMetadata&, const MdnMetadata&) = default;
};

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  std::size_t count() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Immutable after construction; share freely across threads.
class MdnWeights {
 public:
  MdnWeights() = default;
  MdnWeights(MdnMetadata meta, std::vector<Tensor> tensors);

  /// Every tensor present with the architecture's shape, all values zero.
  static MdnWeights zeros(const MdnMetadata& meta);
  /// Uniform fan-in scaled weights; used for oracle files and tests.
  static MdnWeights random(const MdnMetadata& meta, std::uint64_t seed);

  const MdnMetadata& metadata() const { return meta_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const Tensor& tensor(const std::string& name) const;
  Tensor& mutable_tensor(const std::string& name);

  /// Throws ShapeError naming the inconsistent tensors.
  void validate() const;

  /// fc3.weight stored input-major ([flatten][n3]) so the forward pass can
  /// skip columns of zero activations. Null after mutable_tensor().
  const std::vector<float>* fc3_columns() const { return fc3_columns_.get(); }

  friend bool operator==(const MdnWeights& a, const MdnWeights& b) {
    return a.meta_ == b.meta_ && a.tensors_ == b.tensors_;
  }

 private:
  void build_caches();

  MdnMetadata meta_;
  std::vector<Tensor> tensors_;
  std::shared_ptr<const std::vector<float>> fc3_columns_;
};

inline constexpr std::uint32_t kWeightsFormatVersion = 1;

std::vector<std::uint8_t> encode_weights(const MdnWeights& w);
MdnWeights decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::filesystem::path& path, const MdnWeights& w);
MdnWeights load_weights(const std::filesystem::path& path);

/// ELU(1, x) + 1: x + 1 for x >= 0, exp(x) otherwise.
double nnelu(double x);

/// Channel-major stack of equally sized planes.
struct PlaneStack {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  float at(int c, int r, int col) const {
    return data[(static_cast<std::size_t>(c) * rows + r) * cols + col];
  }
};

/// Mirror index into [0, n) without repeating the edge: -1 -> 1, n -> n - 2.
int reflect_index(int i, int n);

/// Output extent of a strided convolution; the last partial window is
/// dropped. Throws ConfigError when no window fits or pad >= extent.
int conv_output_dim(int in, int kernel, int stride, int pad);

/// Cross-correlation with reflect padding. `kernel` is [out][in][k][k],
/// `bias` has one entry per output channel (may be empty).
PlaneStack conv2d_reflect(const PlaneStack& input, std::span<const float> kernel,
                          std::span<const float> bias, int out_channels, int k, int stride, int pad);

struct MdnPrediction {
  std::vector<FactoredActionGmm> slots;  // one per output slot
  std::vector<std::uint8_t> valid;       // mirrors the scalar slot mask
  std::vector<int> slot_agent;           // agent index per slot, -1 if empty
};

MdnPrediction forward(const MdnWeights& weights, const FeatureTensor& features);

/// Builds features for `ego_index` from the scene history (oldest first)
/// and runs the network.
MdnPrediction predict_policy(const MdnWeights& weights, std::span<const Scene> history, int ego_index);

}  // namespace coopmcts
