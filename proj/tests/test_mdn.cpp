#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "coopmcts/error.hpp"
#include "coopmcts/mdn.hpp"

using namespace coopmcts;

namespace {

MdnMetadata small_meta(int k = 2) {
  MdnMetadata m;
  m.components = k;
  m.features.grid_rows = 32;
  m.features.grid_cols = 16;
  m.n1 = 24;
  m.n2 = 12;
  m.n3 = 20;
  m.n4 = 16;
  m.n5 = 10;
  return m;
}

Scene sample_scene(int agents = 3) {
  Scene s;
  s.lanes = {{0, 0.0, 3.5}, {1, 3.5, 3.5}};
  for (int i = 0; i < agents; ++i) {
    AgentState a;
    a.x = 100 + 9 * i;
    a.y = 3.5 * (i % 2);
    a.v = 8 + i;
    a.v_desired = 10;
    a.lane_desired = i % 2;
    s.agents.push_back(a);
  }
  s.obstacles = {{112, 0.0, 2.0, 2.0}};
  return s;
}

FeatureTensor random_features(const FeatureConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<float> u(-1, 1);
  FeatureTensor f;
  f.rows = cfg.grid_rows;
  f.cols = cfg.grid_cols;
  f.grid.resize(cfg.grid_size());
  for (float& v : f.grid) v = u(rng);
  f.scalars.values.resize(cfg.scalar_size());
  for (float& v : f.scalars.values) v = u(rng);
  f.scalars.mask.assign(cfg.slots, 1);
  f.scalars.slot_agent.resize(cfg.slots);
  std::iota(f.scalars.slot_agent.begin(), f.scalars.slot_agent.end(), 0);
  return f;
}

// Direct nested-loop convolution with explicit reflect padding.
std::vector<double> brute_conv(const PlaneStack& in, const std::vector<float>& kernel, const std::vector<float>& bias,
                               int out_ch, int k, int stride, int pad, int& out_rows, int& out_cols) {
  const int pr = in.rows + 2 * pad, pc = in.cols + 2 * pad;
  auto mirror = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  std::vector<double> padded(static_cast<std::size_t>(in.channels) * pr * pc);
  for (int c = 0; c < in.channels; ++c)
    for (int r = 0; r < pr; ++r)
      for (int q = 0; q < pc; ++q)
        padded[(c * pr + r) * pc + q] = in.at(c, mirror(r - pad, in.rows), mirror(q - pad, in.cols));
  out_rows = (pr - k) / stride + 1;
  out_cols = (pc - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(out_ch) * out_rows * out_cols);
  for (int o = 0; o < out_ch; ++o)
    for (int r = 0; r < out_rows; ++r)
      for (int q = 0; q < out_cols; ++q) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (int c = 0; c < in.channels; ++c)
          for (int dr = 0; dr < k; ++dr)
            for (int dq = 0; dq < k; ++dq)
              s += kernel[((o * in.channels + c) * k + dr) * k + dq] *
                   padded[(c * pr + r * stride + dr) * pc + q * stride + dq];
        out[(o * out_rows + r) * out_cols + q] = s;
      }
  return out;
}

// Independent double-precision forward pass written from the layer list.
MdnPrediction reference_forward(const MdnWeights& w, const FeatureTensor& f) {
  const MdnMetadata& m = w.metadata();
  auto dense = [&](const std::string& layer, const std::vector<double>& x, bool relu) {
    const Tensor& W = w.tensor(layer + ".weight");
    const Tensor& b = w.tensor(layer + ".bias");
    std::vector<double> y(W.shape[0]);
    for (int i = 0; i < W.shape[0]; ++i) {
      double s = b.data[i];
      for (int j = 0; j < W.shape[1]; ++j) s += static_cast<double>(W.data[i * W.shape[1] + j]) * x[j];
      y[i] = relu ? std::max(0.0, s) : s;
    }
    return y;
  };
  std::vector<double> xs(f.scalars.values.begin(), f.scalars.values.end());
  const auto h2 = dense("fc2", dense("fc1", xs, true), true);

  PlaneStack in{2, f.rows, f.cols, f.grid};
  int r1, c1, r2, c2;
  auto a1 = brute_conv(in, w.tensor("conv1.weight").data, w.tensor("conv1.bias").data, m.conv1.filters,
                       m.conv1.kernel, m.conv1.stride, m.conv1.pad, r1, c1);
  PlaneStack mid{m.conv1.filters, r1, c1, {}};
  for (double v : a1) mid.data.push_back(static_cast<float>(std::max(0.0, v)));
  auto a2 = brute_conv(mid, w.tensor("conv2.weight").data, w.tensor("conv2.bias").data, m.conv2.filters,
                       m.conv2.kernel, m.conv2.stride, m.conv2.pad, r2, c2);
  for (double& v : a2) v = std::max(0.0, v);
  const auto h3 = dense("fc3", a2, true);

  std::vector<double> joint(h2);
  joint.insert(joint.end(), h3.begin(), h3.end());
  const auto h5 = dense("fc5", dense("fc4", joint, true), true);
  const auto mix = dense("fc6", h5, false), mean = dense("fc7", h5, false), var = dense("fc8", h5, false);

  MdnPrediction p;
  p.slots.resize(m.agents);
  const double lo[2] = {m.bounds.dv_min, m.bounds.dy_min}, hi[2] = {m.bounds.dv_max, m.bounds.dy_max};
  for (int axis = 0; axis < 2; ++axis)
    for (int g = 0; g < m.agents; ++g) {
      Gmm1D out;
      double z = 0;
      for (int k = 0; k < m.components; ++k) z += std::exp(mix[(axis * m.agents + g) * m.components + k]);
      for (int k = 0; k < m.components; ++k) {
        const int i = (axis * m.agents + g) * m.components + k;
        out.phi.push_back(std::exp(mix[i]) / z);
        out.mu.push_back(0.5 * (lo[axis] + hi[axis]) + 0.5 * (hi[axis] - lo[axis]) * mean[i]);
        out.var.push_back(var[i] >= 0 ? var[i] + 1 : std::exp(var[i]));
      }
      (axis == 0 ? p.slots[g].lon : p.slots[g].lat) = out;
    }
  return p;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("coopmcts_test_" + name);
}

}  // namespace

TEST(Nnelu, Values) {
  EXPECT_EQ(nnelu(0.0), 1.0);
  EXPECT_EQ(nnelu(2.0), 3.0);
  EXPECT_NEAR(nnelu(-20.0), 2.061153622e-9, 1e-17);
  for (double x = -50; x <= 50; x += 0.01) ASSERT_GT(nnelu(x), 0.0);
}

TEST(ReflectIndex, MirrorsWithoutRepeatingEdge) {
  // Row [a, b, c] padded by one: [b, a, b, c, b].
  const std::vector<int> expect = {1, 0, 1, 2, 1};
  for (int i = -1; i <= 3; ++i) EXPECT_EQ(reflect_index(i, 3), expect[i + 1]);
}

TEST(Conv, PaperShape) {
  EXPECT_EQ(conv_output_dim(256, 7, 4, 3), 64);
  EXPECT_EQ(conv_output_dim(128, 7, 4, 3), 32);
  MdnMetadata m;
  EXPECT_EQ(m.conv2_output(), (std::pair<int, int>{64, 32}));
  EXPECT_EQ(m.flatten_size(), 32 * 64 * 32);
}

TEST(Conv, RejectsImpossibleGeometry) {
  EXPECT_THROW(conv_output_dim(3, 3, 1, 3), ConfigError);
  EXPECT_THROW(conv_output_dim(2, 7, 1, 1), ConfigError);
}

TEST(Conv, IdentityKernel) {
  Rng rng(1);
  std::uniform_real_distribution<float> u(-1, 1);
  PlaneStack in{3, 5, 4, {}};
  for (int i = 0; i < 60; ++i) in.data.push_back(u(rng));
  std::vector<float> kernel(9, 0.0f);
  for (int c = 0; c < 3; ++c) kernel[c * 3 + c] = 1.0f;
  const PlaneStack out = conv2d_reflect(in, kernel, {}, 3, 1, 1, 0);
  EXPECT_EQ(out.data, in.data);
}

TEST(Conv, MatchesBruteForce) {
  Rng rng(2);
  std::uniform_int_distribution<int> dim(1, 8), ch(1, 3), kk(1, 4), st(1, 3);
  std::uniform_real_distribution<float> u(-1, 1);
  int checked = 0;
  while (checked < 200) {
    PlaneStack in{ch(rng), dim(rng), dim(rng), {}};
    const int k = kk(rng), stride = st(rng), out_ch = ch(rng);
    std::uniform_int_distribution<int> pd(0, std::min(in.rows, in.cols) - 1);
    const int pad = pd(rng);
    if (k > std::min(in.rows, in.cols) + 2 * pad) continue;
    in.data.resize(static_cast<std::size_t>(in.channels) * in.rows * in.cols);
    for (float& v : in.data) v = u(rng);
    std::vector<float> kernel(static_cast<std::size_t>(out_ch) * in.channels * k * k), bias(out_ch);
    for (float& v : kernel) v = u(rng);
    for (float& v : bias) v = u(rng);
    int rows, cols;
    const auto expect = brute_conv(in, kernel, bias, out_ch, k, stride, pad, rows, cols);
    const PlaneStack got = conv2d_reflect(in, kernel, bias, out_ch, k, stride, pad);
    ASSERT_EQ(got.rows, rows);
    ASSERT_EQ(got.cols, cols);
    for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_NEAR(got.data[i], expect[i], 1e-6);
    ++checked;
  }
}

TEST(Weights, RoundTripBitEqual) {
  const MdnWeights w = MdnWeights::random(small_meta(3), 4);
  const auto path = temp_file("roundtrip.mdnw");
  save_weights(path, w);
  const MdnWeights back = load_weights(path);
  EXPECT_EQ(back, w);
  EXPECT_EQ(encode_weights(back), encode_weights(w));
  std::filesystem::remove(path);
}

TEST(Weights, TruncatedPayload) {
  auto bytes = encode_weights(MdnWeights::random(small_meta(), 5));
  bytes.pop_back();
  EXPECT_THROW(decode_weights(bytes), TruncationError);
  bytes.resize(6);
  EXPECT_THROW(decode_weights(bytes), TruncationError);
}

TEST(Weights, ChecksumMismatch) {
  auto bytes = encode_weights(MdnWeights::random(small_meta(), 6));
  bytes[bytes.size() - 100] ^= 0x01;
  EXPECT_THROW(decode_weights(bytes), ChecksumError);
}

TEST(Weights, VersionAndMagic) {
  auto bytes = encode_weights(MdnWeights::random(small_meta(), 6));
  auto wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(decode_weights(wrong_version), VersionError);
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  EXPECT_THROW(decode_weights(wrong_magic), ShapeError);
}

TEST(Weights, Fc4MismatchNamesBothTensors) {
  const MdnMetadata m = small_meta();
  MdnWeights w = MdnWeights::zeros(m);
  std::vector<Tensor> tensors = w.tensors();
  for (auto& t : tensors)
    if (t.name == "fc4.weight") {
      t.shape[1] += 1;
      t.data.assign(t.count(), 0.0f);
    }
  try {
    MdnWeights bad(m, tensors);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("fc4.weight"), std::string::npos) << msg;
    EXPECT_NE(msg.find("fc3.weight"), std::string::npos) << msg;
  }
}

TEST(Forward, ZeroNetwork) {
  for (int k : {2, 3}) {
    const MdnMetadata m = small_meta(k);
    const MdnWeights w = MdnWeights::zeros(m);
    Rng rng(7);
    const MdnPrediction p = forward(w, random_features(m.features, rng));
    ASSERT_EQ(p.slots.size(), 8u);
    for (const auto& s : p.slots)
      for (const Gmm1D* g : {&s.lon, &s.lat})
        for (int j = 0; j < k; ++j) {
          EXPECT_NEAR(g->phi[j], 1.0 / k, 1e-12);
          EXPECT_EQ(g->var[j], 1.0);
        }
    // Midpoint of the default symmetric bounds.
    EXPECT_EQ(p.slots[0].lon.mu[0], 0.0);
    EXPECT_EQ(p.slots[0].lat.mu[0], 0.0);
  }
}

TEST(Forward, ZeroNetworkAsymmetricBoundsGivesMidpoint) {
  MdnMetadata m = small_meta();
  m.bounds = {-2.0, 6.0, -1.0, 3.0};
  Rng rng(8);
  const MdnPrediction p = forward(MdnWeights::zeros(m), random_features(m.features, rng));
  EXPECT_EQ(p.slots[3].lon.mu[1], 2.0);
  EXPECT_EQ(p.slots[3].lat.mu[0], 1.0);
}

TEST(Forward, HeadsValidOverRandomFiles) {
  Rng rng(9);
  for (int file = 0; file < 100; ++file) {
    const MdnMetadata m = small_meta(2 + file % 2);
    const MdnWeights w = decode_weights(encode_weights(MdnWeights::random(m, 1000 + file)));
    const MdnPrediction p = forward(w, random_features(m.features, rng));
    for (const auto& s : p.slots)
      for (const Gmm1D* g : {&s.lon, &s.lat}) {
        ASSERT_NEAR(std::accumulate(g->phi.begin(), g->phi.end(), 0.0), 1.0, 1e-6);
        for (double v : g->var) ASSERT_GT(v, 0.0);
      }
  }
}

TEST(Forward, MatchesReferenceImplementation) {
  Rng rng(10);
  for (int file = 0; file < 20; ++file) {
    const MdnMetadata m = small_meta(2 + file % 2);
    const MdnWeights w = MdnWeights::random(m, 2000 + file);
    for (int input = 0; input < 5; ++input) {
      const FeatureTensor f = random_features(m.features, rng);
      const MdnPrediction got = forward(w, f);
      const MdnPrediction want = reference_forward(w, f);
      for (int g = 0; g < m.agents; ++g)
        for (int axis = 0; axis < 2; ++axis) {
          const Gmm1D& a = axis ? got.slots[g].lat : got.slots[g].lon;
          const Gmm1D& b = axis ? want.slots[g].lat : want.slots[g].lon;
          for (int k = 0; k < m.components; ++k) {
            ASSERT_NEAR(a.phi[k], b.phi[k], 1e-5);
            ASSERT_NEAR(a.mu[k], b.mu[k], 1e-5 * 5.0);  // mu is scaled by the half range
            ASSERT_NEAR(a.var[k], b.var[k], 1e-5);
          }
        }
    }
  }
}

TEST(Forward, SparseFc3PathMatchesDense) {
  // mutable_tensor drops the input-major fc3 copy, forcing the dense product.
  const MdnMetadata m = small_meta();
  const MdnWeights w = MdnWeights::random(m, 11);
  MdnWeights dense_copy = w;
  dense_copy.mutable_tensor("fc1.bias");
  ASSERT_NE(w.fc3_columns(), nullptr);
  ASSERT_EQ(dense_copy.fc3_columns(), nullptr);
  Rng rng(12);
  const FeatureTensor f = random_features(m.features, rng);
  const MdnPrediction a = forward(w, f), b = forward(dense_copy, f);
  for (int g = 0; g < m.agents; ++g)
    for (int k = 0; k < m.components; ++k) {
      EXPECT_NEAR(a.slots[g].lon.mu[k], b.slots[g].lon.mu[k], 1e-5);
      EXPECT_NEAR(a.slots[g].lat.var[k], b.slots[g].lat.var[k], 1e-5);
    }
}

TEST(Forward, VisualAblationThroughFc3Only) {
  // With fc3 zeroed, the visual pipeline cannot reach the heads: any two
  // grids give identical outputs.
  const MdnMetadata m = small_meta();
  MdnWeights w = MdnWeights::random(m, 13);
  for (float& v : w.mutable_tensor("fc3.weight").data) v = 0.0f;
  for (float& v : w.mutable_tensor("fc3.bias").data) v = 0.0f;
  Rng rng(14);
  FeatureTensor a = random_features(m.features, rng);
  FeatureTensor b = a;
  for (float& v : b.grid) v = -v;
  const MdnPrediction pa = forward(w, a), pb = forward(w, b);
  for (int g = 0; g < m.agents; ++g) {
    EXPECT_EQ(pa.slots[g], pb.slots[g]);
  }
  // And the reference with an explicit zero fc3 contribution agrees.
  const MdnPrediction ref = reference_forward(w, a);
  for (int g = 0; g < m.agents; ++g)
    for (int k = 0; k < m.components; ++k) EXPECT_NEAR(pa.slots[g].lon.mu[k], ref.slots[g].lon.mu[k], 5e-5);
}

TEST(Forward, DimensionMismatchRejected) {
  const MdnMetadata m = small_meta();
  const MdnWeights w = MdnWeights::zeros(m);
  Rng rng(15);
  FeatureTensor f = random_features(m.features, rng);
  f.scalars.values.pop_back();
  EXPECT_THROW(forward(w, f), ShapeError);
  FeatureTensor g = random_features(MdnMetadata{}.features, rng);
  EXPECT_THROW(forward(w, g), ShapeError);
}

TEST(PredictPolicy, DeterministicAndMasked) {
  const MdnMetadata m = small_meta();
  const MdnWeights w = MdnWeights::random(m, 16);
  const std::vector<Scene> h{sample_scene(3)};
  const MdnPrediction a = predict_policy(w, h, 1);
  const MdnPrediction b = predict_policy(w, h, 1);
  for (int g = 0; g < m.agents; ++g) EXPECT_EQ(a.slots[g], b.slots[g]);
  EXPECT_EQ(a.valid, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(a.slot_agent[0], 1);
}
