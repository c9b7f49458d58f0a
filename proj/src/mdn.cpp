#include "coopmcts/mdn.hpp"

#include <zlib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <numeric>

#include "coopmcts/error.hpp"

namespace coopmcts {

using json = nlohmann::json;

namespace {

template <class T>
using RowMatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrix = RowMatrixT<float>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

constexpr char kMagic[4] = {'M', 'D', 'N', 'W'};

struct LayerShape {
  std::string name;
  std::vector<int> shape;
};

std::vector<LayerShape> expected_shapes(const MdnMetadata& m) {
  const int heads = m.head_size();
  return {
      {"conv1.weight", {m.conv1.filters, 2, m.conv1.kernel, m.conv1.kernel}},
      {"conv1.bias", {m.conv1.filters}},
      {"conv2.weight", {m.conv2.filters, m.conv1.filters, m.conv2.kernel, m.conv2.kernel}},
      {"conv2.bias", {m.conv2.filters}},
      {"fc1.weight", {m.n1, m.features.scalar_size()}},
      {"fc1.bias", {m.n1}},
      {"fc2.weight", {m.n2, m.n1}},
      {"fc2.bias", {m.n2}},
      {"fc3.weight", {m.n3, m.flatten_size()}},
      {"fc3.bias", {m.n3}},
      {"fc4.weight", {m.n4, m.n2 + m.n3}},
      {"fc4.bias", {m.n4}},
      {"fc5.weight", {m.n5, m.n4}},
      {"fc5.bias", {m.n5}},
      {"fc6.weight", {heads, m.n5}},
      {"fc6.bias", {heads}},
      {"fc7.weight", {heads, m.n5}},
      {"fc7.bias", {heads}},
      {"fc8.weight", {heads, m.n5}},
      {"fc8.bias", {heads}},
  };
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

json conv_to_json(const ConvSpec& c) {
  return {{"filters", c.filters}, {"kernel", c.kernel}, {"stride", c.stride}, {"pad", c.pad}};
}

ConvSpec conv_from_json(const json& j) {
  return {j.at("filters").get<int>(), j.at("kernel").get<int>(), j.at("stride").get<int>(),
          j.at("pad").get<int>()};
}

json metadata_to_json(const MdnMetadata& m) {
  const auto& f = m.features;
  return {
      {"components", m.components},
      {"agents", m.agents},
      {"grid", {{"rows", f.grid_rows}, {"cols", f.grid_cols}, {"cell_lon", f.cell_lon}, {"cell_lat", f.cell_lat}}},
      {"classes", {{"lane", f.lane_classes}, {"object", f.object_classes}}},
      {"slots", f.slots},
      {"history", f.history},
      {"norms", {{"x", f.x_norm}, {"y", f.y_norm}, {"v", f.v_norm}, {"a", f.a_norm}}},
      {"conv1", conv_to_json(m.conv1)},
      {"conv2", conv_to_json(m.conv2)},
      {"hidden", {m.n1, m.n2, m.n3, m.n4, m.n5}},
      {"action_bounds",
       {{"dv_min", m.bounds.dv_min}, {"dv_max", m.bounds.dv_max}, {"dy_min", m.bounds.dy_min}, {"dy_max", m.bounds.dy_max}}},
      {"mean_units", "normalized"},
      {"var_units", "physical"},
  };
}

MdnMetadata metadata_from_json(const json& j) {
  MdnMetadata m;
  m.components = j.at("components").get<int>();
  m.agents = j.at("agents").get<int>();
  const auto& g = j.at("grid");
  m.features.grid_rows = g.at("rows").get<int>();
  m.features.grid_cols = g.at("cols").get<int>();
  m.features.cell_lon = g.at("cell_lon").get<double>();
  m.features.cell_lat = g.at("cell_lat").get<double>();
  m.features.lane_classes = j.at("classes").at("lane").get<int>();
  m.features.object_classes = j.at("classes").at("object").get<int>();
  m.features.slots = j.at("slots").get<int>();
  m.features.history = j.at("history").get<int>();
  const auto& n = j.at("norms");
  m.features.x_norm = n.at("x").get<double>();
  m.features.y_norm = n.at("y").get<double>();
  m.features.v_norm = n.at("v").get<double>();
  m.features.a_norm = n.at("a").get<double>();
  m.conv1 = conv_from_json(j.at("conv1"));
  m.conv2 = conv_from_json(j.at("conv2"));
  const auto hidden = j.at("hidden").get<std::vector<int>>();
  if (hidden.size() != 5) throw ShapeError("metadata.hidden must list five widths");
  m.n1 = hidden[0];
  m.n2 = hidden[1];
  m.n3 = hidden[2];
  m.n4 = hidden[3];
  m.n5 = hidden[4];
  const auto& b = j.at("action_bounds");
  m.bounds = {b.at("dv_min").get<double>(), b.at("dv_max").get<double>(), b.at("dy_min").get<double>(),
              b.at("dy_max").get<double>()};
  return m;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  return v;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void softmax_into(const float* logits, int k, double* out) {
  float mx = logits[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - mx);
    total += out[i];
  }
  for (int i = 0; i < k; ++i) out[i] /= total;
}

// im2col with reflect padding: rows = in * k * k, cols = out_rows * out_cols.
template <class T>
void im2col_reflect(const float* input, int channels, int rows, int cols, int k, int stride, int pad, int out_rows,
                    int out_cols, RowMatrixT<T>& col) {
  col.resize(static_cast<Eigen::Index>(channels) * k * k, static_cast<Eigen::Index>(out_rows) * out_cols);
  std::vector<int> row_idx(static_cast<std::size_t>(out_rows) * k), col_idx(static_cast<std::size_t>(out_cols) * k);
  for (int o = 0; o < out_rows; ++o)
    for (int d = 0; d < k; ++d) row_idx[o * k + d] = reflect_index(o * stride - pad + d, rows);
  for (int o = 0; o < out_cols; ++o)
    for (int d = 0; d < k; ++d) col_idx[o * k + d] = reflect_index(o * stride - pad + d, cols);
  for (int c = 0; c < channels; ++c) {
    const float* plane = input + static_cast<std::size_t>(c) * rows * cols;
    for (int dr = 0; dr < k; ++dr)
      for (int dc = 0; dc < k; ++dc) {
        T* dst = col.row((static_cast<Eigen::Index>(c) * k + dr) * k + dc).data();
        for (int orow = 0; orow < out_rows; ++orow) {
          const float* src = plane + static_cast<std::size_t>(row_idx[orow * k + dr]) * cols;
          T* d = dst + static_cast<std::size_t>(orow) * out_cols;
          for (int ocol = 0; ocol < out_cols; ++ocol) d[ocol] = src[col_idx[ocol * k + dc]];
        }
      }
  }
}

// The forward pass runs in float; conv2d_reflect accumulates in double.
template <class T>
RowMatrixT<T> conv_gemm(const float* input, int channels, int rows, int cols, std::span<const float> kernel,
                        std::span<const float> bias, int out_channels, int k, int stride, int pad, int out_rows,
                        int out_cols) {
  // Per-thread scratch keeps repeated forward passes off the allocator.
  thread_local RowMatrixT<T> col;
  im2col_reflect(input, channels, rows, cols, k, stride, pad, out_rows, out_cols, col);
  const RowMatrixT<T> wmat = Eigen::Map<const RowMatrix>(kernel.data(), out_channels,
                                                         static_cast<Eigen::Index>(channels) * k * k)
                                 .template cast<T>();
  RowMatrixT<T> out(out_channels, col.cols());
  out.noalias() = wmat * col;
  if (!bias.empty())
    for (int o = 0; o < out_channels; ++o) out.row(o).array() += static_cast<T>(bias[o]);
  return out;
}

const Tensor& find(const MdnWeights& w, const char* name) { return w.tensor(name); }

// y = relu(W x + b)
Eigen::VectorXf dense(const Tensor& weight, const Tensor& bias, const Eigen::VectorXf& x, bool relu) {
  const ConstRowMap wm(weight.data.data(), weight.shape[0], weight.shape[1]);
  Eigen::VectorXf y = ConstVecMap(bias.data.data(), bias.shape[0]);
  y.noalias() += wm * x;
  if (relu) y = y.cwiseMax(0.0f);
  return y;
}

}  // namespace

std::pair<int, int> MdnMetadata::conv2_output() const {
  const int r1 = conv_output_dim(features.grid_rows, conv1.kernel, conv1.stride, conv1.pad);
  const int c1 = conv_output_dim(features.grid_cols, conv1.kernel, conv1.stride, conv1.pad);
  return {conv_output_dim(r1, conv2.kernel, conv2.stride, conv2.pad),
          conv_output_dim(c1, conv2.kernel, conv2.stride, conv2.pad)};
}

int MdnMetadata::flatten_size() const {
  const auto [r, c] = conv2_output();
  return conv2.filters * r * c;
}

std::size_t Tensor::count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

MdnWeights::MdnWeights(MdnMetadata meta, std::vector<Tensor> tensors)
    : meta_(std::move(meta)), tensors_(std::move(tensors)) {
  validate();
  build_caches();
}

void MdnWeights::build_caches() {
  const Tensor& w = tensor("fc3.weight");
  const std::size_t rows = static_cast<std::size_t>(w.shape[0]), cols = static_cast<std::size_t>(w.shape[1]);
  auto t = std::make_shared<std::vector<float>>(w.data.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) (*t)[c * rows + r] = w.data[r * cols + c];
  fc3_columns_ = std::move(t);
}

MdnWeights MdnWeights::zeros(const MdnMetadata& meta) {
  std::vector<Tensor> tensors;
  for (const auto& [name, shape] : expected_shapes(meta)) {
    Tensor t{name, shape, {}};
    t.data.assign(t.count(), 0.0f);
    tensors.push_back(std::move(t));
  }
  return MdnWeights(meta, std::move(tensors));
}

MdnWeights MdnWeights::random(const MdnMetadata& meta, std::uint64_t seed) {
  MdnWeights w = zeros(meta);
  Rng rng(seed);
  for (auto& t : w.tensors_) {
    const bool is_bias = t.shape.size() == 1;
    const std::size_t fan_in = is_bias ? 1 : t.count() / static_cast<std::size_t>(t.shape[0]);
    const float bound = is_bias ? 0.1f : static_cast<float>(std::sqrt(3.0 / static_cast<double>(fan_in)));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& v : t.data) v = dist(rng);
  }
  w.build_caches();
  return w;
}

const Tensor& MdnWeights::tensor(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw ShapeError("missing tensor " + name);
}

Tensor& MdnWeights::mutable_tensor(const std::string& name) {
  fc3_columns_.reset();
  for (auto& t : tensors_)
    if (t.name == name) return t;
  throw ShapeError("missing tensor " + name);
}

void MdnWeights::validate() const {
  const auto& m = meta_;
  if (m.components < 1 || m.components > 3) throw ShapeError("metadata.components must be in [1, 3]");
  if (m.agents != m.features.slots) throw ShapeError("metadata.agents must equal metadata.slots");
  for (const auto& t : tensors_)
    if (t.data.size() != t.count())
      throw ShapeError(t.name + ": data holds " + std::to_string(t.data.size()) + " values, shape " +
                       shape_str(t.shape) + " needs " + std::to_string(t.count()));

  // Chain checks between neighbouring layers name both tensors involved.
  auto dim = [&](const char* name, std::size_t axis) {
    const Tensor& t = tensor(name);
    if (t.shape.size() <= axis) throw ShapeError(std::string(name) + ": rank too small " + shape_str(t.shape));
    return t.shape[axis];
  };
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
  };
  require(dim("conv2.weight", 1) == dim("conv1.weight", 0),
          "conv2.weight input channels " + std::to_string(dim("conv2.weight", 1)) + " != conv1.weight filters " +
              std::to_string(dim("conv1.weight", 0)));
  require(dim("fc2.weight", 1) == dim("fc1.weight", 0),
          "fc2.weight input " + std::to_string(dim("fc2.weight", 1)) + " != fc1.weight output " +
              std::to_string(dim("fc1.weight", 0)));
  require(dim("fc4.weight", 1) == dim("fc2.weight", 0) + dim("fc3.weight", 0),
          "fc4.weight input " + std::to_string(dim("fc4.weight", 1)) + " != fc2.weight output " +
              std::to_string(dim("fc2.weight", 0)) + " + fc3.weight output " + std::to_string(dim("fc3.weight", 0)));
  require(dim("fc5.weight", 1) == dim("fc4.weight", 0),
          "fc5.weight input " + std::to_string(dim("fc5.weight", 1)) + " != fc4.weight output " +
              std::to_string(dim("fc4.weight", 0)));
  for (const char* head : {"fc6.weight", "fc7.weight", "fc8.weight"})
    require(dim(head, 1) == dim("fc5.weight", 0), std::string(head) + " input " + std::to_string(dim(head, 1)) +
                                                      " != fc5.weight output " + std::to_string(dim("fc5.weight", 0)));

  // Then every tensor against the metadata.
  for (const auto& [name, shape] : expected_shapes(m)) {
    const Tensor& t = tensor(name);
    if (t.shape != shape)
      throw ShapeError(name + ": shape " + shape_str(t.shape) + " does not match metadata " + shape_str(shape));
  }
}

std::vector<std::uint8_t> encode_weights(const MdnWeights& w) {
  json header;
  header["metadata"] = metadata_to_json(w.metadata());
  header["tensors"] = json::array();
  std::size_t offset = 0;
  for (const auto& t : w.tensors()) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.count()}});
    offset += t.count();
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kWeightsFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  out.reserve(out.size() + offset * 4 + 4);
  for (const auto& t : w.tensors())
    for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  put_u32(out, crc32_of(std::span(out).subspan(payload_start)));
  return out;
}

MdnWeights decode_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw TruncationError("weights file shorter than its fixed header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw ShapeError("bad magic, not an MDNW file");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kWeightsFormatVersion)
    throw VersionError("unsupported weights format version " + std::to_string(version));
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + header_len) throw TruncationError("weights header truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw ShapeError(std::string("weights header is not valid JSON: ") + e.what());
  }

  MdnMetadata meta;
  std::vector<Tensor> tensors;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  try {
    meta = metadata_from_json(header.at("metadata"));
    for (const auto& entry : header.at("tensors")) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (count != t.count())
        throw ShapeError(t.name + ": count " + std::to_string(count) + " disagrees with shape " + shape_str(t.shape));
      t.data.resize(count);
      total = std::max(total, offset + count);
      offsets.push_back(offset);
      tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ShapeError(std::string("weights header schema: ") + e.what());
  }

  const std::size_t payload_start = 12 + header_len;
  const std::size_t need = payload_start + total * 4 + 4;
  if (bytes.size() < need)
    throw TruncationError("weights payload truncated: have " + std::to_string(bytes.size()) + " bytes, need " +
                          std::to_string(need));
  const auto payload = bytes.subspan(payload_start, total * 4);
  const std::uint32_t stored = get_u32(bytes, payload_start + total * 4);
  if (crc32_of(payload) != stored) throw ChecksumError("weights payload CRC32 mismatch");

  for (std::size_t idx = 0; idx < tensors.size(); ++idx) {
    auto& t = tensors[idx];
    for (std::size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = std::bit_cast<float>(get_u32(payload, (offsets[idx] + i) * 4));
  }
  return MdnWeights(std::move(meta), std::move(tensors));
}

void save_weights(const std::filesystem::path& path, const MdnWeights& w) {
  const auto bytes = encode_weights(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

MdnWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weights file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

double nnelu(double x) { return x >= 0.0 ? x + 1.0 : std::exp(x); }

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

int conv_output_dim(int in, int kernel, int stride, int pad) {
  if (kernel < 1 || stride < 1 || pad < 0) throw ConfigError("convolution kernel/stride must be >= 1, pad >= 0");
  if (pad >= in) throw ConfigError("reflect pad must be smaller than the plane extent");
  const int span = in + 2 * pad - kernel;
  if (span < 0) throw ConfigError("convolution kernel larger than padded input");
  return span / stride + 1;
}

PlaneStack conv2d_reflect(const PlaneStack& input, std::span<const float> kernel, std::span<const float> bias,
                          int out_channels, int k, int stride, int pad) {
  const int out_rows = conv_output_dim(input.rows, k, stride, pad);
  const int out_cols = conv_output_dim(input.cols, k, stride, pad);
  if (kernel.size() != static_cast<std::size_t>(out_channels) * input.channels * k * k)
    throw ConfigError("kernel size does not match [out][in][k][k]");
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels))
    throw ConfigError("bias size does not match output channels");
  const RowMatrixT<double> out = conv_gemm<double>(input.data.data(), input.channels, input.rows, input.cols, kernel,
                                                   bias, out_channels, k, stride, pad, out_rows, out_cols);
  PlaneStack result{out_channels, out_rows, out_cols, {}};
  result.data.resize(static_cast<std::size_t>(out.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) result.data[i] = static_cast<float>(out.data()[i]);
  return result;
}

MdnPrediction forward(const MdnWeights& weights, const FeatureTensor& features) {
  const auto& m = weights.metadata();
  const auto& fc = m.features;
  if (features.rows != fc.grid_rows || features.cols != fc.grid_cols ||
      features.grid.size() != static_cast<std::size_t>(fc.grid_size()))
    throw ShapeError("feature grid " + std::to_string(features.rows) + "x" + std::to_string(features.cols) +
                     " does not match weights grid " + std::to_string(fc.grid_rows) + "x" +
                     std::to_string(fc.grid_cols));
  if (features.scalars.values.size() != static_cast<std::size_t>(fc.scalar_size()))
    throw ShapeError("scalar feature length " + std::to_string(features.scalars.values.size()) +
                     " does not match weights input " + std::to_string(fc.scalar_size()));

  // Scalar pipeline.
  const Eigen::VectorXf xs = ConstVecMap(features.scalars.values.data(), fc.scalar_size());
  const Eigen::VectorXf h2 =
      dense(find(weights, "fc2.weight"), find(weights, "fc2.bias"),
            dense(find(weights, "fc1.weight"), find(weights, "fc1.bias"), xs, true), true);

  // Visual pipeline.
  const int r1 = conv_output_dim(fc.grid_rows, m.conv1.kernel, m.conv1.stride, m.conv1.pad);
  const int c1 = conv_output_dim(fc.grid_cols, m.conv1.kernel, m.conv1.stride, m.conv1.pad);
  RowMatrix a1 = conv_gemm<float>(features.grid.data(), 2, fc.grid_rows, fc.grid_cols, find(weights, "conv1.weight").data,
                           find(weights, "conv1.bias").data, m.conv1.filters, m.conv1.kernel, m.conv1.stride,
                           m.conv1.pad, r1, c1);
  a1 = a1.cwiseMax(0.0f);
  const auto [r2, c2] = m.conv2_output();
  RowMatrix a2 = conv_gemm<float>(a1.data(), m.conv1.filters, r1, c1, find(weights, "conv2.weight").data,
                           find(weights, "conv2.bias").data, m.conv2.filters, m.conv2.kernel, m.conv2.stride,
                           m.conv2.pad, r2, c2);
  a2 = a2.cwiseMax(0.0f);
  const Eigen::VectorXf flat = Eigen::Map<const Eigen::VectorXf>(a2.data(), a2.size());
  Eigen::VectorXf h3;
  if (const auto* cols = weights.fc3_columns()) {
    // ReLU leaves roughly half the activations at zero; their columns are never read.
    const Tensor& bias = find(weights, "fc3.bias");
    const int n3 = bias.shape[0];
    h3 = ConstVecMap(bias.data.data(), n3);
    for (Eigen::Index j = 0; j < flat.size(); ++j)
      if (flat[j] != 0.0f) h3.noalias() += flat[j] * ConstVecMap(cols->data() + j * n3, n3);
    h3 = h3.cwiseMax(0.0f);
  } else {
    h3 = dense(find(weights, "fc3.weight"), find(weights, "fc3.bias"), flat, true);
  }

  Eigen::VectorXf joint(h2.size() + h3.size());
  joint << h2, h3;
  const Eigen::VectorXf h5 =
      dense(find(weights, "fc5.weight"), find(weights, "fc5.bias"),
            dense(find(weights, "fc4.weight"), find(weights, "fc4.bias"), joint, true), true);

  const Eigen::VectorXf mix = dense(find(weights, "fc6.weight"), find(weights, "fc6.bias"), h5, false);
  const Eigen::VectorXf mean = dense(find(weights, "fc7.weight"), find(weights, "fc7.bias"), h5, false);
  const Eigen::VectorXf var = dense(find(weights, "fc8.weight"), find(weights, "fc8.bias"), h5, false);

  const int k = m.components;
  const int g_count = m.agents;
  MdnPrediction pred;
  pred.slots.resize(g_count);
  pred.valid = features.scalars.mask;
  pred.slot_agent = features.scalars.slot_agent;
  pred.valid.resize(g_count, 0);
  pred.slot_agent.resize(g_count, -1);
  const double lo[2] = {m.bounds.dv_min, m.bounds.dy_min};
  const double hi[2] = {m.bounds.dv_max, m.bounds.dy_max};
  std::vector<double> phi(k);
  for (int axis = 0; axis < 2; ++axis) {
    const double mid = 0.5 * (lo[axis] + hi[axis]);
    const double half = 0.5 * (hi[axis] - lo[axis]);
    for (int g = 0; g < g_count; ++g) {
      const int base = (axis * g_count + g) * k;
      softmax_into(mix.data() + base, k, phi.data());
      Gmm1D gmm;
      for (int j = 0; j < k; ++j) {
        gmm.phi.push_back(phi[j]);
        gmm.mu.push_back(mid + half * static_cast<double>(mean[base + j]));
        gmm.var.push_back(nnelu(static_cast<double>(var[base + j])));
      }
      (axis == 0 ? pred.slots[g].lon : pred.slots[g].lat) = std::move(gmm);
    }
  }
  return pred;
}

MdnPrediction predict_policy(const MdnWeights& weights, std::span<const Scene> history, int ego_index) {
  return forward(weights, build_features(history, ego_index, weights.metadata().features));
}

}  // namespace coopmcts
