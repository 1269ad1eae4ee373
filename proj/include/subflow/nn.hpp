#pragma once

// Tensor primitives, conv/deconv kernels with their gradients, and the two
// SubFlowNet encoder-decoder graphs. Everything is templated on the scalar
// type: float for training and inference, double for gradient checks.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "subflow/grid.hpp"

namespace subflow::nn {

template <typename T>
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int batch, int channels, int height, int width, T fill = T{})
      : n(batch), c(channels), h(height), w(width),
        data(static_cast<std::size_t>(batch) * channels * height * width, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor4& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }

  T* channel(int b, int ch) { return data.data() + (static_cast<std::size_t>(b) * c + ch) * plane(); }
  const T* channel(int b, int ch) const { return data.data() + (static_cast<std::size_t>(b) * c + ch) * plane(); }
  T& at(int b, int ch, int y, int x) { return channel(b, ch)[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int b, int ch, int y, int x) const { return channel(b, ch)[static_cast<std::size_t>(y) * w + x]; }
};

enum class LayerKind : std::uint8_t { conv = 0, deconv = 1 };

// Index relation shared by both kinds: a tap (ky, kx) links the strided
// ("small") side at position o to the dense ("big") side at o*stride + k - pad.
// conv reads big -> writes small; deconv reads small -> writes big. Weights
// are stored [small_ch][big_ch][k][k], i.e. (out, in, k, k) for conv and
// (in, out, k, k) for deconv.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int output_pad = 0;  // deconv only
  bool has_bias = true;

  std::size_t weight_count() const noexcept {
    return static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel;
  }
  std::size_t bias_count() const noexcept { return has_bias ? static_cast<std::size_t>(out_channels) : 0; }
  int output_size(int input) const noexcept {
    return kind == LayerKind::conv ? (input + 2 * pad - kernel) / stride + 1
                                   : (input - 1) * stride - 2 * pad + kernel + output_pad;
  }
};

template <typename T>
struct Layer {
  std::string name;
  LayerSpec spec;
  std::vector<T> weight;
  std::vector<T> bias;

  Layer() = default;
  Layer(std::string layer_name, LayerSpec s)
      : name(std::move(layer_name)), spec(s), weight(s.weight_count(), T{}), bias(s.bias_count(), T{}) {}

  T& w(int small_ch, int big_ch, int ky, int kx) {
    const int big = spec.kind == LayerKind::conv ? spec.in_channels : spec.out_channels;
    return weight[((static_cast<std::size_t>(small_ch) * big + big_ch) * spec.kernel + ky) * spec.kernel + kx];
  }
};

inline LayerSpec conv_spec(int in, int out, int k, int stride) {
  return {LayerKind::conv, in, out, k, stride, (k - 1) / 2, 0, true};
}
// 4x4 stride-2 transposed convolution that exactly doubles the resolution.
inline LayerSpec deconv_spec(int in, int out) { return {LayerKind::deconv, in, out, 4, 2, 1, 0, false}; }

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const Layer<T>& layer);
template <typename T>
Tensor4<T> deconv2d(const Tensor4<T>& input, const Layer<T>& layer);

// Reverse-mode gradients of conv2d/deconv2d. `grad_input` may be null when the
// input gradient is not needed; weight/bias gradients are accumulated (+=).
template <typename T>
void conv2d_backward(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_output,
                     Tensor4<T>* grad_input, std::vector<T>& grad_weight, std::vector<T>& grad_bias);
template <typename T>
void deconv2d_backward(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_output,
                       Tensor4<T>* grad_input, std::vector<T>& grad_weight);

inline constexpr double kLeakySlope = 0.1;

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x);
template <typename T>
constexpr T leaky_relu_grad(T x) noexcept {
  return x > T{0} ? T{1} : static_cast<T>(kLeakySlope);
}

// Elementwise product of channel 0 with mask_u and channel 1 with mask_v,
// masks broadcast over the batch. The same call is its own backward.
template <typename T>
Tensor4<T> apply_texture_mask(const Tensor4<T>& pred, const MaskGrid& mask_u, const MaskGrid& mask_v);
// Per-sample masks: masks[b] = {mask_u, mask_v}.
template <typename T>
Tensor4<T> apply_texture_mask(const Tensor4<T>& pred, const std::vector<std::array<const MaskGrid*, 2>>& masks);

// ---------------------------------------------------------------------------
// Network graph.

enum class Variant : std::uint8_t { subflownet_s = 0, subflownet_c = 1 };

const char* variant_name(Variant v) noexcept;
Variant parse_variant(const std::string& name);

enum class NodeOp : std::uint8_t { input = 0, conv = 1, deconv = 2, add = 3, concat = 4 };

struct Node {
  NodeOp op = NodeOp::input;
  int layer = -1;    // conv/deconv: index into layers; input: slot (0 ref, 1 cur)
  int a = -1;        // first operand node
  int b = -1;        // second operand node (add/concat)
  bool activation = false;
};

struct ArchConfig {
  std::array<int, 4> encoder{8, 8, 16, 16};
  std::array<int, 3> decoder{16, 8, 8};
  std::vector<int> head{32, 16};  // hidden 3x3 convs before the 2-channel output
  bool skip_full_resolution = true;
  bool share_stream_weights = false;  // SubFlowNetC only
  float input_offset = 0.5f;
  float input_scale = 4.0f;
};

ArchConfig default_arch(Variant v);

inline constexpr int kInputSize = 48;

template <typename T>
struct NetworkParams {
  Variant variant = Variant::subflownet_c;
  ArchConfig arch;
  std::vector<Layer<T>> layers;
  std::vector<Node> nodes;  // topological order; the last node is the output

  std::size_t total_params() const noexcept;
  void zero();
  template <typename U>
  NetworkParams<U> cast() const;
};

template <typename T>
NetworkParams<T> build_network(Variant variant, const ArchConfig& arch);
template <typename T>
NetworkParams<T> build_network(Variant variant) {
  return build_network<T>(variant, default_arch(variant));
}

// Uniform in +-sqrt(1/fan_in), biases zero. Deterministic in `seed`.
template <typename T>
void init_uniform(NetworkParams<T>& params, std::uint64_t seed);

template <typename T>
std::size_t count_params(const NetworkParams<T>& params) {
  return params.total_params();
}

template <typename T>
struct ForwardCache {
  std::vector<Tensor4<T>> values;  // one per node
  bool valid = false;
};

template <typename T>
struct Gradients {
  std::vector<std::vector<T>> weight;
  std::vector<std::vector<T>> bias;
  Tensor4<T> reference;
  Tensor4<T> current;

  void reset(const NetworkParams<T>& params);
  void add(const Gradients& other);
};

// reference/current are (B,1,48,48); returns (B,2,48,48). `threads` > 1
// splits the batch across threads; outputs are identical for any count.
template <typename T>
Tensor4<T> forward(const NetworkParams<T>& params, const Tensor4<T>& reference, const Tensor4<T>& current,
                   ForwardCache<T>* cache = nullptr, int threads = 1);

// Requires a cache filled by forward(). Per-thread partial gradients are
// reduced in thread order, so results depend on `threads` only through
// floating-point summation order; threads=1 is the deterministic reference.
template <typename T>
Gradients<T> backward(const NetworkParams<T>& params, const ForwardCache<T>& cache, const Tensor4<T>& grad_output,
                      int threads = 1);

// SFCK checkpoint: "SFCK", u32 version, u8 variant, architecture block, layer
// weights/biases as f32, trailing u64 FNV-1a of every preceding byte.
void save_checkpoint(const NetworkParams<float>& params, const std::filesystem::path& path);
NetworkParams<float> load_checkpoint(const std::filesystem::path& path);
std::vector<unsigned char> serialize(const NetworkParams<float>& params);
NetworkParams<float> deserialize(const std::vector<unsigned char>& bytes);

}  // namespace subflow::nn
