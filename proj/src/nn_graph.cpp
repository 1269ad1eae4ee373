#include <cmath>
#include <random>
#include <string>

#include "binary_io.hpp"
#include "nn_internal.hpp"
#include "subflow/error.hpp"
#include "subflow/parallel.hpp"

namespace subflow::nn {

namespace {

constexpr const char* kModule = "nn";
constexpr std::uint32_t kCheckpointVersion = 1;

struct GraphBuilder {
  std::vector<Layer<float>> layers;
  std::vector<Node> nodes;

  int input(int slot) {
    nodes.push_back({NodeOp::input, slot, -1, -1, false});
    return static_cast<int>(nodes.size()) - 1;
  }
  int layer(const std::string& name, const LayerSpec& spec) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name) return static_cast<int>(i);
    layers.emplace_back(name, spec);
    return static_cast<int>(layers.size()) - 1;
  }
  int apply(int layer_index, int from, bool activation) {
    const NodeOp op = layers[static_cast<std::size_t>(layer_index)].spec.kind == LayerKind::conv ? NodeOp::conv
                                                                                                 : NodeOp::deconv;
    nodes.push_back({op, layer_index, from, -1, activation});
    return static_cast<int>(nodes.size()) - 1;
  }
  int binary(NodeOp op, int a, int b) {
    nodes.push_back({op, -1, a, b, false});
    return static_cast<int>(nodes.size()) - 1;
  }

  int stream(const std::string& prefix, int from, int in_channels, const ArchConfig& arch) {
    const auto& e = arch.encoder;
    const auto& d = arch.decoder;
    const int c1 = apply(layer(prefix + ".conv1", conv_spec(in_channels, e[0], 7, 1)), from, true);
    const int c2 = apply(layer(prefix + ".conv2", conv_spec(e[0], e[1], 5, 2)), c1, true);
    const int c3 = apply(layer(prefix + ".conv3", conv_spec(e[1], e[2], 3, 2)), c2, true);
    const int c4 = apply(layer(prefix + ".conv4", conv_spec(e[2], e[3], 3, 2)), c3, true);
    int x = apply(layer(prefix + ".deconv1", deconv_spec(e[3], d[0])), c4, true);
    x = binary(NodeOp::add, x, c3);
    x = apply(layer(prefix + ".deconv2", deconv_spec(d[0], d[1])), x, true);
    x = binary(NodeOp::add, x, c2);
    x = apply(layer(prefix + ".deconv3", deconv_spec(d[1], d[2])), x, true);
    if (arch.skip_full_resolution) x = binary(NodeOp::add, x, c1);
    return x;
  }

  void head(int from, int channels, const ArchConfig& arch) {
    int x = from;
    for (std::size_t i = 0; i < arch.head.size(); ++i) {
      x = apply(layer("head.conv" + std::to_string(i + 1), conv_spec(channels, arch.head[i], 3, 1)), x, true);
      channels = arch.head[i];
    }
    apply(layer("head.out", conv_spec(channels, 2, 3, 1)), x, false);
  }
};

void validate_arch(Variant variant, const ArchConfig& arch) {
  for (int v : arch.encoder)
    if (v < 1) fail(Errc::parameter, kModule, "encoder widths must be positive");
  for (int v : arch.decoder)
    if (v < 1) fail(Errc::parameter, kModule, "decoder widths must be positive");
  for (int v : arch.head)
    if (v < 1) fail(Errc::parameter, kModule, "head widths must be positive");
  if (arch.decoder[0] != arch.encoder[2] || arch.decoder[1] != arch.encoder[1])
    fail(Errc::parameter, kModule, "decoder widths must match the encoder skip widths");
  if (arch.skip_full_resolution && arch.decoder[2] != arch.encoder[0])
    fail(Errc::parameter, kModule, "full-resolution skip requires decoder[2] == encoder[0]");
  if (!(arch.input_scale > 0.0f) || !std::isfinite(arch.input_offset))
    fail(Errc::parameter, kModule, "invalid input normalization");
  if (variant == Variant::subflownet_s && arch.share_stream_weights)
    fail(Errc::parameter, kModule, "weight sharing applies to SubFlowNetC only");
}

template <typename T>
void check_inputs(const Tensor4<T>& reference, const Tensor4<T>& current) {
  if (reference.c != 1 || current.c != 1) fail(Errc::dimension, kModule, "inputs must have one channel");
  if (!reference.same_shape(current)) fail(Errc::dimension, kModule, "reference/current shape mismatch");
  if (reference.n < 1) fail(Errc::dimension, kModule, "empty batch");
  if (reference.h % 8 != 0 || reference.w % 8 != 0 || reference.h < 8 || reference.w < 8)
    fail(Errc::dimension, kModule, "input size must be a positive multiple of 8");
}

// Output shape of every node for a given input shape.
template <typename T>
std::vector<std::array<int, 3>> node_shapes(const NetworkParams<T>& params, int h, int w) {
  std::vector<std::array<int, 3>> shapes(params.nodes.size());
  for (std::size_t i = 0; i < params.nodes.size(); ++i) {
    const Node& nd = params.nodes[i];
    switch (nd.op) {
      case NodeOp::input:
        shapes[i] = {1, h, w};
        break;
      case NodeOp::conv:
      case NodeOp::deconv: {
        const LayerSpec& sp = params.layers[static_cast<std::size_t>(nd.layer)].spec;
        const auto& in = shapes[static_cast<std::size_t>(nd.a)];
        shapes[i] = {sp.out_channels, sp.output_size(in[1]), sp.output_size(in[2])};
        break;
      }
      case NodeOp::add: {
        const auto& a = shapes[static_cast<std::size_t>(nd.a)];
        const auto& b = shapes[static_cast<std::size_t>(nd.b)];
        if (a != b) fail(Errc::dimension, kModule, "add operands differ in shape");
        shapes[i] = a;
        break;
      }
      case NodeOp::concat: {
        const auto& a = shapes[static_cast<std::size_t>(nd.a)];
        const auto& b = shapes[static_cast<std::size_t>(nd.b)];
        if (a[1] != b[1] || a[2] != b[2]) fail(Errc::dimension, kModule, "concat operands differ in size");
        shapes[i] = {a[0] + b[0], a[1], a[2]};
        break;
      }
    }
  }
  return shapes;
}

template <typename T>
void activate_range(Tensor4<T>& t, int b0, int b1) {
  const std::size_t per = static_cast<std::size_t>(t.c) * t.plane();
  T* p = t.data.data() + per * b0;
  T* end = t.data.data() + per * b1;
  const T slope = static_cast<T>(kLeakySlope);
  for (; p != end; ++p)
    if (!(*p > T{0})) *p *= slope;
}

template <typename T>
void copy_channels(const Tensor4<T>& src, Tensor4<T>& dst, int channel_offset, int b0, int b1) {
  const std::size_t plane = src.plane();
  for (int b = b0; b < b1; ++b)
    for (int ch = 0; ch < src.c; ++ch) {
      const T* s = src.channel(b, ch);
      std::copy(s, s + plane, dst.channel(b, ch + channel_offset));
    }
}

template <typename T>
void accumulate_channels(const Tensor4<T>& src, int channel_offset, Tensor4<T>& dst, int b0, int b1) {
  const std::size_t plane = dst.plane();
  for (int b = b0; b < b1; ++b)
    for (int ch = 0; ch < dst.c; ++ch) {
      const T* s = src.channel(b, ch + channel_offset);
      T* d = dst.channel(b, ch);
      for (std::size_t i = 0; i < plane; ++i) d[i] += s[i];
    }
}

}  // namespace

const char* variant_name(Variant v) noexcept {
  return v == Variant::subflownet_s ? "SubFlowNetS" : "SubFlowNetC";
}

Variant parse_variant(const std::string& name) {
  if (name == "SubFlowNetS" || name == "S" || name == "s" || name == "subflownet_s") return Variant::subflownet_s;
  if (name == "SubFlowNetC" || name == "C" || name == "c" || name == "subflownet_c") return Variant::subflownet_c;
  fail(Errc::parameter, kModule, "unknown network variant '" + name + "'");
}

ArchConfig default_arch(Variant v) {
  ArchConfig a;
  if (v == Variant::subflownet_s) {
    a.encoder = {8, 16, 32, 32};
    a.decoder = {32, 16, 8};
  }
  return a;
}

template <typename T>
std::size_t NetworkParams<T>::total_params() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

template <typename T>
void NetworkParams<T>::zero() {
  for (auto& l : layers) {
    std::fill(l.weight.begin(), l.weight.end(), T{0});
    std::fill(l.bias.begin(), l.bias.end(), T{0});
  }
}

template <typename T>
template <typename U>
NetworkParams<U> NetworkParams<T>::cast() const {
  NetworkParams<U> out;
  out.variant = variant;
  out.arch = arch;
  out.nodes = nodes;
  out.layers.reserve(layers.size());
  for (const auto& l : layers) {
    Layer<U> m(l.name, l.spec);
    for (std::size_t i = 0; i < l.weight.size(); ++i) m.weight[i] = static_cast<U>(l.weight[i]);
    for (std::size_t i = 0; i < l.bias.size(); ++i) m.bias[i] = static_cast<U>(l.bias[i]);
    out.layers.push_back(std::move(m));
  }
  return out;
}

template <typename T>
NetworkParams<T> build_network(Variant variant, const ArchConfig& arch) {
  validate_arch(variant, arch);
  GraphBuilder g;
  const int ref = g.input(0);
  const int cur = g.input(1);
  if (variant == Variant::subflownet_s) {
    const int both = g.binary(NodeOp::concat, ref, cur);
    const int feat = g.stream("stream", both, 2, arch);
    g.head(feat, arch.decoder[2], arch);
  } else {
    const int fa = g.stream("a", ref, 1, arch);
    const int fb = g.stream(arch.share_stream_weights ? "a" : "b", cur, 1, arch);
    const int both = g.binary(NodeOp::concat, fa, fb);
    g.head(both, 2 * arch.decoder[2], arch);
  }
  NetworkParams<float> pf;
  pf.variant = variant;
  pf.arch = arch;
  pf.layers = std::move(g.layers);
  pf.nodes = std::move(g.nodes);
  if constexpr (std::is_same_v<T, float>) {
    return pf;
  } else {
    return pf.template cast<T>();
  }
}

template <typename T>
void init_uniform(NetworkParams<T>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : params.layers) {
    const LayerSpec& sp = l.spec;
    double fan_in = static_cast<double>(sp.in_channels) * sp.kernel * sp.kernel;
    if (sp.kind == LayerKind::deconv) fan_in /= static_cast<double>(sp.stride) * sp.stride;
    const double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : l.weight) w = static_cast<T>(dist(rng));
    std::fill(l.bias.begin(), l.bias.end(), T{0});
  }
}

template <typename T>
void Gradients<T>::reset(const NetworkParams<T>& params) {
  weight.resize(params.layers.size());
  bias.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    weight[i].assign(params.layers[i].weight.size(), T{0});
    bias[i].assign(params.layers[i].bias.size(), T{0});
  }
}

template <typename T>
void Gradients<T>::add(const Gradients& other) {
  if (other.weight.size() != weight.size()) fail(Errc::dimension, kModule, "gradient structure mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    for (std::size_t j = 0; j < weight[i].size(); ++j) weight[i][j] += other.weight[i][j];
    for (std::size_t j = 0; j < bias[i].size(); ++j) bias[i][j] += other.bias[i][j];
  }
}

template <typename T>
Tensor4<T> forward(const NetworkParams<T>& params, const Tensor4<T>& reference, const Tensor4<T>& current,
                   ForwardCache<T>* cache, int threads) {
  check_inputs(reference, current);
  if (params.nodes.empty()) fail(Errc::state, kModule, "network has no nodes");
  const auto shapes = node_shapes(params, reference.h, reference.w);
  ForwardCache<T> local;
  ForwardCache<T>& fc = cache ? *cache : local;
  fc.valid = false;
  fc.values.resize(params.nodes.size());
  const int batch = reference.n;
  for (std::size_t i = 0; i < params.nodes.size(); ++i) {
    const auto& s = shapes[i];
    Tensor4<T>& v = fc.values[i];
    if (v.n != batch || v.c != s[0] || v.h != s[1] || v.w != s[2]) v = Tensor4<T>(batch, s[0], s[1], s[2]);
  }
  const T offset = static_cast<T>(params.arch.input_offset);
  const T scale = static_cast<T>(params.arch.input_scale);

  parallel_chunks(batch, resolve_threads(threads), [&](int, int b0, int b1) {
    for (std::size_t i = 0; i < params.nodes.size(); ++i) {
      const Node& nd = params.nodes[i];
      Tensor4<T>& out = fc.values[i];
      switch (nd.op) {
        case NodeOp::input: {
          const Tensor4<T>& src = nd.layer == 0 ? reference : current;
          const std::size_t per = src.plane();
          for (std::size_t j = per * b0; j < per * b1; ++j) out.data[j] = (src.data[j] - offset) * scale;
          break;
        }
        case NodeOp::conv:
          conv_forward_range(fc.values[static_cast<std::size_t>(nd.a)], params.layers[static_cast<std::size_t>(nd.layer)],
                             out, b0, b1);
          break;
        case NodeOp::deconv:
          deconv_forward_range(fc.values[static_cast<std::size_t>(nd.a)],
                               params.layers[static_cast<std::size_t>(nd.layer)], out, b0, b1);
          break;
        case NodeOp::add: {
          const Tensor4<T>& a = fc.values[static_cast<std::size_t>(nd.a)];
          const Tensor4<T>& b = fc.values[static_cast<std::size_t>(nd.b)];
          const std::size_t per = static_cast<std::size_t>(out.c) * out.plane();
          for (std::size_t j = per * b0; j < per * b1; ++j) out.data[j] = a.data[j] + b.data[j];
          break;
        }
        case NodeOp::concat: {
          const Tensor4<T>& a = fc.values[static_cast<std::size_t>(nd.a)];
          copy_channels(a, out, 0, b0, b1);
          copy_channels(fc.values[static_cast<std::size_t>(nd.b)], out, a.c, b0, b1);
          break;
        }
      }
      if (nd.activation) activate_range(out, b0, b1);
    }
  });
  fc.valid = true;
  return fc.values.back();
}

template <typename T>
Gradients<T> backward(const NetworkParams<T>& params, const ForwardCache<T>& cache, const Tensor4<T>& grad_output,
                      int threads) {
  if (!cache.valid || cache.values.size() != params.nodes.size())
    fail(Errc::state, kModule, "backward requires a forward cache from the same network");
  if (!grad_output.same_shape(cache.values.back())) fail(Errc::dimension, kModule, "output gradient shape mismatch");
  const int batch = grad_output.n;
  const std::size_t count = params.nodes.size();
  std::vector<Tensor4<T>> grads(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor4<T>& v = cache.values[i];
    grads[i] = Tensor4<T>(v.n, v.c, v.h, v.w);
  }
  grads.back() = grad_output;

  const int chunks = std::max(1, std::min(resolve_threads(threads), batch));
  std::vector<Gradients<T>> partial(static_cast<std::size_t>(chunks));
  for (auto& p : partial) p.reset(params);
  const T scale = static_cast<T>(params.arch.input_scale);
  const T slope = static_cast<T>(kLeakySlope);

  parallel_chunks(batch, chunks, [&](int chunk, int b0, int b1) {
    Gradients<T>& gp = partial[static_cast<std::size_t>(chunk)];
    for (std::size_t r = count; r-- > 0;) {
      const Node& nd = params.nodes[r];
      Tensor4<T>& g = grads[r];
      if (nd.activation) {
        const Tensor4<T>& out = cache.values[r];
        const std::size_t per = static_cast<std::size_t>(g.c) * g.plane();
        for (std::size_t j = per * b0; j < per * b1; ++j)
          if (!(out.data[j] > T{0})) g.data[j] *= slope;
      }
      switch (nd.op) {
        case NodeOp::input:
          break;
        case NodeOp::conv: {
          const auto li = static_cast<std::size_t>(nd.layer);
          const auto ai = static_cast<std::size_t>(nd.a);
          conv_backward_range(cache.values[ai], params.layers[li], g, &grads[ai], gp.weight[li], gp.bias[li], b0, b1);
          break;
        }
        case NodeOp::deconv: {
          const auto li = static_cast<std::size_t>(nd.layer);
          const auto ai = static_cast<std::size_t>(nd.a);
          deconv_backward_range(cache.values[ai], params.layers[li], g, &grads[ai], gp.weight[li], b0, b1);
          break;
        }
        case NodeOp::add: {
          for (int operand : {nd.a, nd.b}) {
            Tensor4<T>& d = grads[static_cast<std::size_t>(operand)];
            const std::size_t per = static_cast<std::size_t>(g.c) * g.plane();
            for (std::size_t j = per * b0; j < per * b1; ++j) d.data[j] += g.data[j];
          }
          break;
        }
        case NodeOp::concat: {
          Tensor4<T>& ga = grads[static_cast<std::size_t>(nd.a)];
          accumulate_channels(g, 0, ga, b0, b1);
          accumulate_channels(g, ga.c, grads[static_cast<std::size_t>(nd.b)], b0, b1);
          break;
        }
      }
    }
  });

  Gradients<T> total = std::move(partial[0]);
  for (std::size_t c = 1; c < partial.size(); ++c) total.add(partial[c]);
  for (std::size_t i = 0; i < count; ++i) {
    const Node& nd = params.nodes[i];
    if (nd.op != NodeOp::input) continue;
    Tensor4<T> g = grads[i];
    for (T& v : g.data) v *= scale;
    (nd.layer == 0 ? total.reference : total.current) = std::move(g);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Checkpoints.

std::vector<unsigned char> serialize(const NetworkParams<float>& params) {
  using namespace detail;
  std::vector<unsigned char> out;
  put_bytes(out, "SFCK", 4);
  put_u32(out, kCheckpointVersion);
  put_u8(out, static_cast<std::uint8_t>(params.variant));
  const ArchConfig& a = params.arch;
  for (int v : a.encoder) put_u32(out, static_cast<std::uint32_t>(v));
  for (int v : a.decoder) put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(a.head.size()));
  for (int v : a.head) put_u32(out, static_cast<std::uint32_t>(v));
  put_u8(out, a.skip_full_resolution ? 1 : 0);
  put_u8(out, a.share_stream_weights ? 1 : 0);
  put_f32(out, a.input_offset);
  put_f32(out, a.input_scale);
  put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.name.size()));
    put_bytes(out, l.name.data(), l.name.size());
    const LayerSpec& s = l.spec;
    put_u8(out, static_cast<std::uint8_t>(s.kind));
    for (int v : {s.in_channels, s.out_channels, s.kernel, s.stride, s.pad, s.output_pad})
      put_u32(out, static_cast<std::uint32_t>(v));
    put_u8(out, s.has_bias ? 1 : 0);
    for (float w : l.weight) put_f32(out, w);
    for (float b : l.bias) put_f32(out, b);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));
  return out;
}

NetworkParams<float> deserialize(const std::vector<unsigned char>& bytes) {
  using namespace detail;
  if (bytes.size() < 4 + 4 + 8 || std::string(bytes.begin(), bytes.begin() + 4) != "SFCK")
    fail(Errc::format, kModule, "not a SubFlow checkpoint");
  const std::size_t body = bytes.size() - 8;
  Reader tail(bytes.data() + body, 8);
  if (tail.u64() != fnv1a64(bytes.data(), body)) fail(Errc::format, kModule, "checkpoint checksum mismatch");

  Reader r(bytes.data(), body);
  auto need = [&](std::size_t n) {
    if (!r.has(n)) fail(Errc::format, kModule, "truncated checkpoint");
  };
  r.str(4);
  need(4);
  if (r.u32() != kCheckpointVersion) fail(Errc::format, kModule, "unsupported checkpoint version");
  need(1);
  const std::uint8_t variant = r.u8();
  if (variant > 1) fail(Errc::format, kModule, "unknown variant in checkpoint");
  ArchConfig a;
  need(4 * 8);
  for (int& v : a.encoder) v = static_cast<int>(r.u32());
  for (int& v : a.decoder) v = static_cast<int>(r.u32());
  const std::uint32_t head_count = r.u32();
  if (head_count > 64) fail(Errc::format, kModule, "corrupt head description");
  need(4ull * head_count + 2 + 8);
  a.head.resize(head_count);
  for (int& v : a.head) v = static_cast<int>(r.u32());
  a.skip_full_resolution = r.u8() != 0;
  a.share_stream_weights = r.u8() != 0;
  a.input_offset = r.f32();
  a.input_scale = r.f32();

  NetworkParams<float> params;
  try {
    params = build_network<float>(static_cast<Variant>(variant), a);
  } catch (const Error& e) {
    fail(Errc::format, kModule, std::string("checkpoint architecture invalid: ") + e.what());
  }
  need(4);
  if (r.u32() != params.layers.size()) fail(Errc::format, kModule, "checkpoint layer count mismatch");
  for (auto& l : params.layers) {
    need(4);
    const std::uint32_t name_len = r.u32();
    need(name_len + 1 + 24 + 1);
    const std::string name = r.str(name_len);
    if (name != l.name) fail(Errc::format, kModule, "checkpoint layer '" + name + "' does not match '" + l.name + "'");
    LayerSpec s;
    s.kind = static_cast<LayerKind>(r.u8());
    s.in_channels = static_cast<int>(r.u32());
    s.out_channels = static_cast<int>(r.u32());
    s.kernel = static_cast<int>(r.u32());
    s.stride = static_cast<int>(r.u32());
    s.pad = static_cast<int>(r.u32());
    s.output_pad = static_cast<int>(r.u32());
    s.has_bias = r.u8() != 0;
    const LayerSpec& e = l.spec;
    if (s.kind != e.kind || s.in_channels != e.in_channels || s.out_channels != e.out_channels ||
        s.kernel != e.kernel || s.stride != e.stride || s.pad != e.pad || s.output_pad != e.output_pad ||
        s.has_bias != e.has_bias)
      fail(Errc::format, kModule, "checkpoint layer '" + name + "' has unexpected dimensions");
    need(4 * (l.weight.size() + l.bias.size()));
    for (float& w : l.weight) w = r.f32();
    for (float& b : l.bias) b = r.f32();
  }
  if (r.remaining() != 0) fail(Errc::format, kModule, "trailing bytes in checkpoint");
  return params;
}

void save_checkpoint(const NetworkParams<float>& params, const std::filesystem::path& path) {
  detail::write_file(path, serialize(params), kModule);
}

NetworkParams<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize(detail::read_file(path, kModule));
}

#define SUBFLOW_INSTANTIATE_GRAPH(T)                                                                              \
  template struct NetworkParams<T>;                                                                               \
  template NetworkParams<T> build_network<T>(Variant, const ArchConfig&);                                         \
  template void init_uniform<T>(NetworkParams<T>&, std::uint64_t);                                                \
  template struct Gradients<T>;                                                                                   \
  template Tensor4<T> forward<T>(const NetworkParams<T>&, const Tensor4<T>&, const Tensor4<T>&, ForwardCache<T>*, \
                                 int);                                                                            \
  template Gradients<T> backward<T>(const NetworkParams<T>&, const ForwardCache<T>&, const Tensor4<T>&, int);

SUBFLOW_INSTANTIATE_GRAPH(float)
SUBFLOW_INSTANTIATE_GRAPH(double)

template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;
template NetworkParams<float> NetworkParams<float>::cast<float>() const;
template NetworkParams<double> NetworkParams<double>::cast<double>() const;

#undef SUBFLOW_INSTANTIATE_GRAPH

}  // namespace subflow::nn
