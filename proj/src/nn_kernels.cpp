#include <algorithm>
#include <string>

#include <Eigen/Core>

#include "nn_internal.hpp"
#include "subflow/error.hpp"

namespace subflow::nn {

namespace {

constexpr const char* kModule = "nn";

// Range of small-side indices o with 0 <= o*s + k - p < big_len.
inline void tap_range(int small_len, int big_len, int s, int k, int p, int& lo, int& hi) {
  const int first = p - k;
  lo = first <= 0 ? 0 : (first + s - 1) / s;
  const int last = big_len - 1 + p - k;
  hi = last < 0 ? 0 : std::min(small_len, last / s + 1);
  if (lo > hi) lo = hi;
}

struct PlaneGeom {
  int sh, sw;  // small side
  int bh, bw;  // big side
  int s, p;
};

// Tiled im2col over small-side rows [y0, y1): for tile pixel j,
// cols[(c*k + ky)*k + kx][j] = big[c][o*s + k - p], zero outside the big grid.
template <typename T>
void im2col(const T* big, int channels, const PlaneGeom& g, int k, int y0, int y1, T* cols) {
  const std::size_t tp = static_cast<std::size_t>(y1 - y0) * g.sw;
  const std::size_t bp = static_cast<std::size_t>(g.bh) * g.bw;
  std::fill(cols, cols + tp * channels * k * k, T{0});
  for (int c = 0; c < channels; ++c) {
    const T* plane = big + bp * c;
    for (int ky = 0; ky < k; ++ky) {
      int ylo, yhi;
      tap_range(g.sh, g.bh, g.s, ky, g.p, ylo, yhi);
      ylo = std::max(ylo, y0);
      yhi = std::min(yhi, y1);
      for (int kx = 0; kx < k; ++kx) {
        int xlo, xhi;
        tap_range(g.sw, g.bw, g.s, kx, g.p, xlo, xhi);
        T* row = cols + tp * ((static_cast<std::size_t>(c) * k + ky) * k + kx);
        for (int oy = ylo; oy < yhi; ++oy) {
          T* dst = row + static_cast<std::size_t>(oy - y0) * g.sw;
          const T* src = plane + static_cast<std::size_t>(oy * g.s + ky - g.p) * g.bw + (kx - g.p);
          if (g.s == 1) {
            std::copy(src + xlo, src + xhi, dst + xlo);
          } else {
            for (int ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.s];
          }
        }
      }
    }
  }
}

// Adjoint of im2col over the same tile.
template <typename T>
void col2im(const T* cols, int channels, const PlaneGeom& g, int k, int y0, int y1, T* big) {
  const std::size_t tp = static_cast<std::size_t>(y1 - y0) * g.sw;
  const std::size_t bp = static_cast<std::size_t>(g.bh) * g.bw;
  for (int c = 0; c < channels; ++c) {
    T* plane = big + bp * c;
    for (int ky = 0; ky < k; ++ky) {
      int ylo, yhi;
      tap_range(g.sh, g.bh, g.s, ky, g.p, ylo, yhi);
      ylo = std::max(ylo, y0);
      yhi = std::min(yhi, y1);
      for (int kx = 0; kx < k; ++kx) {
        int xlo, xhi;
        tap_range(g.sw, g.bw, g.s, kx, g.p, xlo, xhi);
        const T* row = cols + tp * ((static_cast<std::size_t>(c) * k + ky) * k + kx);
        for (int oy = ylo; oy < yhi; ++oy) {
          const T* src = row + static_cast<std::size_t>(oy - y0) * g.sw;
          T* dst = plane + static_cast<std::size_t>(oy * g.s + ky - g.p) * g.bw + (kx - g.p);
          if (g.s == 1) {
            for (int ox = xlo; ox < xhi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = xlo; ox < xhi; ++ox) dst[ox * g.s] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

// Small-side rows per tile so that one column block stays cache resident.
inline int tile_rows(int rows, int small_w, int small_h, std::size_t elem) {
  constexpr std::size_t kBudget = 192 * 1024;
  const std::size_t per_row = static_cast<std::size_t>(rows) * small_w * elem;
  const int t = static_cast<int>(std::max<std::size_t>(1, kBudget / std::max<std::size_t>(1, per_row)));
  return std::min(t, small_h);
}

void check_layer(const LayerSpec& spec, LayerKind expected, int in_channels, const std::string& name) {
  if (spec.kind != expected)
    fail(Errc::parameter, kModule, name + ": layer kind mismatch");
  if (spec.stride < 1 || spec.kernel < 1 || spec.pad < 0)
    fail(Errc::parameter, kModule, name + ": invalid stride/kernel/pad");
  if (in_channels != spec.in_channels)
    fail(Errc::dimension, kModule,
         name + ": expected " + std::to_string(spec.in_channels) + " input channels, got " + std::to_string(in_channels));
}

}  // namespace

template <typename T>
Tensor4<T> make_output(const Tensor4<T>& input, const LayerSpec& spec) {
  const int oh = spec.output_size(input.h);
  const int ow = spec.output_size(input.w);
  if (oh <= 0 || ow <= 0) fail(Errc::dimension, kModule, "layer output would be empty");
  return Tensor4<T>(input.n, spec.out_channels, oh, ow);
}

template <typename T>
void conv_forward_range(const Tensor4<T>& input, const Layer<T>& layer, Tensor4<T>& out, int b0, int b1) {
  const LayerSpec& sp = layer.spec;
  const int k = sp.kernel;
  const PlaneGeom g{out.h, out.w, input.h, input.w, sp.stride, sp.pad};
  const int rows = sp.in_channels * k * k;
  const int plane = out.h * out.w;
  const int tile = tile_rows(rows, out.w, out.h, sizeof(T));
  std::vector<T>& cols = scratch<T>();
  cols.resize(static_cast<std::size_t>(rows) * tile * out.w);
  CMapM<T> w(layer.weight.data(), sp.out_channels, rows);
  for (int b = b0; b < b1; ++b) {
    T* dst = out.channel(b, 0);
    for (int y0 = 0; y0 < out.h; y0 += tile) {
      const int y1 = std::min(out.h, y0 + tile);
      const int pix = (y1 - y0) * out.w;
      im2col(input.channel(b, 0), sp.in_channels, g, k, y0, y1, cols.data());
      StridedMap<T> o(dst + static_cast<std::size_t>(y0) * out.w, sp.out_channels, pix, Eigen::OuterStride<>(plane));
      o.noalias() = w * CMapM<T>(cols.data(), rows, pix);
    }
    if (sp.has_bias)
      for (int oc = 0; oc < sp.out_channels; ++oc) {
        T* p = dst + static_cast<std::size_t>(oc) * plane;
        for (int i = 0; i < plane; ++i) p[i] += layer.bias[oc];
      }
  }
}

template <typename T>
void deconv_forward_range(const Tensor4<T>& input, const Layer<T>& layer, Tensor4<T>& out, int b0, int b1) {
  const LayerSpec& sp = layer.spec;
  const int k = sp.kernel;
  const PlaneGeom g{input.h, input.w, out.h, out.w, sp.stride, sp.pad};
  const int rows = sp.out_channels * k * k;
  const int plane = input.h * input.w;
  const int tile = tile_rows(rows, input.w, input.h, sizeof(T));
  std::vector<T>& cols = scratch<T>();
  cols.resize(static_cast<std::size_t>(rows) * tile * input.w);
  CMapM<T> w(layer.weight.data(), sp.in_channels, rows);
  for (int b = b0; b < b1; ++b) {
    T* dst = out.channel(b, 0);
    const std::size_t oplane = out.plane();
    for (int oc = 0; oc < sp.out_channels; ++oc)
      std::fill(dst + oplane * oc, dst + oplane * (oc + 1), sp.has_bias ? layer.bias[oc] : T{0});
    for (int y0 = 0; y0 < input.h; y0 += tile) {
      const int y1 = std::min(input.h, y0 + tile);
      const int pix = (y1 - y0) * input.w;
      CStridedMap<T> in(input.channel(b, 0) + static_cast<std::size_t>(y0) * input.w, sp.in_channels, pix,
                        Eigen::OuterStride<>(plane));
      MapM<T>(cols.data(), rows, pix).noalias() = w.transpose() * in;
      col2im(cols.data(), sp.out_channels, g, k, y0, y1, dst);
    }
  }
}

template <typename T>
void conv_backward_range(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_out,
                         Tensor4<T>* grad_in, std::vector<T>& grad_w, std::vector<T>& grad_b, int b0, int b1) {
  const LayerSpec& sp = layer.spec;
  const int k = sp.kernel;
  const PlaneGeom g{grad_out.h, grad_out.w, input.h, input.w, sp.stride, sp.pad};
  const int rows = sp.in_channels * k * k;
  const int plane = grad_out.h * grad_out.w;
  const int tile = tile_rows(rows, grad_out.w, grad_out.h, sizeof(T));
  std::vector<T>& cols = scratch<T>();
  cols.resize(static_cast<std::size_t>(rows) * tile * grad_out.w);
  CMapM<T> w(layer.weight.data(), sp.out_channels, rows);
  MapM<T> gw(grad_w.data(), sp.out_channels, rows);
  for (int b = b0; b < b1; ++b) {
    const T* gob = grad_out.channel(b, 0);
    if (sp.has_bias)
      for (int oc = 0; oc < sp.out_channels; ++oc) {
        const T* p = gob + static_cast<std::size_t>(oc) * plane;
        T acc{0};
        for (int i = 0; i < plane; ++i) acc += p[i];
        grad_b[oc] += acc;
      }
    for (int y0 = 0; y0 < grad_out.h; y0 += tile) {
      const int y1 = std::min(grad_out.h, y0 + tile);
      const int pix = (y1 - y0) * grad_out.w;
      CStridedMap<T> go(gob + static_cast<std::size_t>(y0) * grad_out.w, sp.out_channels, pix,
                        Eigen::OuterStride<>(plane));
      im2col(input.channel(b, 0), sp.in_channels, g, k, y0, y1, cols.data());
      MapM<T> c(cols.data(), rows, pix);
      gw.noalias() += go * c.transpose();
      if (grad_in) {
        c.noalias() = w.transpose() * go;
        col2im(cols.data(), sp.in_channels, g, k, y0, y1, grad_in->channel(b, 0));
      }
    }
  }
}

template <typename T>
void deconv_backward_range(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_out,
                           Tensor4<T>* grad_in, std::vector<T>& grad_w, int b0, int b1) {
  const LayerSpec& sp = layer.spec;
  const int k = sp.kernel;
  const PlaneGeom g{input.h, input.w, grad_out.h, grad_out.w, sp.stride, sp.pad};
  const int rows = sp.out_channels * k * k;
  const int plane = input.h * input.w;
  const int tile = tile_rows(rows, input.w, input.h, sizeof(T));
  std::vector<T>& cols = scratch<T>();
  cols.resize(static_cast<std::size_t>(rows) * tile * input.w);
  CMapM<T> w(layer.weight.data(), sp.in_channels, rows);
  MapM<T> gw(grad_w.data(), sp.in_channels, rows);
  for (int b = b0; b < b1; ++b) {
    for (int y0 = 0; y0 < input.h; y0 += tile) {
      const int y1 = std::min(input.h, y0 + tile);
      const int pix = (y1 - y0) * input.w;
      const std::size_t off = static_cast<std::size_t>(y0) * input.w;
      im2col(grad_out.channel(b, 0), sp.out_channels, g, k, y0, y1, cols.data());
      CMapM<T> c(cols.data(), rows, pix);
      gw.noalias() += CStridedMap<T>(input.channel(b, 0) + off, sp.in_channels, pix, Eigen::OuterStride<>(plane)) *
                      c.transpose();
      if (grad_in)
        StridedMap<T>(grad_in->channel(b, 0) + off, sp.in_channels, pix, Eigen::OuterStride<>(plane)).noalias() +=
            w * c;
    }
  }
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const Layer<T>& layer) {
  check_layer(layer.spec, LayerKind::conv, input.c, layer.name.empty() ? "conv2d" : layer.name);
  Tensor4<T> out = make_output(input, layer.spec);
  conv_forward_range(input, layer, out, 0, input.n);
  return out;
}

template <typename T>
Tensor4<T> deconv2d(const Tensor4<T>& input, const Layer<T>& layer) {
  check_layer(layer.spec, LayerKind::deconv, input.c, layer.name.empty() ? "deconv2d" : layer.name);
  Tensor4<T> out = make_output(input, layer.spec);
  deconv_forward_range(input, layer, out, 0, input.n);
  return out;
}

template <typename T>
void conv2d_backward(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_output,
                     Tensor4<T>* grad_input, std::vector<T>& grad_weight, std::vector<T>& grad_bias) {
  check_layer(layer.spec, LayerKind::conv, input.c, layer.name.empty() ? "conv2d" : layer.name);
  const Tensor4<T> shape = make_output(input, layer.spec);
  if (!shape.same_shape(grad_output)) fail(Errc::dimension, kModule, "conv2d_backward: gradient shape mismatch");
  if (grad_input && !grad_input->same_shape(input)) fail(Errc::dimension, kModule, "conv2d_backward: input gradient shape mismatch");
  grad_weight.resize(layer.spec.weight_count(), T{0});
  grad_bias.resize(layer.spec.bias_count(), T{0});
  conv_backward_range(input, layer, grad_output, grad_input, grad_weight, grad_bias, 0, input.n);
}

template <typename T>
void deconv2d_backward(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_output,
                       Tensor4<T>* grad_input, std::vector<T>& grad_weight) {
  check_layer(layer.spec, LayerKind::deconv, input.c, layer.name.empty() ? "deconv2d" : layer.name);
  const Tensor4<T> shape = make_output(input, layer.spec);
  if (!shape.same_shape(grad_output)) fail(Errc::dimension, kModule, "deconv2d_backward: gradient shape mismatch");
  if (grad_input && !grad_input->same_shape(input)) fail(Errc::dimension, kModule, "deconv2d_backward: input gradient shape mismatch");
  grad_weight.resize(layer.spec.weight_count(), T{0});
  deconv_backward_range(input, layer, grad_output, grad_input, grad_weight, 0, input.n);
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& x) {
  Tensor4<T> out = x;
  for (T& v : out.data)
    if (!(v > T{0})) v *= static_cast<T>(kLeakySlope);
  return out;
}

template <typename T>
Tensor4<T> apply_texture_mask(const Tensor4<T>& pred, const MaskGrid& mask_u, const MaskGrid& mask_v) {
  std::vector<std::array<const MaskGrid*, 2>> masks(static_cast<std::size_t>(pred.n), {&mask_u, &mask_v});
  return apply_texture_mask(pred, masks);
}

template <typename T>
Tensor4<T> apply_texture_mask(const Tensor4<T>& pred, const std::vector<std::array<const MaskGrid*, 2>>& masks) {
  if (pred.c != 2) fail(Errc::dimension, kModule, "texture mask expects a 2-channel field");
  if (masks.size() != static_cast<std::size_t>(pred.n)) fail(Errc::dimension, kModule, "texture mask batch mismatch");
  Tensor4<T> out = pred;
  for (int b = 0; b < pred.n; ++b) {
    for (int ch = 0; ch < 2; ++ch) {
      const MaskGrid& m = *masks[static_cast<std::size_t>(b)][static_cast<std::size_t>(ch)];
      if (!m.same_shape(pred.w, pred.h)) fail(Errc::dimension, kModule, "texture mask shape mismatch");
      T* dst = out.channel(b, ch);
      for (std::size_t i = 0; i < out.plane(); ++i)
        if (!m.data[i]) dst[i] = T{0};
    }
  }
  return out;
}

#define SUBFLOW_INSTANTIATE_KERNELS(T)                                                                              \
  template Tensor4<T> make_output(const Tensor4<T>&, const LayerSpec&);                                             \
  template void conv_forward_range(const Tensor4<T>&, const Layer<T>&, Tensor4<T>&, int, int);                      \
  template void deconv_forward_range(const Tensor4<T>&, const Layer<T>&, Tensor4<T>&, int, int);                    \
  template void conv_backward_range(const Tensor4<T>&, const Layer<T>&, const Tensor4<T>&, Tensor4<T>*,             \
                                    std::vector<T>&, std::vector<T>&, int, int);                                   \
  template void deconv_backward_range(const Tensor4<T>&, const Layer<T>&, const Tensor4<T>&, Tensor4<T>*,           \
                                      std::vector<T>&, int, int);                                                  \
  template Tensor4<T> conv2d(const Tensor4<T>&, const Layer<T>&);                                                   \
  template Tensor4<T> deconv2d(const Tensor4<T>&, const Layer<T>&);                                                 \
  template void conv2d_backward(const Tensor4<T>&, const Layer<T>&, const Tensor4<T>&, Tensor4<T>*,                 \
                                std::vector<T>&, std::vector<T>&);                                                 \
  template void deconv2d_backward(const Tensor4<T>&, const Layer<T>&, const Tensor4<T>&, Tensor4<T>*,               \
                                  std::vector<T>&);                                                                \
  template Tensor4<T> leaky_relu(const Tensor4<T>&);                                                                \
  template Tensor4<T> apply_texture_mask(const Tensor4<T>&, const MaskGrid&, const MaskGrid&);                      \
  template Tensor4<T> apply_texture_mask(const Tensor4<T>&, const std::vector<std::array<const MaskGrid*, 2>>&);

SUBFLOW_INSTANTIATE_KERNELS(float)
SUBFLOW_INSTANTIATE_KERNELS(double)

#undef SUBFLOW_INSTANTIATE_KERNELS

}  // namespace subflow::nn
