#include "subflow/phase.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <string>

#include "subflow/error.hpp"

namespace subflow {

namespace {

constexpr const char* kModule = "phase_core";

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void require_shape(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) fail(Errc::dimension, kModule, std::string(what) + ": shape mismatch");
}

}  // namespace

double wrap_phase(double angle) noexcept {
  double r = std::remainder(angle, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

FilterPair build_quadrature_pair(Orientation orientation, double wavelength, double sigma, int size) {
  if (size <= 0 || size % 2 == 0) fail(Errc::parameter, kModule, "kernel size must be odd, got " + std::to_string(size));
  if (!(wavelength > 2.0)) fail(Errc::parameter, kModule, "wavelength must exceed 2 px (Nyquist)");
  if (!(sigma > 0.0)) fail(Errc::parameter, kModule, "sigma must be positive");

  const int half = size / 2;
  const double omega = 2.0 * std::numbers::pi / wavelength;
  FilterPair pair;
  pair.orientation = orientation;
  pair.wavelength = wavelength;
  pair.sigma = sigma;
  pair.even = Grid(size, size);
  pair.odd = Grid(size, size);
  Grid window(size, size);

  double window_sum = 0.0;
  double cos_sum = 0.0;
  for (int y = -half; y <= half; ++y) {
    for (int x = -half; x <= half; ++x) {
      const double w = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      const double s = orientation == Orientation::horizontal ? x : y;
      window(x + half, y + half) = w;
      pair.even(x + half, y + half) = w * std::cos(omega * s);
      pair.odd(x + half, y + half) = w * std::sin(omega * s);
      window_sum += w;
      cos_sum += w * std::cos(omega * s);
    }
  }
  const double dc = cos_sum / window_sum;
  for (std::size_t i = 0; i < window.size(); ++i) pair.even.data[i] -= dc * window.data[i];
  // The odd taps cancel pairwise; force exact antisymmetry against rounding.
  for (int y = -half; y <= half; ++y)
    for (int x = -half; x <= half; ++x)
      if (y < 0 || (y == 0 && x < 0)) pair.odd(x + half, y + half) = -pair.odd(-x + half, -y + half);
  pair.odd(half, half) = 0.0;

  double odd_norm = 0.0;
  for (double v : pair.odd.data) odd_norm += v * v;
  odd_norm = std::sqrt(odd_norm);
  for (double& v : pair.odd.data) v /= odd_norm;

  // Gains at the tuned frequency: |sum h[k] e^{-i omega s}| for each kernel.
  std::complex<double> even_gain = 0.0;
  std::complex<double> odd_gain = 0.0;
  for (int y = -half; y <= half; ++y) {
    for (int x = -half; x <= half; ++x) {
      const double s = orientation == Orientation::horizontal ? x : y;
      const std::complex<double> phasor = std::polar(1.0, -omega * s);
      even_gain += pair.even(x + half, y + half) * phasor;
      odd_gain += pair.odd(x + half, y + half) * phasor;
    }
  }
  const double scale = std::abs(odd_gain) / std::abs(even_gain);
  for (double& v : pair.even.data) v *= scale;
  return pair;
}

ComplexResponse analyze(const Frame& frame, const FilterPair& pair) {
  const int k = pair.size();
  const int half = k / 2;
  const int w = frame.width();
  const int h = frame.height();
  if (k > w || k > h)
    fail(Errc::dimension, kModule, "kernel " + std::to_string(k) + " larger than frame " + std::to_string(w) + "x" + std::to_string(h));

  ComplexResponse out;
  out.orientation = pair.orientation;
  out.amplitude = Grid(w, h);
  out.phase = Grid(w, h);
  std::vector<int> xi(static_cast<std::size_t>(w + 2 * half));
  std::vector<int> yi(static_cast<std::size_t>(h + 2 * half));
  for (int i = -half; i < w + half; ++i) xi[i + half] = reflect101(i, w);
  for (int i = -half; i < h + half; ++i) yi[i + half] = reflect101(i, h);

  // True convolution: S(x) = sum_k h[k] I(x - k); phase therefore increases
  // along the orientation axis for a wave travelling in +x / +y.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double re = 0.0;
      double im = 0.0;
      for (int ky = -half; ky <= half; ++ky) {
        const int sy = yi[y - ky + half];
        const double* row = &frame.luma.data[static_cast<std::size_t>(sy) * w];
        const double* er = &pair.even.data[static_cast<std::size_t>(ky + half) * k];
        const double* orow = &pair.odd.data[static_cast<std::size_t>(ky + half) * k];
        for (int kx = -half; kx <= half; ++kx) {
          const double v = row[xi[x - kx + half]];
          re += er[kx + half] * v;
          im += orow[kx + half] * v;
        }
      }
      out.amplitude(x, y) = std::hypot(re, im);
      out.phase(x, y) = (re == 0.0 && im == 0.0) ? 0.0 : wrap_phase(std::atan2(im, re));
    }
  }
  return out;
}

Grid phase_gradient(const ComplexResponse& response, Axis axis, double amplitude_floor) {
  const Grid& amp = response.amplitude;
  const Grid& ph = response.phase;
  require_shape(amp, ph, "phase_gradient");
  const int w = amp.width;
  const int h = amp.height;
  const int n = axis == Axis::x ? w : h;
  Grid out(w, h);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = axis == Axis::x ? x : y;
      if (n == 1) {
        out(x, y) = amp(x, y) < amplitude_floor ? nan : 0.0;
        continue;
      }
      const int lo = std::max(i - 1, 0);
      const int hi = std::min(i + 1, n - 1);
      auto at = [&](const Grid& g, int j) { return axis == Axis::x ? g(j, y) : g(x, j); };
      if (amp(x, y) < amplitude_floor || at(amp, lo) < amplitude_floor || at(amp, hi) < amplitude_floor) {
        out(x, y) = nan;
        continue;
      }
      out(x, y) = wrap_phase(at(ph, hi) - at(ph, lo)) / static_cast<double>(hi - lo);
    }
  }
  return out;
}

std::size_t TextureMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(mask.data.begin(), mask.data.end(), std::uint8_t{1}));
}

double base_threshold(const Grid& amplitude, const MaskConfig& cfg) {
  if (cfg.top_count <= 0) fail(Errc::parameter, kModule, "top_count must be positive");
  if (amplitude.size() < static_cast<std::size_t>(cfg.top_count))
    fail(Errc::parameter, kModule, "frame has fewer than " + std::to_string(cfg.top_count) + " pixels");
  std::vector<double> values = amplitude.data;
  const auto top = static_cast<std::ptrdiff_t>(cfg.top_count);
  std::nth_element(values.begin(), values.begin() + (top - 1), values.end(), std::greater<>());
  std::sort(values.begin(), values.begin() + top, std::greater<>());
  double sum = 0.0;
  for (std::ptrdiff_t i = 0; i < top; ++i) sum += values[i];
  return cfg.top_fraction * sum / static_cast<double>(cfg.top_count);
}

TextureMask texture_mask(const ComplexResponse& response, const Grid& gradient, const MaskConfig& cfg) {
  require_shape(response.amplitude, gradient, "texture_mask");
  if (cfg.coefficient < 0.0) fail(Errc::parameter, kModule, "threshold coefficient must be >= 0");
  const double threshold = cfg.coefficient * base_threshold(response.amplitude, cfg);
  const int w = gradient.width;
  const int h = gradient.height;
  TextureMask out;
  out.direction = response.orientation;
  out.threshold_used = threshold;
  out.mask = MaskGrid(w, h, 0);

  auto same_sign = [](double a, double b) { return std::isfinite(b) && a * b > 0.0; };
  for (int y = cfg.border; y < h - cfg.border; ++y) {
    for (int x = cfg.border; x < w - cfg.border; ++x) {
      const double g = gradient(x, y);
      if (!std::isfinite(g) || std::abs(g) < cfg.gradient_floor) continue;
      if (!(response.amplitude(x, y) >= threshold)) continue;
      if (x > 0 && !same_sign(g, gradient(x - 1, y))) continue;
      if (x + 1 < w && !same_sign(g, gradient(x + 1, y))) continue;
      if (y > 0 && !same_sign(g, gradient(x, y - 1))) continue;
      if (y + 1 < h && !same_sign(g, gradient(x, y + 1))) continue;
      out.mask(x, y) = 1;
    }
  }
  return out;
}

MotionField displacement_field(const PhaseAnalysis& reference, const PhaseAnalysis& current,
                               const TextureMask& mask_u, const TextureMask& mask_v) {
  const Grid& shape = reference.horizontal.phase;
  require_shape(shape, reference.vertical.phase, "displacement_field reference");
  require_shape(shape, current.horizontal.phase, "displacement_field current");
  require_shape(shape, current.vertical.phase, "displacement_field current");
  require_shape(shape, reference.grad_x, "displacement_field gradient");
  require_shape(shape, reference.grad_y, "displacement_field gradient");
  if (!mask_u.mask.same_shape(shape) || !mask_v.mask.same_shape(shape))
    fail(Errc::dimension, kModule, "displacement_field: mask shape mismatch");

  const int w = shape.width;
  const int h = shape.height;
  const double limit = kOutOfRangeFraction * std::numbers::pi;
  MotionField out;
  out.u = Grid(w, h);
  out.v = Grid(w, h);
  out.mask_u = mask_u;
  out.mask_v = mask_v;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (mask_u.mask.data[i]) {
      const double dphi = wrap_phase(current.horizontal.phase.data[i] - reference.horizontal.phase.data[i]);
      out.u.data[i] = -dphi / reference.grad_x.data[i];
      if (std::abs(dphi) >= limit) ++out.out_of_range_u;
    }
    if (mask_v.mask.data[i]) {
      const double dphi = wrap_phase(current.vertical.phase.data[i] - reference.vertical.phase.data[i]);
      out.v.data[i] = -dphi / reference.grad_y.data[i];
      if (std::abs(dphi) >= limit) ++out.out_of_range_v;
    }
  }
  return out;
}

PhaseEngine::PhaseEngine(PhaseConfig cfg)
    : cfg_(cfg),
      horizontal_(build_quadrature_pair(Orientation::horizontal, cfg.wavelength, cfg.sigma, cfg.kernel_size)),
      vertical_(build_quadrature_pair(Orientation::vertical, cfg.wavelength, cfg.sigma, cfg.kernel_size)) {}

PhaseAnalysis PhaseEngine::analyze_frame(const Frame& frame) const {
  PhaseAnalysis a;
  a.horizontal = analyze(frame, horizontal_);
  a.vertical = analyze(frame, vertical_);
  a.grad_x = phase_gradient(a.horizontal, Axis::x);
  a.grad_y = phase_gradient(a.vertical, Axis::y);
  return a;
}

void PhaseEngine::set_reference(const Frame& reference) {
  reference_ = analyze_frame(reference);
  mask_u_ = texture_mask(reference_.horizontal, reference_.grad_x, cfg_.mask);
  mask_v_ = texture_mask(reference_.vertical, reference_.grad_y, cfg_.mask);
  has_reference_ = true;
}

const PhaseAnalysis& PhaseEngine::reference() const {
  if (!has_reference_) fail(Errc::state, kModule, "no reference frame set");
  return reference_;
}

const TextureMask& PhaseEngine::mask_u() const {
  if (!has_reference_) fail(Errc::state, kModule, "no reference frame set");
  return mask_u_;
}

const TextureMask& PhaseEngine::mask_v() const {
  if (!has_reference_) fail(Errc::state, kModule, "no reference frame set");
  return mask_v_;
}

MotionField PhaseEngine::estimate(const Frame& current) const {
  if (!has_reference_) fail(Errc::state, kModule, "no reference frame set");
  if (current.width() != reference_.horizontal.width() || current.height() != reference_.horizontal.height())
    fail(Errc::dimension, kModule, "current frame shape differs from reference");
  return displacement_field(reference_, analyze_frame(current), mask_u_, mask_v_);
}

MotionField PhaseEngine::estimate(const Frame& reference, const Frame& current) {
  set_reference(reference);
  return estimate(current);
}

}  // namespace subflow
