#pragma once

// Phase-based displacement extraction: quadrature filtering, local phase and
// amplitude, phase gradients, texture masks and subpixel displacement fields.

#include <cstddef>
#include <limits>

#include "subflow/grid.hpp"
#include "subflow/video_io.hpp"

namespace subflow {

enum class Orientation { horizontal, vertical };  // theta = 0 and theta = pi/2
enum class Axis { x, y };

struct FilterPair {
  Grid even;  // real part, point-symmetric, zero-sum
  Grid odd;   // imaginary part, point-antisymmetric, zero-sum
  Orientation orientation = Orientation::horizontal;
  double wavelength = 8.0;
  double sigma = 2.0;

  int size() const noexcept { return even.width; }
};

// Gabor cosine/sine pair tuned to `wavelength` along the orientation axis.
// The odd kernel has unit L2 norm; the even kernel is DC-removed under the
// Gaussian window and scaled to the odd kernel's gain at the tuned frequency.
FilterPair build_quadrature_pair(Orientation orientation, double wavelength = 8.0, double sigma = 2.0, int size = 9);

struct ComplexResponse {
  Grid amplitude;  // >= 0
  Grid phase;      // (-pi, pi]
  Orientation orientation = Orientation::horizontal;

  int width() const noexcept { return amplitude.width; }
  int height() const noexcept { return amplitude.height; }
};

ComplexResponse analyze(const Frame& frame, const FilterPair& pair);

// Wraps an angle into (-pi, pi].
double wrap_phase(double angle) noexcept;

inline constexpr double kAmplitudeFloor = 1e-8;
inline constexpr double kGradientFloor = 1e-3;

// Spatial phase derivative in rad/px, wrap-safe. Interior pixels use
// arg(conj(S[i-1]) * S[i+1]) / 2, borders the one-sided neighbour product.
// Pixels whose amplitude (or a neighbour's) is below kAmplitudeFloor hold NaN.
Grid phase_gradient(const ComplexResponse& response, Axis axis, double amplitude_floor = kAmplitudeFloor);

struct MaskConfig {
  double coefficient = 1.0;       // C in T = C * T0
  int top_count = 30;             // pixels averaged for T0
  double top_fraction = 0.2;      // T0 = top_fraction * mean(top amplitudes)
  double gradient_floor = kGradientFloor;
  int border = 4;                 // excluded ring width
};

struct TextureMask {
  MaskGrid mask;
  Orientation direction = Orientation::horizontal;
  double threshold_used = 0.0;

  std::size_t count() const noexcept;
};

// T0 = top_fraction * mean of the top_count largest amplitudes.
double base_threshold(const Grid& amplitude, const MaskConfig& cfg = {});

TextureMask texture_mask(const ComplexResponse& response, const Grid& gradient, const MaskConfig& cfg = {});

struct MotionField {
  Grid u;
  Grid v;
  TextureMask mask_u;
  TextureMask mask_v;
  // Masked pixels whose wrapped phase change sits near +-pi. Values there may
  // have aliased (shift approaching half a wavelength).
  std::size_t out_of_range_u = 0;
  std::size_t out_of_range_v = 0;

  int width() const noexcept { return u.width; }
  int height() const noexcept { return u.height; }
  bool out_of_range() const noexcept { return out_of_range_u + out_of_range_v > 0; }
};

// Both orientations of one frame plus the phase gradients the displacement
// inversion divides by (d/dx of the horizontal phase, d/dy of the vertical).
struct PhaseAnalysis {
  ComplexResponse horizontal;
  ComplexResponse vertical;
  Grid grad_x;
  Grid grad_y;
};

// |wrapped phase delta| at or above this fraction of pi counts as out of range.
inline constexpr double kOutOfRangeFraction = 0.75;

// u = -wrap(phi0(cur) - phi0(ref)) / dphi0/dx on mask_u, 0 elsewhere; v likewise
// with the vertical response. Gradients come from the reference analysis.
MotionField displacement_field(const PhaseAnalysis& reference, const PhaseAnalysis& current,
                               const TextureMask& mask_u, const TextureMask& mask_v);

struct PhaseConfig {
  int kernel_size = 9;
  double wavelength = 8.0;
  double sigma = 2.0;
  MaskConfig mask;
};

// Complete phase pipeline with a cached reference frame. Analysis of the
// reference and its masks happen once in set_reference.
class PhaseEngine {
 public:
  explicit PhaseEngine(PhaseConfig cfg = {});

  const PhaseConfig& config() const noexcept { return cfg_; }
  const FilterPair& horizontal_filter() const noexcept { return horizontal_; }
  const FilterPair& vertical_filter() const noexcept { return vertical_; }

  PhaseAnalysis analyze_frame(const Frame& frame) const;

  void set_reference(const Frame& reference);
  bool has_reference() const noexcept { return has_reference_; }
  const PhaseAnalysis& reference() const;
  const TextureMask& mask_u() const;
  const TextureMask& mask_v() const;

  MotionField estimate(const Frame& current) const;
  MotionField estimate(const Frame& reference, const Frame& current);

 private:
  PhaseConfig cfg_;
  FilterPair horizontal_;
  FilterPair vertical_;
  bool has_reference_ = false;
  PhaseAnalysis reference_;
  TextureMask mask_u_;
  TextureMask mask_v_;
};

}  // namespace subflow
