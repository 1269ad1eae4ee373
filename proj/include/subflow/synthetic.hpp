#pragma once

// Textures with exactly known subpixel motion, used as ground truth.

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "subflow/video_io.hpp"

namespace subflow {

enum class TextureKind { filtered_noise, bars, blobs };

TextureKind parse_texture_kind(const std::string& name);
const char* texture_kind_name(TextureKind kind) noexcept;

struct TextureOptions {
  double wavelength = 8.0;  // spectral centre of filtered_noise / bars, px
  double sigma = 2.0;       // spatial width the passband is matched to, px
};

// Deterministic in (seed, size, kind, options); intensities span [0, 1]. The
// Nyquist row/column of even-sized textures carries no energy, so spectral
// shifts of them are exact.
Frame generate_texture(std::uint64_t seed, int width, int height, TextureKind kind, const TextureOptions& opts = {});

// Circular translation by (dx, dy) via a Fourier phase ramp.
Frame subpixel_shift(const Frame& frame, double dx, double dy);

// Caches the forward transform of one frame for repeated shifts.
class SpectralShifter {
 public:
  explicit SpectralShifter(const Frame& frame);
  Frame shift(double dx, double dy) const;

 private:
  int width_;
  int height_;
  std::vector<std::complex<double>> spectrum_;  // height x (width/2 + 1)
};

struct Displacement {
  double dx = 0.0;
  double dy = 0.0;
};

struct MotionSignal {
  std::vector<Displacement> samples;
  std::string description;
};

enum class MotionKind { zero, sine, damped_sine, multi_sine };

MotionKind parse_motion_kind(const std::string& name);
const char* motion_kind_name(MotionKind kind) noexcept;

struct MotionOptions {
  MotionKind kind = MotionKind::damped_sine;
  int frames = 100;
  double amplitude = 0.5;       // px
  double frequency = 6.0;       // Hz
  double frame_rate = 240.0;    // frames/s
  double damping = 0.02;        // damping ratio for damped_sine
  double direction = 0.0;       // radians from +x
  std::uint64_t seed = 0;       // phases/frequencies for multi_sine
};

// Every generated signal starts at (0, 0).
MotionSignal make_motion(const MotionOptions& opts);

struct VibrationVideo {
  FrameSequence video;
  std::vector<Displacement> truth;  // uniform per-frame translation
};

// Frame t is the texture shifted by signal[t]; optional additive Gaussian
// noise uses `noise_seed`.
VibrationVideo generate_vibration_sequence(const Frame& texture, const MotionSignal& signal, double frame_rate = 240.0,
                                           double noise_sigma = 0.0, std::uint64_t noise_seed = 0);

// frame_index,dx,dy CSV.
void write_motion_csv(const MotionSignal& signal, const std::filesystem::path& path);
MotionSignal read_motion_csv(const std::filesystem::path& path);

}  // namespace subflow
