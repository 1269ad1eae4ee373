#include "subflow/synthetic.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

#include "subflow/error.hpp"

namespace subflow {

namespace {

constexpr const char* kModule = "synthetic";

// FFTW's planner is not thread-safe; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<std::complex<double>> forward_r2c(const Grid& grid) {
  const int w = grid.width;
  const int h = grid.height;
  std::vector<double> in = grid.data;
  std::vector<std::complex<double>> out(static_cast<std::size_t>(h) * (w / 2 + 1));
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_2d(h, w, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

// Consumes `spectrum` (FFTW c2r overwrites its input); result is normalized.
Grid inverse_c2r(std::vector<std::complex<double>> spectrum, int w, int h) {
  Grid out(w, h);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_c2r_2d(h, w, reinterpret_cast<fftw_complex*>(spectrum.data()), out.data.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  const double scale = 1.0 / (static_cast<double>(w) * h);
  for (double& v : out.data) v *= scale;
  return out;
}

// Signed frequency index of FFT bin k for an axis of length n.
int signed_bin(int k, int n) { return k <= n / 2 ? k : k - n; }

// Per-axis shift factor. The Nyquist bin of an even axis is self-conjugate,
// so it gets the real part of the ramp to keep the inverse transform real.
std::complex<double> axis_factor(int k, int n, double d) {
  if (n % 2 == 0 && k == n / 2) return {std::cos(std::numbers::pi * d), 0.0};
  return std::polar(1.0, -2.0 * std::numbers::pi * signed_bin(k, n) * d / n);
}

void normalize_unit_range(Grid& g) {
  const auto [lo, hi] = std::minmax_element(g.data.begin(), g.data.end());
  const double low = *lo;
  const double span = *hi - *lo;
  if (span <= 0.0) {
    std::fill(g.data.begin(), g.data.end(), 0.5);
    return;
  }
  for (double& v : g.data) v = (v - low) / span;
}

// Removes DC and Nyquist energy, then weights bins by `weight(fx, fy)` with
// frequencies in cycles/px.
template <typename Weight>
Grid spectral_filter(const Grid& noise, Weight weight) {
  const int w = noise.width;
  const int h = noise.height;
  auto spec = forward_r2c(noise);
  const int cols = w / 2 + 1;
  for (int ky = 0; ky < h; ++ky) {
    for (int kx = 0; kx < cols; ++kx) {
      auto& c = spec[static_cast<std::size_t>(ky) * cols + kx];
      const bool nyquist = (w % 2 == 0 && kx == w / 2) || (h % 2 == 0 && ky == h / 2);
      if (nyquist || (kx == 0 && ky == 0)) {
        c = 0.0;
        continue;
      }
      const double fx = static_cast<double>(kx) / w;
      const double fy = static_cast<double>(signed_bin(ky, h)) / h;
      c *= weight(fx, fy);
    }
  }
  return inverse_c2r(std::move(spec), w, h);
}

Grid white_noise(std::mt19937_64& rng, int w, int h) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Grid g(w, h);
  for (double& v : g.data) v = normal(rng);
  return g;
}

}  // namespace

TextureKind parse_texture_kind(const std::string& name) {
  if (name == "filtered_noise" || name == "filtered-noise") return TextureKind::filtered_noise;
  if (name == "bars") return TextureKind::bars;
  if (name == "blobs") return TextureKind::blobs;
  fail(Errc::parameter, kModule, "unknown texture kind '" + name + "'");
}

const char* texture_kind_name(TextureKind kind) noexcept {
  switch (kind) {
    case TextureKind::filtered_noise: return "filtered_noise";
    case TextureKind::bars: return "bars";
    case TextureKind::blobs: return "blobs";
  }
  return "unknown";
}

Frame generate_texture(std::uint64_t seed, int width, int height, TextureKind kind, const TextureOptions& opts) {
  if (width < 16 || height < 16) fail(Errc::parameter, kModule, "texture must be at least 16x16");
  if (!(opts.wavelength > 2.0) || !(opts.sigma > 0.0)) fail(Errc::parameter, kModule, "invalid texture passband");
  std::mt19937_64 rng(seed);
  const double f0 = 1.0 / opts.wavelength;
  // Spectral width of a Gaussian window with spatial std sigma.
  const double bw = 1.0 / (2.0 * std::numbers::pi * opts.sigma);
  auto bump = [bw](double fx, double fy, double cx, double cy) {
    const double dx = fx - cx;
    const double dy = fy - cy;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * bw * bw));
  };

  Grid texture;
  switch (kind) {
    case TextureKind::filtered_noise: {
      // Energy at the passbands of the horizontal and vertical quadrature filters.
      texture = spectral_filter(white_noise(rng, width, height), [&](double fx, double fy) {
        return bump(fx, fy, f0, 0) + bump(fx, fy, -f0, 0) + bump(fx, fy, 0, f0) + bump(fx, fy, 0, -f0);
      });
      break;
    }
    case TextureKind::bars: {
      // a(x) + b(y): vertical and horizontal bars with band-passed widths.
      texture = spectral_filter(white_noise(rng, width, height), [&](double fx, double fy) {
        if (fx != 0.0 && fy != 0.0) return 0.0;
        const double f = std::abs(fx) + std::abs(fy);
        return std::exp(-(f - f0) * (f - f0) / (2.0 * bw * bw));
      });
      break;
    }
    case TextureKind::blobs: {
      Grid field(width, height);
      const double blob_sigma = opts.wavelength / 4.0;
      const int count = std::max(4, static_cast<int>(width * height / (opts.wavelength * opts.wavelength)));
      std::uniform_real_distribution<double> ux(0.0, width);
      std::uniform_real_distribution<double> uy(0.0, height);
      std::uniform_real_distribution<double> ua(-1.0, 1.0);
      const int reach = static_cast<int>(std::ceil(4.0 * blob_sigma));
      for (int b = 0; b < count; ++b) {
        const double cx = ux(rng);
        const double cy = uy(rng);
        const double a = ua(rng);
        for (int oy = -reach; oy <= reach; ++oy) {
          for (int ox = -reach; ox <= reach; ++ox) {
            const int px = static_cast<int>(std::floor(cx)) + ox;
            const int py = static_cast<int>(std::floor(cy)) + oy;
            const double ddx = px - cx;
            const double ddy = py - cy;
            const int wx = ((px % width) + width) % width;
            const int wy = ((py % height) + height) % height;
            field(wx, wy) += a * std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * blob_sigma * blob_sigma));
          }
        }
      }
      texture = spectral_filter(field, [](double, double) { return 1.0; });
      break;
    }
  }
  normalize_unit_range(texture);
  return Frame(std::move(texture), 0);
}

SpectralShifter::SpectralShifter(const Frame& frame)
    : width_(frame.width()), height_(frame.height()), spectrum_(forward_r2c(frame.luma)) {}

Frame SpectralShifter::shift(double dx, double dy) const {
  const int cols = width_ / 2 + 1;
  std::vector<std::complex<double>> fx(cols);
  std::vector<std::complex<double>> fy(height_);
  for (int kx = 0; kx < cols; ++kx) fx[kx] = axis_factor(kx, width_, dx);
  for (int ky = 0; ky < height_; ++ky) fy[ky] = axis_factor(ky, height_, dy);
  std::vector<std::complex<double>> spec = spectrum_;
  for (int ky = 0; ky < height_; ++ky)
    for (int kx = 0; kx < cols; ++kx) spec[static_cast<std::size_t>(ky) * cols + kx] *= fx[kx] * fy[ky];
  return Frame(inverse_c2r(std::move(spec), width_, height_), 0);
}

Frame subpixel_shift(const Frame& frame, double dx, double dy) {
  if (frame.width() < 8 || frame.height() < 8) fail(Errc::parameter, kModule, "frame must be at least 8x8 to shift");
  Frame out = SpectralShifter(frame).shift(dx, dy);
  out.timestamp_index = frame.timestamp_index;
  return out;
}

MotionKind parse_motion_kind(const std::string& name) {
  if (name == "zero") return MotionKind::zero;
  if (name == "sine") return MotionKind::sine;
  if (name == "damped-sine" || name == "damped_sine") return MotionKind::damped_sine;
  if (name == "multi-sine" || name == "multi_sine") return MotionKind::multi_sine;
  fail(Errc::parameter, kModule, "unknown motion kind '" + name + "'");
}

const char* motion_kind_name(MotionKind kind) noexcept {
  switch (kind) {
    case MotionKind::zero: return "zero";
    case MotionKind::sine: return "sine";
    case MotionKind::damped_sine: return "damped-sine";
    case MotionKind::multi_sine: return "multi-sine";
  }
  return "unknown";
}

MotionSignal make_motion(const MotionOptions& opts) {
  if (opts.frames < 1) fail(Errc::parameter, kModule, "motion needs at least one frame");
  if (!(opts.frame_rate > 0.0)) fail(Errc::parameter, kModule, "frame rate must be positive");
  MotionSignal signal;
  std::vector<double> s(static_cast<std::size_t>(opts.frames), 0.0);
  const double omega = 2.0 * std::numbers::pi * opts.frequency;
  std::ostringstream desc;
  switch (opts.kind) {
    case MotionKind::zero:
      desc << "zero";
      break;
    case MotionKind::sine:
      for (int t = 0; t < opts.frames; ++t) s[t] = opts.amplitude * std::sin(omega * t / opts.frame_rate);
      desc << "sine, A=" << opts.amplitude << " px, f=" << opts.frequency << " Hz";
      break;
    case MotionKind::damped_sine: {
      const double zeta = std::clamp(opts.damping, 0.0, 0.999);
      const double omega_d = omega * std::sqrt(1.0 - zeta * zeta);
      for (int t = 0; t < opts.frames; ++t) {
        const double time = t / opts.frame_rate;
        s[t] = opts.amplitude * std::exp(-zeta * omega * time) * std::sin(omega_d * time);
      }
      desc << "damped sine, A=" << opts.amplitude << " px, f=" << opts.frequency << " Hz, zeta=" << zeta;
      break;
    }
    case MotionKind::multi_sine: {
      std::mt19937_64 rng(opts.seed);
      std::uniform_real_distribution<double> uf(0.5, 2.0);
      std::uniform_real_distribution<double> up(0.0, 2.0 * std::numbers::pi);
      double peak = 0.0;
      std::vector<double> freq(3), phase(3);
      for (int i = 0; i < 3; ++i) {
        freq[i] = uf(rng) * omega;
        phase[i] = up(rng);
      }
      for (int t = 0; t < opts.frames; ++t) {
        const double time = t / opts.frame_rate;
        for (int i = 0; i < 3; ++i) s[t] += std::sin(freq[i] * time + phase[i]) - std::sin(phase[i]);
        peak = std::max(peak, std::abs(s[t]));
      }
      if (peak > 0.0)
        for (double& v : s) v *= opts.amplitude / peak;
      desc << "multi sine, peak=" << opts.amplitude << " px, base f=" << opts.frequency << " Hz";
      break;
    }
  }
  const double c = std::cos(opts.direction);
  const double sn = std::sin(opts.direction);
  signal.samples.reserve(s.size());
  for (double v : s) signal.samples.push_back({v * c, v * sn});
  signal.samples.front() = {0.0, 0.0};
  signal.description = desc.str();
  return signal;
}

VibrationVideo generate_vibration_sequence(const Frame& texture, const MotionSignal& signal, double frame_rate,
                                           double noise_sigma, std::uint64_t noise_seed) {
  if (signal.samples.empty()) fail(Errc::parameter, kModule, "motion signal is empty");
  if (texture.width() < 8 || texture.height() < 8) fail(Errc::parameter, kModule, "texture must be at least 8x8");
  const SpectralShifter shifter(texture);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  VibrationVideo out;
  out.video.frame_rate = frame_rate;
  out.video.frames.reserve(signal.samples.size());
  for (std::size_t t = 0; t < signal.samples.size(); ++t) {
    Frame f = shifter.shift(signal.samples[t].dx, signal.samples[t].dy);
    f.timestamp_index = static_cast<int>(t);
    if (noise_sigma > 0.0)
      for (double& v : f.luma.data) v += normal(rng);
    out.video.frames.push_back(std::move(f));
  }
  out.truth = signal.samples;
  return out;
}

void write_motion_csv(const MotionSignal& signal, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::io, kModule, "cannot open " + path.string() + " for writing");
  out << "frame_index,dx,dy\n";
  char line[96];
  for (std::size_t t = 0; t < signal.samples.size(); ++t) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", t, signal.samples[t].dx, signal.samples[t].dy);
    out << line;
  }
  if (!out) fail(Errc::io, kModule, "write failed for " + path.string());
}

MotionSignal read_motion_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("frame_index", 0) != 0) fail(Errc::format, kModule, "motion CSV missing header");
  MotionSignal signal;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t index = 0;
    double dx = 0.0, dy = 0.0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf", &index, &dx, &dy) != 3 || index != signal.samples.size())
      fail(Errc::format, kModule, "malformed motion CSV row '" + line + "'");
    signal.samples.push_back({dx, dy});
  }
  return signal;
}

}  // namespace subflow
