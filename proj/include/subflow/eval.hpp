#pragma once

// MAE metrics, threshold sweeps, per-pixel time histories through a shared
// estimator interface, first-layer filter export and inference benchmarks.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "subflow/dataset.hpp"
#include "subflow/nn.hpp"
#include "subflow/phase.hpp"
#include "subflow/synthetic.hpp"
#include "subflow/video_io.hpp"

namespace subflow::eval {

enum class Region : std::uint8_t { full = 0, interior = 1, masked = 2 };

const char* region_name(Region r) noexcept;
Region parse_region(const std::string& name);

inline constexpr int kInteriorBorder = 4;

struct MaeResult {
  double u = 0.0;
  double v = 0.0;
  std::size_t count_u = 0;
  std::size_t count_v = 0;

  // Pooled over both directions.
  double combined() const noexcept;
};

// Mean |truth - pred| per direction over the region. `masked` uses truth.mask_u
// for u and truth.mask_v for v. An empty pixel set raises Errc::empty_region.
MaeResult evaluate_mae(const MotionField& pred, const MotionField& truth, Region region,
                       int border = kInteriorBorder);

struct SweepEntry {
  double coefficient = 1.0;
  std::size_t count_u = 0;
  std::size_t count_v = 0;
  std::optional<double> mae_u;
  std::optional<double> mae_v;
  std::optional<double> mae;  // pooled over both directions

  std::size_t count() const noexcept { return count_u + count_v; }
};

struct SweepResult {
  std::vector<SweepEntry> entries;
};

// Masks recomputed per coefficient with threshold C*T0 and the remaining
// texture-mask conditions from `reference`; truth restricted to the new mask.
SweepResult threshold_sweep(const MotionField& pred, const MotionField& truth, const PhaseAnalysis& reference,
                            const std::vector<double>& coefficients, const MaskConfig& cfg = {});

// Amplitude-only form: pixels with amplitude >= C*T0 outside the border ring.
SweepResult threshold_sweep(const MotionField& pred, const MotionField& truth, const Grid& amplitude_u,
                            const Grid& amplitude_v, const std::vector<double>& coefficients,
                            const MaskConfig& cfg = {});

void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path);

// Common interface so the phase engine and a network are interchangeable.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string name() const = 0;
  virtual void set_reference(const Frame& reference) = 0;
  virtual MotionField estimate(const Frame& current) = 0;
  // Fields for several frames against the current reference.
  virtual std::vector<MotionField> estimate_many(const std::vector<const Frame*>& frames);
};

class PhaseEstimator final : public Estimator {
 public:
  explicit PhaseEstimator(PhaseConfig cfg = {});
  std::string name() const override { return "phase"; }
  void set_reference(const Frame& reference) override;
  MotionField estimate(const Frame& current) override;
  const PhaseEngine& engine() const noexcept { return engine_; }

 private:
  PhaseEngine engine_;
};

// Network output as a full field. Masks are the phase texture masks of the
// reference so masked metrics can be computed on network output too.
class NetworkEstimator final : public Estimator {
 public:
  explicit NetworkEstimator(nn::NetworkParams<float> params, PhaseConfig cfg = {}, int threads = 1,
                            int batch_size = 32);
  std::string name() const override { return nn::variant_name(params_.variant); }
  void set_reference(const Frame& reference) override;
  MotionField estimate(const Frame& current) override;
  std::vector<MotionField> estimate_many(const std::vector<const Frame*>& frames) override;
  const nn::NetworkParams<float>& params() const noexcept { return params_; }

 private:
  nn::NetworkParams<float> params_;
  PhaseEngine engine_;
  int threads_;
  int batch_size_;
  Frame reference_;
  bool has_reference_ = false;
};

struct Pixel {
  int x = 0;
  int y = 0;
};

struct TimeSample {
  int frame_index = 0;
  double u = 0.0;
  double v = 0.0;
};

struct TimeHistory {
  Pixel pixel;
  std::vector<TimeSample> samples;
};

// Frame 0 is the reference; every later frame is paired with it.
std::vector<MotionField> extract_fields(Estimator& estimator, const FrameSequence& video);
std::vector<TimeHistory> histories_from_fields(const std::vector<MotionField>& fields, const FrameSequence& video,
                                               const std::vector<Pixel>& pixels);
std::vector<TimeHistory> extract_time_history(Estimator& estimator, const FrameSequence& video,
                                              const std::vector<Pixel>& pixels);

void write_time_history_csv(const std::vector<TimeHistory>& histories, const std::filesystem::path& path);

// RMS of (u - truth.dx, v - truth.dy) over the samples; truth is indexed by
// frame_index and taken relative to frame 0.
struct RmsResult {
  double u = 0.0;
  double v = 0.0;
};
RmsResult rms_error(const TimeHistory& history, const std::vector<Displacement>& truth);

// One CSV grid per first-layer kernel (output channel, input channel).
std::vector<std::filesystem::path> export_learned_filters(const nn::NetworkParams<float>& params,
                                                          const std::filesystem::path& dir);
std::vector<Grid> import_learned_filters(const std::vector<std::filesystem::path>& files);
std::vector<Grid> first_layer_kernels(const nn::NetworkParams<float>& params);

struct BenchReport {
  std::string variant;
  std::size_t param_count = 0;
  int n_pairs = 0;
  int threads = 1;
  double net_ms_per_pair = 0.0;
  double net_pairs_per_second = 0.0;
  double phase_ms_per_pair = 0.0;
  double phase_pairs_per_second = 0.0;
  double speed_ratio = 0.0;  // phase time / network time

  std::string to_json() const;
};

// Times single-pair forward passes and phase-engine estimates on identical
// synthetic 48x48 pairs. Requires n_pairs >= 10.
BenchReport benchmark_inference(const nn::NetworkParams<float>& params, int n_pairs, std::uint64_t seed = 0,
                                int threads = 1, const PhaseConfig& phase = {});

// Network metrics over stored pairs: MAE against the stored labels per region
// and a threshold sweep pooled over all samples.
struct DatasetEvaluation {
  std::size_t samples = 0;
  MaeResult full;
  MaeResult interior;
  MaeResult masked;
  SweepResult sweep;
};

DatasetEvaluation evaluate_dataset(const nn::NetworkParams<float>& params,
                                   const std::vector<dataset::StoredPair>& samples,
                                   const std::vector<double>& coefficients = {0.5, 1.0, 1.5, 2.0},
                                   const PhaseConfig& phase = {}, int threads = 1, int batch_size = 32);

// Frame, label field and masks of a stored pair.
Frame stored_frame(const std::vector<float>& plane);
MotionField stored_label(const dataset::StoredPair& pair);

// Same uniform displacement at every pixel; masks copied from `masks`.
MotionField uniform_field(const Displacement& d, const MotionField& masks);

}  // namespace subflow::eval
