#pragma once

// Dual full/sparse EPE loss, Adam, and the epoch loop with best-validation
// checkpointing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "subflow/dataset.hpp"
#include "subflow/nn.hpp"

namespace subflow::train {

// Prefactor of the sparse term: 1/N (all pixels) or 1/M (masked pixels).
enum class SparseNorm : std::uint8_t { all_pixels = 0, masked_pixels = 1 };

const char* sparse_norm_name(SparseNorm n) noexcept;
SparseNorm parse_sparse_norm(const std::string& name);

struct LossConfig {
  bool mask_loss_enabled = true;
  SparseNorm sparse_norm = SparseNorm::all_pixels;
};

struct LossReport {
  double full_epe = 0.0;
  double sparse_epe = 0.0;
  double total = 0.0;      // full_epe + sparse_epe
  double objective = 0.0;  // the optimized quantity: total, or full_epe with the mask term disabled
  std::size_t masked_pixel_count = 0;  // M, summed over the batch
  std::size_t total_pixel_count = 0;   // N, summed over the batch
};

// pred/label are (B,2,H,W); mask is (B,2,H,W) with 0/1 entries for the u and v
// masks. Both terms are per-sample means, then averaged over the batch. When
// `grad` is given it receives d objective / d pred; the norm's subgradient at a
// zero residual is 0.
template <typename T>
LossReport epe_loss(const nn::Tensor4<T>& pred, const nn::Tensor4<T>& label, const nn::Tensor4<T>& mask,
                    const LossConfig& cfg = {}, nn::Tensor4<T>* grad = nullptr);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainState {
  nn::NetworkParams<float> params;
  std::vector<std::vector<double>> m_weight, v_weight, m_bias, v_bias;
  std::uint64_t step = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::filesystem::path best_checkpoint;

  explicit TrainState(nn::NetworkParams<float> p = {});
};

// Bias-corrected Adam update. A non-finite gradient raises a numeric error that
// names the layer and the batch.
void adam_step(TrainState& state, const nn::Gradients<float>& grads, const AdamConfig& cfg, std::int64_t batch_id = -1);

struct TrainConfig {
  int batch_size = 128;
  int epochs = 2000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  nn::Variant variant = nn::Variant::subflownet_c;
  std::optional<nn::ArchConfig> arch;  // defaults to nn::default_arch(variant)
  LossConfig loss;
  int threads = 1;
  bool deterministic = false;  // single-threaded, and the log's seconds column is written as 0
  std::filesystem::path checkpoint_path;  // best checkpoint; empty disables writing
  std::filesystem::path log_path;         // CSV log; empty disables writing
  std::optional<nn::NetworkParams<float>> initial;  // overrides the seeded initialization
};

struct EpochRecord {
  int epoch = 0;
  LossReport train;
  LossReport validation;
  double seconds = 0.0;
};

struct TrainResult {
  TrainState state;
  nn::NetworkParams<float> best_params;
  std::vector<EpochRecord> log;
};

struct Batch {
  nn::Tensor4<float> reference;
  nn::Tensor4<float> current;
  nn::Tensor4<float> label;
  nn::Tensor4<float> mask;
};

Batch make_batch(const std::vector<dataset::StoredPair>& samples, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end);

// Sample-weighted loss of `params` over a dataset, evaluated in batches.
LossReport evaluate_loss(const nn::NetworkParams<float>& params, const std::vector<dataset::StoredPair>& samples,
                         const LossConfig& cfg, int batch_size = 64, int threads = 1);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const std::vector<dataset::StoredPair>& train_set, const std::vector<dataset::StoredPair>& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const EpochRecord& rec);

}  // namespace subflow::train
