#include "subflow/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>
#include <string>

#include "subflow/error.hpp"
#include "subflow/parallel.hpp"

namespace subflow::train {

namespace {

constexpr const char* kModule = "train";

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(epoch) + 1);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void accumulate(LossReport& acc, const LossReport& r, double weight) {
  acc.full_epe += r.full_epe * weight;
  acc.sparse_epe += r.sparse_epe * weight;
  acc.total += r.total * weight;
  acc.objective += r.objective * weight;
  acc.masked_pixel_count += r.masked_pixel_count;
  acc.total_pixel_count += r.total_pixel_count;
}

void normalize(LossReport& acc, double weight) {
  acc.full_epe /= weight;
  acc.sparse_epe /= weight;
  acc.total /= weight;
  acc.objective /= weight;
}

}  // namespace

const char* sparse_norm_name(SparseNorm n) noexcept { return n == SparseNorm::all_pixels ? "N" : "M"; }

SparseNorm parse_sparse_norm(const std::string& name) {
  if (name == "N" || name == "n" || name == "all" || name == "all_pixels") return SparseNorm::all_pixels;
  if (name == "M" || name == "m" || name == "masked" || name == "masked_pixels") return SparseNorm::masked_pixels;
  fail(Errc::parameter, kModule, "unknown sparse normalization '" + name + "' (use N or M)");
}

template <typename T>
LossReport epe_loss(const nn::Tensor4<T>& pred, const nn::Tensor4<T>& label, const nn::Tensor4<T>& mask,
                    const LossConfig& cfg, nn::Tensor4<T>* grad) {
  if (pred.c != 2) fail(Errc::dimension, kModule, "prediction must have 2 channels");
  if (!pred.same_shape(label) || !pred.same_shape(mask))
    fail(Errc::dimension, kModule, "prediction, label and mask shapes differ");
  if (pred.n < 1 || pred.plane() == 0) fail(Errc::dimension, kModule, "empty batch");
  if (grad && !grad->same_shape(pred)) *grad = nn::Tensor4<T>(pred.n, pred.c, pred.h, pred.w);

  const std::size_t plane = pred.plane();
  const double n_pix = static_cast<double>(plane);
  const double batch = static_cast<double>(pred.n);
  LossReport rep;
  rep.total_pixel_count = plane * static_cast<std::size_t>(pred.n);
  for (int b = 0; b < pred.n; ++b) {
    const T* pu = pred.channel(b, 0);
    const T* pv = pred.channel(b, 1);
    const T* lu = label.channel(b, 0);
    const T* lv = label.channel(b, 1);
    const T* mu = mask.channel(b, 0);
    const T* mv = mask.channel(b, 1);
    std::size_t m_count = 0;
    for (std::size_t i = 0; i < plane; ++i)
      if (mu[i] != T{0} || mv[i] != T{0}) ++m_count;
    rep.masked_pixel_count += m_count;
    const double sparse_scale =
        cfg.sparse_norm == SparseNorm::all_pixels ? 1.0 / n_pix : (m_count ? 1.0 / static_cast<double>(m_count) : 0.0);

    double full = 0.0;
    double sparse = 0.0;
    T* gu = grad ? grad->channel(b, 0) : nullptr;
    T* gv = grad ? grad->channel(b, 1) : nullptr;
    for (std::size_t i = 0; i < plane; ++i) {
      const double ru = static_cast<double>(pu[i]) - static_cast<double>(lu[i]);
      const double rv = static_cast<double>(pv[i]) - static_cast<double>(lv[i]);
      const double nf = std::sqrt(ru * ru + rv * rv);
      full += nf;
      const double su = static_cast<double>(mu[i]) * ru;
      const double sv = static_cast<double>(mv[i]) * rv;
      const double ns = std::sqrt(su * su + sv * sv);
      sparse += ns;
      if (grad) {
        double g_u = 0.0;
        double g_v = 0.0;
        if (nf > 0.0) {
          g_u += ru / nf / n_pix;
          g_v += rv / nf / n_pix;
        }
        if (cfg.mask_loss_enabled && ns > 0.0) {
          g_u += static_cast<double>(mu[i]) * su / ns * sparse_scale;
          g_v += static_cast<double>(mv[i]) * sv / ns * sparse_scale;
        }
        gu[i] = static_cast<T>(g_u / batch);
        gv[i] = static_cast<T>(g_v / batch);
      }
    }
    rep.full_epe += full / n_pix;
    rep.sparse_epe += sparse * sparse_scale;
  }
  rep.full_epe /= batch;
  rep.sparse_epe /= batch;
  rep.total = rep.full_epe + rep.sparse_epe;
  rep.objective = cfg.mask_loss_enabled ? rep.total : rep.full_epe;
  return rep;
}

template LossReport epe_loss<float>(const nn::Tensor4<float>&, const nn::Tensor4<float>&, const nn::Tensor4<float>&,
                                    const LossConfig&, nn::Tensor4<float>*);
template LossReport epe_loss<double>(const nn::Tensor4<double>&, const nn::Tensor4<double>&,
                                     const nn::Tensor4<double>&, const LossConfig&, nn::Tensor4<double>*);

TrainState::TrainState(nn::NetworkParams<float> p) : params(std::move(p)) {
  for (const auto& l : params.layers) {
    m_weight.emplace_back(l.weight.size(), 0.0);
    v_weight.emplace_back(l.weight.size(), 0.0);
    m_bias.emplace_back(l.bias.size(), 0.0);
    v_bias.emplace_back(l.bias.size(), 0.0);
  }
}

void adam_step(TrainState& state, const nn::Gradients<float>& grads, const AdamConfig& cfg, std::int64_t batch_id) {
  auto& layers = state.params.layers;
  if (grads.weight.size() != layers.size() || grads.bias.size() != layers.size())
    fail(Errc::dimension, kModule, "gradient layer count does not match the parameters");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weight[l].size() != layers[l].weight.size() || grads.bias[l].size() != layers[l].bias.size())
      fail(Errc::dimension, kModule, "gradient shape mismatch in layer " + layers[l].name);
    for (const auto* g : {&grads.weight[l], &grads.bias[l]})
      for (float v : *g)
        if (!std::isfinite(v))
          fail(Errc::numeric, kModule,
               "non-finite gradient in layer " + layers[l].name + " at batch " + std::to_string(batch_id) +
                   " (step " + std::to_string(state.step + 1) + ")");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto update = [&](std::vector<float>& p, const std::vector<float>& g, std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] = static_cast<float>(static_cast<double>(p[i]) - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads.weight[l], state.m_weight[l], state.v_weight[l]);
    update(layers[l].bias, grads.bias[l], state.m_bias[l], state.v_bias[l]);
  }
}

Batch make_batch(const std::vector<dataset::StoredPair>& samples, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end) {
  if (end <= begin || end > order.size()) fail(Errc::parameter, kModule, "invalid batch range");
  const int n = static_cast<int>(end - begin);
  const int s = dataset::kPairSize;
  Batch b{nn::Tensor4<float>(n, 1, s, s), nn::Tensor4<float>(n, 1, s, s), nn::Tensor4<float>(n, 2, s, s),
          nn::Tensor4<float>(n, 2, s, s)};
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (int i = 0; i < n; ++i) {
    const auto& p = samples.at(order[begin + static_cast<std::size_t>(i)]);
    if (p.reference.size() != plane || p.current.size() != plane || p.label_u.size() != plane ||
        p.label_v.size() != plane || p.mask_u.size() != plane || p.mask_v.size() != plane)
      fail(Errc::dimension, kModule, "training samples must be 48x48");
    std::copy(p.reference.begin(), p.reference.end(), b.reference.channel(i, 0));
    std::copy(p.current.begin(), p.current.end(), b.current.channel(i, 0));
    std::copy(p.label_u.begin(), p.label_u.end(), b.label.channel(i, 0));
    std::copy(p.label_v.begin(), p.label_v.end(), b.label.channel(i, 1));
    float* mu = b.mask.channel(i, 0);
    float* mv = b.mask.channel(i, 1);
    for (std::size_t j = 0; j < plane; ++j) {
      mu[j] = p.mask_u[j] ? 1.0f : 0.0f;
      mv[j] = p.mask_v[j] ? 1.0f : 0.0f;
    }
  }
  return b;
}

LossReport evaluate_loss(const nn::NetworkParams<float>& params, const std::vector<dataset::StoredPair>& samples,
                         const LossConfig& cfg, int batch_size, int threads) {
  if (samples.empty()) fail(Errc::parameter, kModule, "cannot evaluate an empty dataset");
  if (batch_size < 1) fail(Errc::parameter, kModule, "batch size must be >= 1");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  LossReport acc;
  nn::ForwardCache<float> cache;
  for (std::size_t b0 = 0; b0 < samples.size(); b0 += static_cast<std::size_t>(batch_size)) {
    const std::size_t b1 = std::min(samples.size(), b0 + static_cast<std::size_t>(batch_size));
    const Batch batch = make_batch(samples, order, b0, b1);
    const auto pred = nn::forward(params, batch.reference, batch.current, &cache, threads);
    accumulate(acc, epe_loss(pred, batch.label, batch.mask, cfg), static_cast<double>(b1 - b0));
  }
  normalize(acc, static_cast<double>(samples.size()));
  return acc;
}

void write_log_header(std::ostream& out) {
  out << "epoch,train_full,train_sparse,train_total,val_full,val_sparse,val_total,seconds\n";
}

void write_log_row(std::ostream& out, const EpochRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f\n", r.epoch, r.train.full_epe,
                r.train.sparse_epe, r.train.total, r.validation.full_epe, r.validation.sparse_epe,
                r.validation.total, r.seconds);
  out << buf;
}

TrainResult train(const std::vector<dataset::StoredPair>& train_set, const std::vector<dataset::StoredPair>& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (train_set.empty()) fail(Errc::parameter, kModule, "training dataset is empty");
  if (val_set.empty()) fail(Errc::parameter, kModule, "validation dataset is empty");
  if (cfg.batch_size < 1) fail(Errc::parameter, kModule, "batch size must be >= 1");
  if (cfg.epochs < 0) fail(Errc::parameter, kModule, "epochs must be >= 0");
  if (!(cfg.adam.learning_rate >= 0.0) || !std::isfinite(cfg.adam.learning_rate))
    fail(Errc::parameter, kModule, "learning rate must be finite and non-negative");

  nn::NetworkParams<float> init;
  if (cfg.initial) {
    init = *cfg.initial;
  } else {
    init = nn::build_network<float>(cfg.variant, cfg.arch.value_or(nn::default_arch(cfg.variant)));
    nn::init_uniform(init, cfg.seed);
  }
  TrainResult result{TrainState(init), init, {}};
  TrainState& st = result.state;
  st.best_checkpoint = cfg.checkpoint_path;
  const int threads = cfg.deterministic ? 1 : resolve_threads(cfg.threads);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    std::error_code ec;
    if (cfg.log_path.has_parent_path()) std::filesystem::create_directories(cfg.log_path.parent_path(), ec);
    log.open(cfg.log_path);
    if (!log) fail(Errc::io, kModule, "cannot write training log " + cfg.log_path.string());
    write_log_header(log);
  }

  nn::ForwardCache<float> cache;
  nn::Tensor4<float> grad_out;
  std::int64_t batch_id = 0;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = shuffled(train_set.size(), cfg.seed, epoch);
    LossReport acc;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs, ++batch_id) {
      const std::size_t b1 = std::min(order.size(), b0 + bs);
      const Batch batch = make_batch(train_set, order, b0, b1);
      const auto pred = nn::forward(st.params, batch.reference, batch.current, &cache, threads);
      const LossReport rep = epe_loss(pred, batch.label, batch.mask, cfg.loss, &grad_out);
      if (!std::isfinite(rep.objective))
        fail(Errc::numeric, kModule, "non-finite loss at batch " + std::to_string(batch_id));
      accumulate(acc, rep, static_cast<double>(b1 - b0));
      const auto grads = nn::backward(st.params, cache, grad_out, threads);
      adam_step(st, grads, cfg.adam, batch_id);
    }
    normalize(acc, static_cast<double>(order.size()));

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train = acc;
    rec.validation = evaluate_loss(st.params, val_set, cfg.loss, std::max(cfg.batch_size, 32), threads);
    rec.seconds =
        cfg.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rec.validation.objective < st.best_validation_loss) {
      st.best_validation_loss = rec.validation.objective;
      st.best_epoch = rec.epoch;
      result.best_params = st.params;
      if (!cfg.checkpoint_path.empty()) nn::save_checkpoint(st.params, cfg.checkpoint_path);
    }
    if (log.is_open()) {
      write_log_row(log, rec);
      log.flush();
      if (!log) fail(Errc::io, kModule, "failed writing training log " + cfg.log_path.string());
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace subflow::train
