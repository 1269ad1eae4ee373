// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 125).
//
//   acceptance [--artifacts DIR] [--only AC-n ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <CLI11.hpp>

#include "../common/gradcheck.hpp"
#include "../common/oracles.hpp"
#include "subflow/dataset.hpp"
#include "subflow/eval.hpp"
#include "subflow/nn.hpp"
#include "subflow/phase.hpp"
#include "subflow/synthetic.hpp"
#include "subflow/train.hpp"

namespace fs = std::filesystem;
using namespace subflow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_artifacts = "acceptance_artifacts";

// ---------------------------------------------------------------------------
// AC-1

Outcome ac1_phase_accuracy() {
  const auto t0 = std::chrono::steady_clock::now();
  const int seeds[] = {1, 2, 3, 4, 5};
  const double shifts[] = {0.1, 0.25, 0.5};
  double worst_median = 0.0;
  bool ok = true;
  for (int seed : seeds) {
    const Frame tex = generate_texture(static_cast<std::uint64_t>(seed), 48, 48, TextureKind::filtered_noise);
    PhaseEngine engine;
    engine.set_reference(tex);
    for (double d : shifts)
      for (auto [dx, dy] : {std::pair{d, 0.0}, std::pair{0.0, d}, std::pair{d, d}}) {
        const MotionField f = engine.estimate(subpixel_shift(tex, dx, dy));
        const double mu = oracle::masked_median(f.u, f.mask_u.mask);
        const double mv = oracle::masked_median(f.v, f.mask_v.mask);
        const double err = std::max(std::abs(mu - dx), std::abs(mv - dy));
        if (!(err <= 0.05)) ok = false;
        worst_median = std::max(worst_median, std::isfinite(err) ? err : 1e9);
      }
  }

  // 200-frame damped sine, amplitude 0.5 px. The tracked pixel is the masked
  // pixel with the strongest reference response in both orientations.
  double worst_rms = 0.0, worst_pooled = 0.0;
  for (int seed : seeds) {
    const Frame tex = generate_texture(static_cast<std::uint64_t>(seed), 48, 48, TextureKind::filtered_noise);
    MotionOptions mo;
    mo.kind = MotionKind::damped_sine;
    mo.frames = 200;
    mo.amplitude = 0.5;
    mo.direction = 0.3 * seed;
    const VibrationVideo vib = generate_vibration_sequence(tex, make_motion(mo));
    PhaseEngine engine;
    engine.set_reference(vib.video.frames[0]);
    const PhaseAnalysis& a = engine.reference();
    eval::Pixel best{-1, -1};
    double strongest = 0.0;
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        if (engine.mask_u().mask(x, y) && engine.mask_v().mask(x, y)) {
          const double s = std::min(a.horizontal.amplitude(x, y), a.vertical.amplitude(x, y));
          if (s > strongest) strongest = s, best = {x, y};
        }
    if (best.x < 0) return {false, format("seed %d: no pixel masked in both orientations", seed)};
    eval::PhaseEstimator est;
    const auto fields = eval::extract_fields(est, vib.video);
    const auto hist = eval::histories_from_fields(fields, vib.video, {best});
    const eval::RmsResult r = eval::rms_error(hist[0], vib.truth);
    worst_rms = std::max({worst_rms, r.u, r.v});
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < fields.size(); ++t) {
      const Displacement& d = vib.truth[t + 1];
      for (std::size_t i = 0; i < fields[t].u.data.size(); ++i) {
        if (fields[t].mask_u.mask.data[i]) se += std::pow(fields[t].u.data[i] - d.dx, 2), ++n;
        if (fields[t].mask_v.mask.data[i]) se += std::pow(fields[t].v.data[i] - d.dy, 2), ++n;
      }
    }
    worst_pooled = std::max(worst_pooled, std::sqrt(se / static_cast<double>(n)));
  }
  if (!(worst_rms <= 0.05)) ok = false;
  const double secs = seconds_since(t0);
  if (!(secs < 60.0)) ok = false;
  return {ok, format("worst |median - d| %.4f px (<= 0.05), worst time-history RMS %.4f px (<= 0.05), "
                     "RMS pooled over all masked pixels %.4f px (informational), %.1f s",
                     worst_median, worst_rms, worst_pooled, secs)};
}

// ---------------------------------------------------------------------------
// AC-2

Outcome ac2_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  using nn::conv_spec;
  using nn::deconv_spec;
  gradcheck::Options o;  // central, step 1e-4, double, tolerance 1e-4
  gradcheck::Result layers;
  layers.merge(gradcheck::check_layer(conv_spec(2, 3, 3, 1), 2, 7, 1, o));
  layers.merge(gradcheck::check_layer(conv_spec(2, 3, 5, 2), 1, 10, 2, o));
  layers.merge(gradcheck::check_layer(conv_spec(1, 4, 7, 1), 1, 9, 3, o));
  layers.merge(gradcheck::check_layer(deconv_spec(3, 2), 2, 5, 4, o));
  layers.merge(gradcheck::check_leaky_relu(5, o));
  std::string detail = format("layers %zu probes max rel %.2e", layers.checked, layers.max_rel);
  bool ok = layers.failed == 0 && layers.checked > 0;
  for (auto v : {nn::Variant::subflownet_s, nn::Variant::subflownet_c}) {
    auto net = nn::build_network<double>(v, gradcheck::reduced_arch(v));
    nn::init_uniform(net, 21);
    for (auto& l : net.layers)
      for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.01 * static_cast<double>(i % 5) - 0.02;
    const auto r = gradcheck::check_network(net, 8, o);
    ok = ok && r.failed == 0 && r.checked > 0;
    detail += format("; %s %zu probes max rel %.2e (%zu at kinks, %zu failed)", nn::variant_name(v), r.checked,
                     r.max_rel, r.kinks, r.failed);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 300.0;
  return {ok, detail + format("; %.1f s", secs)};
}

// ---------------------------------------------------------------------------
// AC-3

Outcome ac3_kernels() {
  using nn::LayerKind;
  using nn::LayerSpec;
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<int> ch(1, 6), sz(4, 16), kk(0, 3), st(1, 2), bt(1, 3);
  const int kernels[] = {1, 3, 5, 7};
  double worst = 0.0;
  int cases = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const LayerSpec s = nn::conv_spec(ch(rng), ch(rng), kernels[kk(rng)], st(rng));
    const int size = std::max(sz(rng), s.kernel);
    const auto l = oracle::random_layer<double>(s, rng);
    const auto x = oracle::random_tensor<double>(bt(rng), s.in_channels, size, size + trial % 3, rng);
    worst = std::max(worst, oracle::max_abs_diff(nn::conv2d(x, l).data, oracle::naive_conv(x, l).data));
    ++cases;
    const auto dl = oracle::random_layer<double>(nn::deconv_spec(ch(rng), ch(rng)), rng);
    const auto y = oracle::random_tensor<double>(bt(rng), dl.spec.in_channels, sz(rng), sz(rng), rng);
    worst = std::max(worst, oracle::max_abs_diff(nn::deconv2d(y, dl).data, oracle::naive_deconv(y, dl).data));
    ++cases;
  }

  // <conv(x), y> = <x, deconv(y)> with shared taps.
  double worst_adj = 0.0;
  int adj_cases = 0;
  for (int trial = 0; trial < 30; ++trial) {
    LayerSpec s = nn::conv_spec(ch(rng), ch(rng), kernels[1 + kk(rng) % 3], st(rng));
    s.has_bias = false;
    const int big = std::max(sz(rng), s.kernel) + 8;
    const auto l = oracle::random_layer<double>(s, rng);
    LayerSpec ds = s;
    ds.kind = LayerKind::deconv;
    std::swap(ds.in_channels, ds.out_channels);
    const int small = s.output_size(big);
    ds.output_pad = big - ((small - 1) * s.stride - 2 * s.pad + s.kernel);
    nn::Layer<double> d("adj", ds);
    d.weight = l.weight;
    const auto x = oracle::random_tensor<double>(1, s.in_channels, big, big, rng);
    const auto cx = nn::conv2d(x, l);
    const auto y = oracle::random_tensor<double>(1, s.out_channels, cx.h, cx.w, rng);
    const double lhs = oracle::dot(cx.data, y.data), rhs = oracle::dot(x.data, nn::deconv2d(y, d).data);
    worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    ++adj_cases;
  }
  for (int big : {8, 12, 24, 48}) {
    const auto d = oracle::random_layer<double>(nn::deconv_spec(ch(rng), ch(rng)), rng);
    LayerSpec cs = d.spec;
    cs.kind = LayerKind::conv;
    std::swap(cs.in_channels, cs.out_channels);
    nn::Layer<double> c("c", cs);
    c.weight = d.weight;
    const auto x = oracle::random_tensor<double>(1, cs.in_channels, big, big, rng);
    const auto y = oracle::random_tensor<double>(1, cs.out_channels, big / 2, big / 2, rng);
    const double lhs = oracle::dot(nn::conv2d(x, c).data, y.data), rhs = oracle::dot(x.data, nn::deconv2d(y, d).data);
    worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    ++adj_cases;
  }
  const bool ok = cases >= 100 && worst <= 1e-12 && worst_adj <= 1e-10;
  return {ok, format("%d random cases, max |kernel - loop| %.2e (<= 1e-12); %d adjoint cases, max rel gap %.2e "
                     "(<= 1e-10)",
                     cases, worst, adj_cases, worst_adj)};
}

// ---------------------------------------------------------------------------
// AC-4 / AC-5

struct DeskData {
  std::vector<dataset::StoredPair> train, validation, test;
  double peak_motion = 0.0;
  double build_seconds = 0.0;
};

DeskData build_desk_data() {
  const auto t0 = std::chrono::steady_clock::now();
  const Frame tex = generate_texture(11, 640, 192, TextureKind::filtered_noise, {4.0, 1.0});
  MotionOptions mo;
  mo.kind = MotionKind::multi_sine;
  mo.frames = 110;
  mo.amplitude = 1.0;
  mo.frequency = 24.0;
  mo.direction = 0.1;
  mo.seed = 5;
  const MotionSignal sig = make_motion(mo);
  DeskData out;
  for (const auto& d : sig.samples) out.peak_motion = std::max({out.peak_motion, std::abs(d.dx), std::abs(d.dy)});
  const VibrationVideo vib = generate_vibration_sequence(tex, sig);
  dataset::CropConfig cc;
  cc.sections = 10;
  cc.boxes_per_section = {
      {dataset::Segment::train, 10}, {dataset::Segment::validation, 2}, {dataset::Segment::test, 2}};
  cc.seed = 3;
  dataset::PairConfig pc;
  pc.frames_per_section = 11;
  const fs::path dir = g_artifacts / "desk_dataset";
  fs::remove_all(dir);
  dataset::build_dataset(vib.video, cc, pc, dir, 1);
  out.train = dataset::read_dataset(dir / "train");
  out.validation = dataset::read_dataset(dir / "validation");
  out.test = dataset::read_dataset(dir / "test");
  out.build_seconds = seconds_since(t0);
  return out;
}

train::TrainResult desk_train(const DeskData& data, bool mask_loss, const std::string& tag) {
  train::TrainConfig tc;
  tc.batch_size = 32;
  tc.epochs = 40;
  tc.seed = 1;
  tc.loss.mask_loss_enabled = mask_loss;
  tc.log_path = g_artifacts / ("train_log_" + tag + ".csv");
  tc.checkpoint_path = g_artifacts / ("best_" + tag + ".sfck");
  return train::train(data.train, data.validation, tc, [&](const train::EpochRecord& r) {
    if (r.epoch % 10 == 0)
      std::fprintf(stderr, "  [%s] epoch %d  val full %.4f sparse %.4f\n", tag.c_str(), r.epoch,
                   r.validation.full_epe, r.validation.sparse_epe);
  });
}

// Network on a 200-frame damped-sine video at pair scale, against known motion.
std::pair<double, eval::RmsResult> sine_video_error(const nn::NetworkParams<float>& params) {
  const Frame tex = generate_texture(3, 96, 96, TextureKind::filtered_noise, {4.0, 1.0});
  MotionOptions mo;
  mo.kind = MotionKind::damped_sine;
  mo.frames = 200;
  mo.amplitude = 1.0;
  mo.frequency = 6.0;
  const VibrationVideo vib = generate_vibration_sequence(tex, make_motion(mo));
  const FrameSequence video = blur_downsample(vib.video, 1);
  eval::NetworkEstimator est(params);
  const auto fields = eval::extract_fields(est, video);
  double abs_sum = 0.0, su = 0.0, sv = 0.0;
  std::size_t nu = 0, nv = 0;
  for (std::size_t t = 0; t < fields.size(); ++t) {
    const double dx = 0.5 * vib.truth[t + 1].dx, dy = 0.5 * vib.truth[t + 1].dy;
    const MotionField& f = fields[t];
    for (std::size_t i = 0; i < f.u.data.size(); ++i) {
      if (f.mask_u.mask.data[i]) {
        const double e = f.u.data[i] - dx;
        abs_sum += std::abs(e), su += e * e, ++nu;
      }
      if (f.mask_v.mask.data[i]) {
        const double e = f.v.data[i] - dy;
        abs_sum += std::abs(e), sv += e * e, ++nv;
      }
    }
  }
  return {abs_sum / static_cast<double>(nu + nv),
          {std::sqrt(su / static_cast<double>(nu)), std::sqrt(sv / static_cast<double>(nv))}};
}

double masked_epe(const nn::NetworkParams<float>& params, const std::vector<dataset::StoredPair>& samples) {
  train::LossConfig lc;
  lc.sparse_norm = train::SparseNorm::masked_pixels;
  return train::evaluate_loss(params, samples, lc).sparse_epe;
}

struct DeskRuns {
  DeskData data;
  train::TrainResult with_mask;
  double with_mask_seconds = 0.0;
};

// Built on first use and shared by AC-4 and AC-5.
DeskRuns& desk_runs() {
  static DeskRuns runs = [] {
    DeskRuns r;
    r.data = build_desk_data();
    std::fprintf(stderr, "  desk data: %zu train, %zu validation, %zu test pairs (%.1f s)\n", r.data.train.size(),
                 r.data.validation.size(), r.data.test.size(), r.data.build_seconds);
    const auto t0 = std::chrono::steady_clock::now();
    r.with_mask = desk_train(r.data, true, "mask");
    r.with_mask_seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

Outcome ac4_desk_training() {
  DeskRuns& d = desk_runs();
  const auto& best = d.with_mask.best_params;
  const eval::DatasetEvaluation test = eval::evaluate_dataset(best, d.data.test, {1.0});
  const eval::DatasetEvaluation val = eval::evaluate_dataset(best, d.data.validation, {1.0});
  const auto [sine_mae, sine_rms] = sine_video_error(best);
  const double total = d.data.build_seconds + d.with_mask_seconds;
  const bool ok = d.data.train.size() >= 2000 && d.data.peak_motion <= 1.0 && d.with_mask.log.size() <= 200 &&
                  test.masked.combined() <= 0.1 && sine_mae <= 0.1 && sine_rms.u <= 0.1 && sine_rms.v <= 0.1 &&
                  total <= 3600.0;
  return {ok, format("%zu train pairs (peak motion %.2f px), %zu epochs, best epoch %d; held-out test masked MAE "
                     "%.4f px (<= 0.1; validation %.4f); damped-sine video masked MAE %.4f, RMS u %.4f v %.4f px "
                     "(<= 0.1); %.0f s",
                     d.data.train.size(), d.data.peak_motion, d.with_mask.log.size(), d.with_mask.state.best_epoch,
                     test.masked.combined(), val.masked.combined(), sine_mae, sine_rms.u, sine_rms.v, total)};
}

Outcome ac5_mask_ablation() {
  DeskRuns& d = desk_runs();
  const train::TrainResult without = desk_train(d.data, false, "nomask");
  const double on = masked_epe(d.with_mask.best_params, d.data.validation);
  const double off = masked_epe(without.best_params, d.data.validation);
  return {on <= off, format("best-checkpoint validation masked-pixel EPE: sparse term on %.4f, off %.4f px", on, off)};
}

// ---------------------------------------------------------------------------
// AC-6

Outcome ac6_threshold_sweep() {
  const std::vector<double> coefs = {0.5, 1.0, 1.5, 2.0};
  bool monotone = true;
  std::string counts;
  for (int seed = 1; seed <= 5; ++seed) {
    const Frame ref = generate_texture(static_cast<std::uint64_t>(seed), 48, 48, TextureKind::filtered_noise);
    PhaseEngine engine;
    engine.set_reference(ref);
    const MotionField pred = engine.estimate(subpixel_shift(ref, 0.3, 0.2));
    const MotionField truth = eval::uniform_field({0.3, 0.2}, pred);
    const auto sr = eval::threshold_sweep(pred, truth, engine.reference(), coefs);
    for (std::size_t i = 1; i < sr.entries.size(); ++i)
      monotone = monotone && sr.entries[i].count_u <= sr.entries[i - 1].count_u &&
                 sr.entries[i].count_v <= sr.entries[i - 1].count_v;
    if (seed == 1)
      for (const auto& e : sr.entries) counts += format("%s%zu", counts.empty() ? "" : "/", e.count());
  }

  // Error inversely proportional to the filter amplitude.
  const Frame ref = generate_texture(9, 48, 48, TextureKind::filtered_noise);
  PhaseEngine engine;
  engine.set_reference(ref);
  const PhaseAnalysis& a = engine.reference();
  MotionField truth = eval::uniform_field({0.2, -0.1}, engine.estimate(ref));
  MotionField pred = truth;
  for (std::size_t i = 0; i < pred.u.data.size(); ++i) {
    pred.u.data[i] += 0.01 / (a.horizontal.amplitude.data[i] + 1e-9);
    pred.v.data[i] += 0.01 / (a.vertical.amplitude.data[i] + 1e-9);
  }
  const auto sr = eval::threshold_sweep(pred, truth, a, coefs);
  eval::write_sweep_csv(sr, g_artifacts / "threshold_sweep.csv");
  const double m10 = sr.entries[1].mae.value_or(NAN), m15 = sr.entries[2].mae.value_or(NAN);
  const bool ok = monotone && m15 <= m10;
  return {ok, format("counts non-increasing over C=0.5..2.0 on 5 seeds (seed 1: %s); amplitude-correlated case MAE "
                     "C=1.0 %.4f, C=1.5 %.4f",
                     counts.c_str(), m10, m15)};
}

// ---------------------------------------------------------------------------
// AC-7

Outcome ac7_loss() {
  using nn::Tensor4;
  Tensor4<double> p(1, 2, 1, 1), l(1, 2, 1, 1), m(1, 2, 1, 1, 1.0);
  const double zero = train::epe_loss(p, l, m).total;
  l.data = {3.0, 4.0};
  const double single = train::epe_loss(p, l, m).total;
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial)
    for (auto norm : {train::SparseNorm::all_pixels, train::SparseNorm::masked_pixels}) {
      const int b = 1 + trial % 3, h = 3 + trial % 5, w = 4 + trial % 4;
      Tensor4<double> pr = oracle::random_tensor<double>(b, 2, h, w, rng);
      Tensor4<double> lb = oracle::random_tensor<double>(b, 2, h, w, rng);
      Tensor4<double> mk(b, 2, h, w);
      std::bernoulli_distribution coin(0.4);
      for (double& v : mk.data) v = coin(rng) ? 1.0 : 0.0;
      train::LossConfig cfg;
      cfg.sparse_norm = norm;
      const auto r = train::epe_loss(pr, lb, mk, cfg);
      const auto o = oracle::brute_epe(pr, lb, mk, norm == train::SparseNorm::masked_pixels);
      worst = std::max({worst, std::abs(r.full_epe - o.full), std::abs(r.sparse_epe - o.sparse),
                        std::abs(r.total - (o.full + o.sparse))});
    }
  const bool ok = zero == 0.0 && std::abs(single - 10.0) <= 1e-12 && worst <= 1e-10;
  return {ok, format("zero residual %.3g; (3,4) masked pixel total %.12g; brute-force max gap %.2e (<= 1e-10)", zero,
                     single, worst)};
}

// ---------------------------------------------------------------------------
// AC-8

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(SUBFLOW_CLI_PATH) + " " + args + " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every output file except the two JSON records, which embed the run directory.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == "summary.json" || name == "config.resolved.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

Outcome ac8_determinism() {
  const fs::path root = g_artifacts / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  const fs::path log = root / "cli.log";
  if (run_cli("synth --seed 8 --frames 24 -o " + q(root / "video"), log) != 0) return {false, "synth failed"};
  const std::string video = q(root / "video" / "video.sfv");
  std::string detail;
  bool ok = true;
  auto twice = [&](const std::string& what, const std::function<std::string(const fs::path&)>& args) {
    const fs::path a = root / (what + "_1"), b = root / (what + "_2");
    if (run_cli("--deterministic " + args(a), log) != 0 || run_cli("--deterministic " + args(b), log) != 0) {
      ok = false;
      detail += what + " failed; ";
      return;
    }
    const auto ta = tree(a), tb = tree(b);
    const bool same = !ta.empty() && ta == tb;
    ok = ok && same;
    detail += format("%s %zu files %s; ", what.c_str(), ta.size(), same ? "identical" : "DIFFER");
  };
  twice("dataset", [&](const fs::path& o) {
    return "dataset -v " + video +
           " --sections 2 --frames-per-section 11 --train-boxes 4 --val-boxes 1 --test-boxes 1 -o " + q(o);
  });
  twice("train", [&](const fs::path& o) {
    return "train -d " + q(root / "dataset_1") + " --epochs 10 --batch 16 --seed 2 -o " + q(o);
  });
  twice("infer", [&](const fs::path& o) {
    return "infer -c " + q(root / "train_1" / "best.sfck") + " -v " + video + " --pixel 100,50 -o " + q(o);
  });
  return {ok, detail + "bitwise comparison of every output file"};
}

// ---------------------------------------------------------------------------
// AC-9

Outcome ac9_benchmark() {
  auto net = nn::build_network<float>(nn::Variant::subflownet_c);
  nn::init_uniform(net, 1);
  const eval::BenchReport c = eval::benchmark_inference(net, 200, 1, 1, {});
  auto s = nn::build_network<float>(nn::Variant::subflownet_s);
  nn::init_uniform(s, 1);
  const eval::BenchReport rs = eval::benchmark_inference(s, 200, 1, 1, {});
  const fs::path path = g_artifacts / "bench_report.json";
  {
    std::ofstream out(path);
    out << "[\n" << c.to_json() << ",\n" << rs.to_json() << "\n]\n";
  }
  const bool ok = fs::exists(path) && fs::file_size(path) > 0 && c.net_ms_per_pair > 0.0 && c.phase_ms_per_pair > 0.0;
  return {ok, format("%s %.3f ms/pair, %s %.3f ms/pair, phase engine %.3f ms/pair on 1 thread (target net < 10 "
                     "ms/pair: %s); report %s",
                     c.variant.c_str(), c.net_ms_per_pair, rs.variant.c_str(), rs.net_ms_per_pair,
                     c.phase_ms_per_pair, c.net_ms_per_pair < 10.0 ? "met" : "not met", path.string().c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string artifacts = g_artifacts.string();
  std::vector<std::string> only;
  app.add_option("--artifacts", artifacts, "Directory for archived reports and logs");
  app.add_option("--only", only, "Run only these criteria (e.g. AC-1 AC-7)");
  CLI11_PARSE(app, argc, argv);
  g_artifacts = artifacts;
  fs::create_directories(g_artifacts);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"AC-1", ac1_phase_accuracy}, {"AC-2", ac2_gradients},       {"AC-3", ac3_kernels},
      {"AC-4", ac4_desk_training},  {"AC-5", ac5_mask_ablation},   {"AC-6", ac6_threshold_sweep},
      {"AC-7", ac7_loss},           {"AC-8", ac8_determinism},     {"AC-9", ac9_benchmark}};
  const std::set<std::string> wanted(only.begin(), only.end());
  int failed = 0;
  std::ofstream summary(g_artifacts / "acceptance.txt");
  for (const auto& [id, fn] : checks) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const std::string line = id + (o.pass ? " PASS " : " FAIL ") + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    summary << line << '\n';
    if (!o.pass) ++failed;
  }
  return std::min(failed, 125);
}
