#include "subflow/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "subflow/error.hpp"

namespace subflow::eval {

namespace {

constexpr const char* kModule = "eval";

void require_same(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) fail(Errc::dimension, kModule, std::string(what) + ": field shapes differ");
}

struct Accum {
  double sum = 0.0;
  std::size_t count = 0;
};

// Sum of |truth - pred| where select(x, y) holds.
template <typename Select>
Accum mae_sum(const Grid& pred, const Grid& truth, Select&& select) {
  Accum a;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x)
      if (select(x, y)) {
        a.sum += std::abs(truth(x, y) - pred(x, y));
        ++a.count;
      }
  return a;
}

SweepEntry sweep_entry(double c, const MotionField& pred, const MotionField& truth, const MaskGrid& mu,
                       const MaskGrid& mv) {
  SweepEntry e;
  e.coefficient = c;
  const Accum au = mae_sum(pred.u, truth.u, [&](int x, int y) { return mu(x, y) != 0; });
  const Accum av = mae_sum(pred.v, truth.v, [&](int x, int y) { return mv(x, y) != 0; });
  e.count_u = au.count;
  e.count_v = av.count;
  if (au.count) e.mae_u = au.sum / static_cast<double>(au.count);
  if (av.count) e.mae_v = av.sum / static_cast<double>(av.count);
  if (au.count + av.count) e.mae = (au.sum + av.sum) / static_cast<double>(au.count + av.count);
  return e;
}

void check_coefficients(const std::vector<double>& coefficients) {
  if (coefficients.empty()) fail(Errc::parameter, kModule, "coefficient list is empty");
  for (double c : coefficients)
    if (!(c > 0.0) || !std::isfinite(c)) fail(Errc::parameter, kModule, "coefficients must be positive");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

const char* region_name(Region r) noexcept {
  switch (r) {
    case Region::full: return "full";
    case Region::interior: return "interior";
    case Region::masked: return "masked";
  }
  return "unknown";
}

Region parse_region(const std::string& name) {
  if (name == "full") return Region::full;
  if (name == "interior") return Region::interior;
  if (name == "masked") return Region::masked;
  fail(Errc::parameter, kModule, "unknown region '" + name + "'");
}

double MaeResult::combined() const noexcept {
  const std::size_t n = count_u + count_v;
  return n ? (u * static_cast<double>(count_u) + v * static_cast<double>(count_v)) / static_cast<double>(n) : 0.0;
}

MaeResult evaluate_mae(const MotionField& pred, const MotionField& truth, Region region, int border) {
  require_same(pred.u, truth.u, "evaluate_mae");
  require_same(pred.v, truth.v, "evaluate_mae");
  require_same(pred.u, pred.v, "evaluate_mae");
  if (border < 0) fail(Errc::parameter, kModule, "border must be non-negative");
  const int w = pred.u.width;
  const int h = pred.u.height;
  Accum au, av;
  switch (region) {
    case Region::full:
      au = mae_sum(pred.u, truth.u, [](int, int) { return true; });
      av = mae_sum(pred.v, truth.v, [](int, int) { return true; });
      break;
    case Region::interior: {
      auto inside = [&](int x, int y) { return x >= border && y >= border && x < w - border && y < h - border; };
      au = mae_sum(pred.u, truth.u, inside);
      av = mae_sum(pred.v, truth.v, inside);
      break;
    }
    case Region::masked: {
      const MaskGrid& mu = truth.mask_u.mask;
      const MaskGrid& mv = truth.mask_v.mask;
      if (!mu.same_shape(w, h) || !mv.same_shape(w, h))
        fail(Errc::dimension, kModule, "masked MAE requires truth masks of the field's shape");
      au = mae_sum(pred.u, truth.u, [&](int x, int y) { return mu(x, y) != 0; });
      av = mae_sum(pred.v, truth.v, [&](int x, int y) { return mv(x, y) != 0; });
      break;
    }
  }
  if (au.count == 0 || av.count == 0)
    fail(Errc::empty_region, kModule,
         std::string("no pixels in the ") + region_name(region) + " region for direction " + (au.count ? "v" : "u"));
  MaeResult r;
  r.count_u = au.count;
  r.count_v = av.count;
  r.u = au.sum / static_cast<double>(au.count);
  r.v = av.sum / static_cast<double>(av.count);
  return r;
}

SweepResult threshold_sweep(const MotionField& pred, const MotionField& truth, const PhaseAnalysis& reference,
                            const std::vector<double>& coefficients, const MaskConfig& cfg) {
  check_coefficients(coefficients);
  require_same(pred.u, truth.u, "threshold_sweep");
  require_same(pred.v, truth.v, "threshold_sweep");
  require_same(pred.u, reference.grad_x, "threshold_sweep");
  SweepResult out;
  for (double c : coefficients) {
    MaskConfig mc = cfg;
    mc.coefficient = c;
    const TextureMask mu = texture_mask(reference.horizontal, reference.grad_x, mc);
    const TextureMask mv = texture_mask(reference.vertical, reference.grad_y, mc);
    out.entries.push_back(sweep_entry(c, pred, truth, mu.mask, mv.mask));
  }
  return out;
}

SweepResult threshold_sweep(const MotionField& pred, const MotionField& truth, const Grid& amplitude_u,
                            const Grid& amplitude_v, const std::vector<double>& coefficients, const MaskConfig& cfg) {
  check_coefficients(coefficients);
  require_same(pred.u, truth.u, "threshold_sweep");
  require_same(pred.v, truth.v, "threshold_sweep");
  require_same(pred.u, amplitude_u, "threshold_sweep");
  require_same(pred.v, amplitude_v, "threshold_sweep");
  const double t0u = base_threshold(amplitude_u, cfg);
  const double t0v = base_threshold(amplitude_v, cfg);
  const int w = pred.u.width;
  const int h = pred.u.height;
  auto build = [&](const Grid& amp, double t) {
    MaskGrid m(w, h, 0);
    for (int y = cfg.border; y < h - cfg.border; ++y)
      for (int x = cfg.border; x < w - cfg.border; ++x)
        if (amp(x, y) >= t) m(x, y) = 1;
    return m;
  };
  SweepResult out;
  for (double c : coefficients)
    out.entries.push_back(sweep_entry(c, pred, truth, build(amplitude_u, c * t0u), build(amplitude_v, c * t0v)));
  return out;
}

void write_sweep_csv(const SweepResult& sweep, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
  out << "coefficient,count_u,count_v,mae_u,mae_v,mae\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& e : sweep.entries)
    out << fmt(e.coefficient) << ',' << e.count_u << ',' << e.count_v << ',' << opt(e.mae_u) << ',' << opt(e.mae_v)
        << ',' << opt(e.mae) << '\n';
  if (!out) fail(Errc::io, kModule, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Estimators.

std::vector<MotionField> Estimator::estimate_many(const std::vector<const Frame*>& frames) {
  std::vector<MotionField> out;
  out.reserve(frames.size());
  for (const Frame* f : frames) out.push_back(estimate(*f));
  return out;
}

PhaseEstimator::PhaseEstimator(PhaseConfig cfg) : engine_(cfg) {}

void PhaseEstimator::set_reference(const Frame& reference) { engine_.set_reference(reference); }

MotionField PhaseEstimator::estimate(const Frame& current) { return engine_.estimate(current); }

NetworkEstimator::NetworkEstimator(nn::NetworkParams<float> params, PhaseConfig cfg, int threads, int batch_size)
    : params_(std::move(params)), engine_(cfg), threads_(threads), batch_size_(std::max(1, batch_size)) {}

void NetworkEstimator::set_reference(const Frame& reference) {
  if (reference.width() % 8 != 0 || reference.height() % 8 != 0)
    fail(Errc::dimension, kModule, "network input size must be a multiple of 8");
  reference_ = reference;
  engine_.set_reference(reference);
  has_reference_ = true;
}

MotionField NetworkEstimator::estimate(const Frame& current) { return estimate_many({&current}).front(); }

std::vector<MotionField> NetworkEstimator::estimate_many(const std::vector<const Frame*>& frames) {
  if (!has_reference_) fail(Errc::state, kModule, "network estimator has no reference frame");
  const int w = reference_.width();
  const int h = reference_.height();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  std::vector<MotionField> out;
  out.reserve(frames.size());
  for (std::size_t b0 = 0; b0 < frames.size(); b0 += static_cast<std::size_t>(batch_size_)) {
    const std::size_t b1 = std::min(frames.size(), b0 + static_cast<std::size_t>(batch_size_));
    const int n = static_cast<int>(b1 - b0);
    nn::Tensor4<float> ref(n, 1, h, w), cur(n, 1, h, w);
    for (int i = 0; i < n; ++i) {
      const Frame& f = *frames[b0 + static_cast<std::size_t>(i)];
      if (f.width() != w || f.height() != h) fail(Errc::dimension, kModule, "frame size differs from the reference");
      for (std::size_t j = 0; j < plane; ++j) {
        ref.channel(i, 0)[j] = static_cast<float>(reference_.luma.data[j]);
        cur.channel(i, 0)[j] = static_cast<float>(f.luma.data[j]);
      }
    }
    const auto pred = nn::forward<float>(params_, ref, cur, nullptr, threads_);
    for (int i = 0; i < n; ++i) {
      MotionField m;
      m.u = Grid(w, h);
      m.v = Grid(w, h);
      for (std::size_t j = 0; j < plane; ++j) {
        m.u.data[j] = pred.channel(i, 0)[j];
        m.v.data[j] = pred.channel(i, 1)[j];
      }
      m.mask_u = engine_.mask_u();
      m.mask_v = engine_.mask_v();
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::vector<MotionField> extract_fields(Estimator& estimator, const FrameSequence& video) {
  validate(video);
  if (video.size() < 2) fail(Errc::parameter, kModule, "time histories need at least 2 frames");
  estimator.set_reference(video.frames[0]);
  std::vector<const Frame*> rest;
  for (std::size_t t = 1; t < video.size(); ++t) rest.push_back(&video.frames[t]);
  return estimator.estimate_many(rest);
}

std::vector<TimeHistory> histories_from_fields(const std::vector<MotionField>& fields, const FrameSequence& video,
                                               const std::vector<Pixel>& pixels) {
  if (fields.size() + 1 != video.size()) fail(Errc::dimension, kModule, "field count does not match the video");
  const int w = video.width();
  const int h = video.height();
  std::vector<TimeHistory> out;
  for (const Pixel& p : pixels) {
    if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h)
      fail(Errc::parameter, kModule,
           "pixel (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") is outside the " + std::to_string(w) +
               "x" + std::to_string(h) + " frame");
    TimeHistory th;
    th.pixel = p;
    for (std::size_t t = 0; t < fields.size(); ++t)
      th.samples.push_back({video.frames[t + 1].timestamp_index, fields[t].u(p.x, p.y), fields[t].v(p.x, p.y)});
    out.push_back(std::move(th));
  }
  return out;
}

std::vector<TimeHistory> extract_time_history(Estimator& estimator, const FrameSequence& video,
                                              const std::vector<Pixel>& pixels) {
  validate(video);
  for (const Pixel& p : pixels)
    if (p.x < 0 || p.y < 0 || p.x >= video.width() || p.y >= video.height())
      fail(Errc::parameter, kModule,
           "pixel (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") is out of bounds");
  return histories_from_fields(extract_fields(estimator, video), video, pixels);
}

void write_time_history_csv(const std::vector<TimeHistory>& histories, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
  out << "x,y,frame_index,u,v\n";
  for (const auto& th : histories)
    for (const auto& s : th.samples)
      out << th.pixel.x << ',' << th.pixel.y << ',' << s.frame_index << ',' << fmt(s.u) << ',' << fmt(s.v) << '\n';
  if (!out) fail(Errc::io, kModule, "failed writing " + path.string());
}

RmsResult rms_error(const TimeHistory& history, const std::vector<Displacement>& truth) {
  if (history.samples.empty()) fail(Errc::parameter, kModule, "empty time history");
  if (truth.empty()) fail(Errc::parameter, kModule, "empty ground truth");
  double su = 0.0, sv = 0.0;
  for (const auto& s : history.samples) {
    if (s.frame_index < 0 || static_cast<std::size_t>(s.frame_index) >= truth.size())
      fail(Errc::dimension, kModule, "ground truth does not cover frame " + std::to_string(s.frame_index));
    const double du = s.u - (truth[static_cast<std::size_t>(s.frame_index)].dx - truth[0].dx);
    const double dv = s.v - (truth[static_cast<std::size_t>(s.frame_index)].dy - truth[0].dy);
    su += du * du;
    sv += dv * dv;
  }
  const double n = static_cast<double>(history.samples.size());
  return {std::sqrt(su / n), std::sqrt(sv / n)};
}

// ---------------------------------------------------------------------------
// Learned filters.

std::vector<Grid> first_layer_kernels(const nn::NetworkParams<float>& params) {
  if (params.layers.empty()) fail(Errc::state, kModule, "network has no layers");
  const nn::Layer<float>& l = params.layers.front();
  const int k = l.spec.kernel;
  std::vector<Grid> out;
  for (int oc = 0; oc < l.spec.out_channels; ++oc)
    for (int ic = 0; ic < l.spec.in_channels; ++ic) {
      Grid g(k, k);
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
          g(x, y) = l.weight[((static_cast<std::size_t>(oc) * l.spec.in_channels + ic) * k + y) * k + x];
      out.push_back(std::move(g));
    }
  return out;
}

std::vector<std::filesystem::path> export_learned_filters(const nn::NetworkParams<float>& params,
                                                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Errc::io, kModule, "cannot create " + dir.string());
  const auto kernels = first_layer_kernels(params);
  const int in_ch = params.layers.front().spec.in_channels;
  std::vector<std::filesystem::path> files;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    char name[64];
    if (in_ch == 1)
      std::snprintf(name, sizeof name, "filter_%02zu.csv", i);
    else
      std::snprintf(name, sizeof name, "filter_%02zu_in%zu.csv", i / in_ch, i % in_ch);
    const auto path = dir / name;
    std::ofstream out(path);
    if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
    const Grid& g = kernels[i];
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) out << (x ? "," : "") << fmt(g(x, y));
      out << '\n';
    }
    if (!out) fail(Errc::io, kModule, "failed writing " + path.string());
    files.push_back(path);
  }
  return files;
}

std::vector<Grid> import_learned_filters(const std::vector<std::filesystem::path>& files) {
  std::vector<Grid> out;
  for (const auto& path : files) {
    std::ifstream in(path);
    if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        try {
          row.push_back(std::stod(cell));
        } catch (...) {
          fail(Errc::format, kModule, "bad number '" + cell + "' in " + path.string());
        }
      }
      if (!rows.empty() && row.size() != rows.front().size())
        fail(Errc::format, kModule, "ragged filter grid in " + path.string());
      rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(Errc::format, kModule, "empty filter grid in " + path.string());
    Grid g(static_cast<int>(rows.front().size()), static_cast<int>(rows.size()));
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) g(x, y) = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
    out.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark.

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["param_count"] = param_count;
  j["n_pairs"] = n_pairs;
  j["threads"] = threads;
  j["net_ms_per_pair"] = net_ms_per_pair;
  j["net_pairs_per_second"] = net_pairs_per_second;
  j["phase_ms_per_pair"] = phase_ms_per_pair;
  j["phase_pairs_per_second"] = phase_pairs_per_second;
  j["speed_ratio"] = speed_ratio;
  j["target_net_ms_per_pair"] = 10.0;
  return j.dump(2);
}

BenchReport benchmark_inference(const nn::NetworkParams<float>& params, int n_pairs, std::uint64_t seed, int threads,
                                const PhaseConfig& phase_cfg) {
  if (n_pairs < 10) fail(Errc::parameter, kModule, "benchmark needs at least 10 pairs");
  const int s = nn::kInputSize;
  std::vector<Frame> refs, curs;
  for (int i = 0; i < n_pairs; ++i) {
    const Frame tex = generate_texture(seed + static_cast<std::uint64_t>(i), s, s, TextureKind::filtered_noise);
    refs.push_back(tex);
    curs.push_back(subpixel_shift(tex, 0.25, -0.1));
  }
  using clock = std::chrono::steady_clock;

  nn::Tensor4<float> ref(1, 1, s, s), cur(1, 1, s, s);
  nn::ForwardCache<float> cache;
  auto load = [&](int i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      ref.data[j] = static_cast<float>(refs[static_cast<std::size_t>(i)].luma.data[j]);
      cur.data[j] = static_cast<float>(curs[static_cast<std::size_t>(i)].luma.data[j]);
    }
  };
  load(0);
  nn::forward(params, ref, cur, &cache, threads);  // warm-up
  double net_seconds = 0.0;
  double checksum = 0.0;
  for (int i = 0; i < n_pairs; ++i) {
    load(i);
    const auto t0 = clock::now();
    const auto& out = nn::forward(params, ref, cur, &cache, threads);
    net_seconds += std::chrono::duration<double>(clock::now() - t0).count();
    checksum += out.data[0];
  }

  PhaseEngine engine(phase_cfg);
  double phase_seconds = 0.0;
  for (int i = 0; i < n_pairs; ++i) {
    const auto t0 = clock::now();
    const MotionField m = engine.estimate(refs[static_cast<std::size_t>(i)], curs[static_cast<std::size_t>(i)]);
    phase_seconds += std::chrono::duration<double>(clock::now() - t0).count();
    checksum += m.u.data[0];
  }
  if (!std::isfinite(checksum)) fail(Errc::numeric, kModule, "benchmark produced non-finite output");

  BenchReport r;
  r.variant = nn::variant_name(params.variant);
  r.param_count = params.total_params();
  r.n_pairs = n_pairs;
  r.threads = std::max(1, threads);
  r.net_ms_per_pair = std::max(1e-9, net_seconds * 1e3 / n_pairs);
  r.phase_ms_per_pair = std::max(1e-9, phase_seconds * 1e3 / n_pairs);
  r.net_pairs_per_second = 1000.0 / r.net_ms_per_pair;
  r.phase_pairs_per_second = 1000.0 / r.phase_ms_per_pair;
  r.speed_ratio = r.phase_ms_per_pair / r.net_ms_per_pair;
  return r;
}

// ---------------------------------------------------------------------------
// Dataset evaluation.

Frame stored_frame(const std::vector<float>& plane) {
  const int s = dataset::kPairSize;
  if (plane.size() != static_cast<std::size_t>(s) * s) fail(Errc::dimension, kModule, "stored plane must be 48x48");
  Frame f(s, s);
  for (std::size_t i = 0; i < plane.size(); ++i) f.luma.data[i] = plane[i];
  return f;
}

MotionField stored_label(const dataset::StoredPair& pair) {
  const int s = dataset::kPairSize;
  MotionField m;
  m.u = stored_frame(pair.label_u).luma;
  m.v = stored_frame(pair.label_v).luma;
  m.mask_u.direction = Orientation::horizontal;
  m.mask_v.direction = Orientation::vertical;
  m.mask_u.mask = MaskGrid(s, s);
  m.mask_v.mask = MaskGrid(s, s);
  if (pair.mask_u.size() != m.mask_u.mask.data.size() || pair.mask_v.size() != m.mask_v.mask.data.size())
    fail(Errc::dimension, kModule, "stored mask must be 48x48");
  m.mask_u.mask.data = pair.mask_u;
  m.mask_v.mask.data = pair.mask_v;
  return m;
}

MotionField uniform_field(const Displacement& d, const MotionField& masks) {
  MotionField m = masks;
  std::fill(m.u.data.begin(), m.u.data.end(), d.dx);
  std::fill(m.v.data.begin(), m.v.data.end(), d.dy);
  return m;
}

DatasetEvaluation evaluate_dataset(const nn::NetworkParams<float>& params,
                                   const std::vector<dataset::StoredPair>& samples,
                                   const std::vector<double>& coefficients, const PhaseConfig& phase, int threads,
                                   int batch_size) {
  if (samples.empty()) fail(Errc::parameter, kModule, "cannot evaluate an empty dataset");
  check_coefficients(coefficients);
  const int s = dataset::kPairSize;
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  PhaseEngine engine(phase);
  DatasetEvaluation ev;
  ev.samples = samples.size();
  struct Pool {
    double su = 0, sv = 0;
    std::size_t nu = 0, nv = 0;
    void add(const MaeResult& r) {
      su += r.u * static_cast<double>(r.count_u);
      sv += r.v * static_cast<double>(r.count_v);
      nu += r.count_u;
      nv += r.count_v;
    }
    MaeResult result(const char* region) const {
      if (nu == 0 || nv == 0)
        fail(Errc::empty_region, kModule, std::string("no pixels in the ") + region + " region over the dataset");
      return {su / static_cast<double>(nu), sv / static_cast<double>(nv), nu, nv};
    }
  };
  Pool full, interior, masked;
  std::vector<Pool> sweep(coefficients.size());
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t b0 = 0; b0 < samples.size(); b0 += bs) {
    const std::size_t b1 = std::min(samples.size(), b0 + bs);
    const int n = static_cast<int>(b1 - b0);
    nn::Tensor4<float> ref(n, 1, s, s), cur(n, 1, s, s);
    for (int i = 0; i < n; ++i) {
      const auto& p = samples[b0 + static_cast<std::size_t>(i)];
      if (p.reference.size() != plane || p.current.size() != plane)
        fail(Errc::dimension, kModule, "stored frames must be 48x48");
      std::copy(p.reference.begin(), p.reference.end(), ref.channel(i, 0));
      std::copy(p.current.begin(), p.current.end(), cur.channel(i, 0));
    }
    const auto out = nn::forward<float>(params, ref, cur, nullptr, threads);
    for (int i = 0; i < n; ++i) {
      const auto& p = samples[b0 + static_cast<std::size_t>(i)];
      const MotionField truth = stored_label(p);
      MotionField pred = truth;
      for (std::size_t j = 0; j < plane; ++j) {
        pred.u.data[j] = out.channel(i, 0)[j];
        pred.v.data[j] = out.channel(i, 1)[j];
      }
      full.add(evaluate_mae(pred, truth, Region::full));
      interior.add(evaluate_mae(pred, truth, Region::interior));
      const Accum au = mae_sum(pred.u, truth.u, [&](int x, int y) { return truth.mask_u.mask(x, y) != 0; });
      const Accum av = mae_sum(pred.v, truth.v, [&](int x, int y) { return truth.mask_v.mask(x, y) != 0; });
      masked.su += au.sum;
      masked.sv += av.sum;
      masked.nu += au.count;
      masked.nv += av.count;
      const PhaseAnalysis analysis = engine.analyze_frame(stored_frame(p.reference));
      const SweepResult sr = threshold_sweep(pred, truth, analysis, coefficients, phase.mask);
      for (std::size_t c = 0; c < coefficients.size(); ++c) {
        const SweepEntry& e = sr.entries[c];
        sweep[c].su += e.mae_u.value_or(0.0) * static_cast<double>(e.count_u);
        sweep[c].sv += e.mae_v.value_or(0.0) * static_cast<double>(e.count_v);
        sweep[c].nu += e.count_u;
        sweep[c].nv += e.count_v;
      }
    }
  }
  ev.full = full.result("full");
  ev.interior = interior.result("interior");
  ev.masked = masked.result("masked");
  for (std::size_t c = 0; c < coefficients.size(); ++c) {
    const Pool& pl = sweep[c];
    SweepEntry e;
    e.coefficient = coefficients[c];
    e.count_u = pl.nu;
    e.count_v = pl.nv;
    if (pl.nu) e.mae_u = pl.su / static_cast<double>(pl.nu);
    if (pl.nv) e.mae_v = pl.sv / static_cast<double>(pl.nv);
    if (pl.nu + pl.nv) e.mae = (pl.su + pl.sv) / static_cast<double>(pl.nu + pl.nv);
    ev.sweep.entries.push_back(e);
  }
  return ev;
}

}  // namespace subflow::eval
