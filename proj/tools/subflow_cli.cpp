// subflow: command-line driver over the C interface.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subflow/subflow.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Runtime failure reported by the library; exit code 1.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad flag value discovered after parsing; exit code 2.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(sf_status s) {
  if (s != SF_OK) throw RuntimeFailure(sf_last_error());
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (p) Free(p);
  }
  T** out() { return &p; }
  T* get() const { return p; }
};

using Video = Handle<sf_video, sf_video_free>;
using Fields = Handle<sf_fields, sf_fields_free>;
using Estimator = Handle<sf_estimator, sf_estimator_free>;
using Network = Handle<sf_network, sf_network_free>;

// Every option is registered here so its effective value can be written to,
// and restored from, config.resolved.json.
struct Param {
  std::string key;
  CLI::Option* opt;
  std::function<json()> get;
  std::function<void(const json&)> set;
};

class Params {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& key, const std::string& flags, T& var, const std::string& desc) {
    CLI::Option* o = app->add_option(flags, var, desc)->capture_default_str();
    list_.push_back({key, o, [&var] { return json(var); }, [&var](const json& j) { var = j.get<T>(); }});
    return o;
  }
  CLI::Option* flag(CLI::App* app, const std::string& key, const std::string& flags, bool& var,
                    const std::string& desc) {
    CLI::Option* o = app->add_flag(flags, var, desc);
    list_.push_back({key, o, [&var] { return json(var); }, [&var](const json& j) { var = j.get<bool>(); }});
    return o;
  }

  // Unset options take the config file value first, then the profile value.
  void resolve(const json& config, const json& profile) {
    for (auto& p : list_) {
      if (p.opt->count() > 0) continue;
      try {
        if (config.contains(p.key))
          p.set(config.at(p.key));
        else if (profile.contains(p.key))
          p.set(profile.at(p.key));
      } catch (const json::exception& e) {
        throw UsageFailure("bad value for '" + p.key + "': " + e.what());
      }
    }
  }

  json dump() const {
    json j = json::object();
    for (const auto& p : list_) j[p.key] = p.get();
    return j;
  }

 private:
  std::vector<Param> list_;
};

struct PhaseArgs {
  int kernel = 9;
  double wavelength = 8.0;
  double sigma = 2.0;
  double mask_c = 1.0;
  int top_count = 30;
  double top_fraction = 0.2;
  int border = 4;

  void bind(Params& ps, CLI::App* app) {
    ps.add(app, "phase_kernel", "--kernel", kernel, "Quadrature kernel size (px)");
    ps.add(app, "phase_wavelength", "--wavelength", wavelength, "Quadrature tuned wavelength (px)");
    ps.add(app, "phase_sigma", "--sigma", sigma, "Quadrature Gaussian sigma (px)");
    ps.add(app, "mask_c", "--mask-c", mask_c, "Texture threshold coefficient C in T = C*T0");
    ps.add(app, "mask_top_count", "--top-count", top_count, "Amplitudes averaged for T0");
    ps.add(app, "mask_top_fraction", "--top-fraction", top_fraction, "T0 fraction of the top-amplitude mean");
    ps.add(app, "mask_border", "--border", border, "Excluded border ring (px)");
  }
  sf_phase_options options() const {
    sf_phase_options o;
    sf_phase_options_default(&o);
    o.kernel_size = kernel;
    o.wavelength = wavelength;
    o.sigma = sigma;
    o.mask_coefficient = mask_c;
    o.top_count = top_count;
    o.top_fraction = top_fraction;
    o.border = border;
    return o;
  }
};

struct Globals {
  int threads = 0;
  bool deterministic = false;
  std::string profile = "paper";
  std::string config;
};

struct SynthArgs {
  std::string out = "synth";
  std::uint64_t seed = 0;
  int width = 640;
  int height = 192;
  int frames = 500;
  double fps = 240.0;
  std::string texture = "filtered-noise";
  double tex_wavelength = 4.0;
  double tex_sigma = 1.0;
  std::string motion = "multi-sine";
  double amp = 1.0;
  double freq = 24.0;
  double damping = 0.02;
  double direction = 0.1;
  double noise = 0.0;
  int downsample = 0;
  bool pgm = false;
};

struct ExtractArgs {
  std::string video;
  std::string truth;
  std::string out = "extract";
  std::vector<std::string> pixels;
  int downsample = 0;
  bool fields = true;
  PhaseArgs phase;
};

struct DatasetArgs {
  std::string video;
  std::string out = "dataset";
  std::uint64_t seed = 0;
  int sections = 10;
  int frames_per_section = 50;
  int first_frame = 0;
  int train_boxes = 100;
  int val_boxes = 30;
  int test_boxes = 30;
  bool flip = true;
  double train_frac = 0.7;
  double val_frac = 0.85;
  PhaseArgs phase;
};

struct TrainArgs {
  std::string data;
  std::string train_dir;
  std::string val_dir;
  std::string out = "train";
  std::string variant = "C";
  int epochs = 2000;
  int batch = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool mask_loss = true;
  std::string sparse_norm = "N";
  int max_train = 0;
  bool share_weights = false;
};

struct InferArgs {
  std::string checkpoint;
  std::string video;
  std::string truth;
  std::string out = "infer";
  std::vector<std::string> pixels;
  int downsample = 0;
  bool fields = true;
  PhaseArgs phase;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string video;
  std::string truth;
  std::string out = "eval";
  std::vector<std::string> pixels;
  std::vector<double> coefficients{0.5, 1.0, 1.5, 2.0};
  int downsample = 0;
  bool filters = false;
  PhaseArgs phase;
};

struct BenchArgs {
  std::string checkpoint;
  std::string variant = "C";
  std::string out = "bench";
  std::uint64_t seed = 0;
  int pairs = 100;
  int threads = 1;
};

json profile_overrides(const std::string& profile, const std::string& sub) {
  if (profile == "paper") return json::object();
  static const json desk = json::parse(R"({
    "synth": {"frames": 110},
    "dataset": {"frames_per_section": 11, "train_boxes": 10, "val_boxes": 2, "test_boxes": 2},
    "train": {"epochs": 40, "batch": 32}
  })");
  return desk.contains(sub) ? desk.at(sub) : json::object();
}

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw RuntimeFailure("cli: cannot create " + d.string() + ": " + ec.message());
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cli: cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeFailure("cli: failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageFailure("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageFailure("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::vector<int> parse_pixels(const std::vector<std::string>& specs) {
  std::vector<int> xy;
  for (const auto& s : specs) {
    const auto comma = s.find(',');
    std::size_t a = 0, b = 0;
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      const int x = std::stoi(s.substr(0, comma), &a);
      const int y = std::stoi(s.substr(comma + 1), &b);
      if (a != comma || b != s.size() - comma - 1) throw std::invalid_argument("trailing text");
      xy.push_back(x);
      xy.push_back(y);
    } catch (const std::exception&) {
      throw UsageFailure("--pixel expects x,y, got '" + s + "'");
    }
  }
  return xy;
}

sf_variant parse_variant(const std::string& v) {
  if (v == "S" || v == "s" || v == "SubFlowNetS") return SF_SUBFLOWNET_S;
  if (v == "C" || v == "c" || v == "SubFlowNetC") return SF_SUBFLOWNET_C;
  throw UsageFailure("unknown variant '" + v + "'");
}

const char* variant_label(sf_variant v) { return v == SF_SUBFLOWNET_S ? "SubFlowNetS" : "SubFlowNetC"; }

// A directory is read as a PGM sequence, anything else as a raw_f32 file.
void load_video(const std::string& path, const std::string& truth, int downsample, Video& out) {
  if (path.empty()) throw UsageFailure("--video is required");
  const sf_frame_format f = fs::is_directory(path) ? SF_FORMAT_PGM_SEQUENCE : SF_FORMAT_RAW_F32;
  Video raw;
  check(sf_video_load(path.c_str(), f, raw.out()));
  if (!truth.empty()) check(sf_video_load_truth(raw.get(), truth.c_str(), 1.0));
  check(sf_video_downsample(raw.get(), downsample, out.out()));
}

int count_mask(const sf_fields* f, int index, bool v_dir) {
  int w = 0, h = 0;
  check(sf_fields_shape(f, &w, &h));
  std::vector<std::uint8_t> m(static_cast<std::size_t>(w) * h);
  check(sf_fields_get(f, index, nullptr, nullptr, v_dir ? nullptr : m.data(), v_dir ? m.data() : nullptr, m.size()));
  int n = 0;
  for (auto b : m) n += b;
  return n;
}

// Field CSVs, time histories and the summary shared by extract and infer.
json write_field_outputs(const sf_fields* fields, const sf_video* video, const std::vector<int>& xy, bool write_fields,
                         const fs::path& out) {
  int w = 0, h = 0, frames = 0;
  double fps = 0.0;
  check(sf_video_info(video, &w, &h, &frames, &fps));
  if (write_fields) check(sf_fields_write_csv(fields, (out / "fields").string().c_str()));
  if (!xy.empty())
    check(sf_fields_write_time_history(fields, video, xy.data(), xy.size() / 2,
                                       (out / "time_history.csv").string().c_str()));
  std::size_t oor = 0;
  check(sf_fields_out_of_range(fields, &oor));
  json s;
  s["width"] = w;
  s["height"] = h;
  s["frames"] = frames;
  s["frame_rate"] = fps;
  s["fields"] = sf_fields_count(fields);
  s["masked_pixels_u"] = count_mask(fields, 0, false);
  s["masked_pixels_v"] = count_mask(fields, 0, true);
  s["out_of_range"] = oor;
  if (sf_video_has_truth(video) && !xy.empty()) {
    json rms = json::array();
    for (std::size_t i = 0; i < xy.size(); i += 2) {
      double ru = 0.0, rv = 0.0;
      check(sf_fields_rms_vs_truth(fields, video, xy[i], xy[i + 1], &ru, &rv));
      rms.push_back({{"x", xy[i]}, {"y", xy[i + 1]}, {"rms_u", ru}, {"rms_v", rv}});
    }
    s["rms_vs_truth"] = rms;
  }
  return s;
}

json fields_vs_truth(const sf_fields* pred, const sf_video* video, const PhaseArgs& phase,
                     const std::vector<double>& coefficients, const fs::path& sweep_csv) {
  Fields truth;
  check(sf_fields_truth(video, pred, truth.out()));
  json m;
  const std::pair<sf_region, const char*> regions[] = {
      {SF_REGION_FULL, "full"}, {SF_REGION_INTERIOR, "interior"}, {SF_REGION_MASKED, "masked"}};
  for (const auto& [r, name] : regions) {
    double mu = 0.0, mv = 0.0;
    std::size_t cu = 0, cv = 0;
    check(sf_fields_mae(pred, truth.get(), r, &mu, &mv, &cu, &cv));
    const std::string k = std::string("mae_") + name;
    m[k + "_u"] = num(mu);
    m[k + "_v"] = num(mv);
    if (r == SF_REGION_MASKED) {
      const double pooled = (mu * static_cast<double>(cu) + mv * static_cast<double>(cv)) /
                            static_cast<double>(cu + cv);
      m["mae_masked"] = num(pooled);
      m["masked_count"] = cu + cv;
    }
  }
  const sf_phase_options po = phase.options();
  std::vector<double> mae(coefficients.size());
  std::vector<std::size_t> cnt(coefficients.size());
  check(sf_fields_sweep(pred, truth.get(), video, &po, coefficients.data(), coefficients.size(), mae.data(),
                        cnt.data()));
  std::ofstream csv(sweep_csv);
  if (!csv) throw RuntimeFailure("cli: cannot write " + sweep_csv.string());
  csv << "coefficient,pixel_count,mae\n";
  json sweep = json::array();
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    char line[96];
    std::snprintf(line, sizeof line, "%.9g,%zu,%.9g\n", coefficients[k], cnt[k], mae[k]);
    csv << line;
    sweep.push_back({{"coefficient", coefficients[k]}, {"pixel_count", cnt[k]}, {"mae", num(mae[k])}});
  }
  m["sweep"] = sweep;
  return m;
}

int effective_threads(const Globals& g) { return g.deterministic ? 1 : sf_resolve_threads(g.threads); }

// ---- subcommands --------------------------------------------------------------

json run_synth(const SynthArgs& a, const Globals&) {
  static const std::map<std::string, sf_texture_kind> textures{
      {"filtered-noise", SF_TEXTURE_FILTERED_NOISE}, {"bars", SF_TEXTURE_BARS}, {"blobs", SF_TEXTURE_BLOBS}};
  static const std::map<std::string, sf_motion_kind> motions{{"zero", SF_MOTION_ZERO},
                                                             {"sine", SF_MOTION_SINE},
                                                             {"damped-sine", SF_MOTION_DAMPED_SINE},
                                                             {"multi-sine", SF_MOTION_MULTI_SINE}};
  if (!textures.count(a.texture)) throw UsageFailure("unknown texture '" + a.texture + "'");
  if (!motions.count(a.motion)) throw UsageFailure("unknown motion '" + a.motion + "'");
  sf_synth_options o;
  sf_synth_options_default(&o);
  o.seed = a.seed;
  o.width = a.width;
  o.height = a.height;
  o.frames = a.frames;
  o.frame_rate = a.fps;
  o.texture = textures.at(a.texture);
  o.texture_wavelength = a.tex_wavelength;
  o.texture_sigma = a.tex_sigma;
  o.motion = motions.at(a.motion);
  o.amplitude = a.amp;
  o.frequency = a.freq;
  o.damping = a.damping;
  o.direction = a.direction;
  o.noise_sigma = a.noise;
  o.downsample_levels = a.downsample;
  Video v;
  check(sf_video_synthesize(&o, v.out()));
  const fs::path out(a.out);
  check(sf_video_save(v.get(), (out / "video.sfv").string().c_str(), SF_FORMAT_RAW_F32));
  if (a.pgm) check(sf_video_save(v.get(), (out / "frames").string().c_str(), SF_FORMAT_PGM_SEQUENCE));
  check(sf_video_save_truth(v.get(), (out / "truth.csv").string().c_str()));
  int w = 0, h = 0, n = 0;
  check(sf_video_info(v.get(), &w, &h, &n, nullptr));
  double peak = 0.0;
  for (int t = 0; t < n; ++t) {
    double dx = 0.0, dy = 0.0;
    check(sf_video_truth(v.get(), t, &dx, &dy));
    peak = std::max(peak, std::hypot(dx, dy));
  }
  return {{"width", w}, {"height", h}, {"frames", n}, {"peak_displacement", peak}};
}

json run_extract(const ExtractArgs& a, const Globals&) {
  const auto xy = parse_pixels(a.pixels);
  Video v;
  load_video(a.video, a.truth, a.downsample, v);
  const sf_phase_options po = a.phase.options();
  Estimator est;
  check(sf_estimator_phase(&po, est.out()));
  Fields f;
  check(sf_estimator_run(est.get(), v.get(), f.out()));
  json s = write_field_outputs(f.get(), v.get(), xy, a.fields, a.out);
  s["estimator"] = sf_estimator_name(est.get());
  return s;
}

json run_dataset(const DatasetArgs& a, const Globals& g) {
  Video v;
  load_video(a.video, "", 0, v);
  sf_dataset_options o;
  sf_dataset_options_default(&o);
  o.sections = a.sections;
  o.frames_per_section = a.frames_per_section;
  o.first_frame = a.first_frame;
  o.train_boxes = a.train_boxes;
  o.validation_boxes = a.val_boxes;
  o.test_boxes = a.test_boxes;
  o.include_flipped = a.flip ? 1 : 0;
  o.seed = a.seed;
  o.train_fraction = a.train_frac;
  o.validation_fraction = a.val_frac;
  o.phase = a.phase.options();
  sf_dataset_summary s{};
  check(sf_dataset_build(v.get(), &o, a.out.c_str(), effective_threads(g), &s));
  return {{"train_pairs", s.train_pairs},
          {"validation_pairs", s.validation_pairs},
          {"test_pairs", s.test_pairs},
          {"crop_plans", s.plans},
          {"out_of_range_labels", s.out_of_range}};
}

void print_epoch(const sf_epoch_report* r, void*) {
  std::fprintf(stderr, "epoch %d  train %.5f (full %.5f sparse %.5f)  val %.5f (full %.5f sparse %.5f)  %.1fs\n",
               r->epoch, r->train_total, r->train_full, r->train_sparse, r->val_total, r->val_full, r->val_sparse,
               r->seconds);
}

json run_train(const TrainArgs& a, const Globals& g) {
  std::string tdir = a.train_dir, vdir = a.val_dir;
  if (!a.data.empty()) {
    if (tdir.empty()) tdir = (fs::path(a.data) / "train").string();
    if (vdir.empty()) vdir = (fs::path(a.data) / "validation").string();
  }
  if (tdir.empty() || vdir.empty()) throw UsageFailure("train needs --data or both --train-dir and --val-dir");
  if (a.sparse_norm != "N" && a.sparse_norm != "M") throw UsageFailure("--sparse-norm must be N or M");
  const fs::path out(a.out);
  const std::string ckpt = (out / "best.sfck").string();
  const std::string log = (out / "train_log.csv").string();
  sf_train_options o;
  sf_train_options_default(&o);
  o.variant = parse_variant(a.variant);
  sf_arch_options arch;
  check(sf_arch_options_default(o.variant, &arch));
  arch.share_stream_weights = a.share_weights ? 1 : 0;
  o.arch = &arch;
  o.batch_size = a.batch;
  o.epochs = a.epochs;
  o.learning_rate = a.lr;
  o.beta1 = a.beta1;
  o.beta2 = a.beta2;
  o.eps = a.eps;
  o.seed = a.seed;
  o.mask_loss_enabled = a.mask_loss ? 1 : 0;
  o.sparse_norm = a.sparse_norm == "M" ? SF_SPARSE_NORM_M : SF_SPARSE_NORM_N;
  o.threads = effective_threads(g);
  o.deterministic = g.deterministic ? 1 : 0;
  o.max_train_samples = a.max_train;
  o.checkpoint_path = ckpt.c_str();
  o.log_path = log.c_str();
  Network best;
  sf_train_summary s{};
  check(sf_train(tdir.c_str(), vdir.c_str(), &o, print_epoch, nullptr, best.out(), &s));
  std::size_t nparams = 0, nfilters = 0;
  check(sf_network_info(best.get(), nullptr, &nparams));
  check(sf_network_export_filters(best.get(), (out / "filters").string().c_str(), &nfilters));
  return {{"variant", variant_label(o.variant)},
          {"param_count", nparams},
          {"train_samples", s.train_samples},
          {"validation_samples", s.validation_samples},
          {"epochs_run", s.epochs_run},
          {"best_epoch", s.best_epoch},
          {"best_validation_loss", num(s.best_validation_loss)},
          {"checkpoint", ckpt},
          {"filters_exported", nfilters}};
}

json run_infer(const InferArgs& a, const Globals& g) {
  if (a.checkpoint.empty()) throw UsageFailure("--checkpoint is required");
  const auto xy = parse_pixels(a.pixels);
  Network net;
  check(sf_network_load(a.checkpoint.c_str(), net.out()));
  Video v;
  load_video(a.video, a.truth, a.downsample, v);
  const sf_phase_options po = a.phase.options();
  Estimator est;
  check(sf_estimator_network(net.get(), &po, effective_threads(g), est.out()));
  Fields f;
  check(sf_estimator_run(est.get(), v.get(), f.out()));
  json s = write_field_outputs(f.get(), v.get(), xy, a.fields, a.out);
  s["estimator"] = sf_estimator_name(est.get());
  return s;
}

json run_eval(const EvalArgs& a, const Globals& g) {
  if (a.checkpoint.empty()) throw UsageFailure("--checkpoint is required");
  if (a.data.empty() && a.video.empty()) throw UsageFailure("eval needs --data and/or --video");
  if (a.coefficients.empty()) throw UsageFailure("--coefficients must not be empty");
  const auto xy = parse_pixels(a.pixels);
  const fs::path out(a.out);
  Network net;
  check(sf_network_load(a.checkpoint.c_str(), net.out()));
  const sf_phase_options po = a.phase.options();
  json s;
  sf_variant variant;
  std::size_t nparams = 0;
  check(sf_network_info(net.get(), &variant, &nparams));
  s["variant"] = variant_label(variant);
  s["param_count"] = nparams;
  if (!a.data.empty()) {
    sf_dataset_eval r{};
    std::vector<double> mae(a.coefficients.size());
    std::vector<std::size_t> cnt(a.coefficients.size());
    check(sf_evaluate_dataset(net.get(), a.data.c_str(), &po, effective_threads(g), a.coefficients.data(),
                              a.coefficients.size(), &r, mae.data(), cnt.data()));
    json d;
    d["samples"] = r.samples;
    d["mae_full_u"] = num(r.full_u);
    d["mae_full_v"] = num(r.full_v);
    d["mae_interior_u"] = num(r.interior_u);
    d["mae_interior_v"] = num(r.interior_v);
    d["mae_masked_u"] = num(r.masked_u);
    d["mae_masked_v"] = num(r.masked_v);
    d["mae_masked"] = num(r.masked);
    d["masked_count"] = r.masked_count;
    d["loss_full"] = num(r.loss_full);
    d["loss_sparse"] = num(r.loss_sparse);
    d["loss_total"] = num(r.loss_total);
    std::ofstream csv(out / "dataset_sweep.csv");
    if (!csv) throw RuntimeFailure("cli: cannot write " + (out / "dataset_sweep.csv").string());
    csv << "coefficient,pixel_count,mae\n";
    json sweep = json::array();
    for (std::size_t k = 0; k < mae.size(); ++k) {
      char line[96];
      std::snprintf(line, sizeof line, "%.9g,%zu,%.9g\n", a.coefficients[k], cnt[k], mae[k]);
      csv << line;
      sweep.push_back({{"coefficient", a.coefficients[k]}, {"pixel_count", cnt[k]}, {"mae", num(mae[k])}});
    }
    d["sweep"] = sweep;
    s["dataset"] = d;
  }
  if (!a.video.empty()) {
    Video v;
    load_video(a.video, a.truth, a.downsample, v);
    if (!sf_video_has_truth(v.get())) throw UsageFailure("--video evaluation needs --truth");
    Estimator net_est, phase_est;
    check(sf_estimator_network(net.get(), &po, effective_threads(g), net_est.out()));
    check(sf_estimator_phase(&po, phase_est.out()));
    Fields nf, pf;
    check(sf_estimator_run(net_est.get(), v.get(), nf.out()));
    check(sf_estimator_run(phase_est.get(), v.get(), pf.out()));
    json vj;
    vj["network"] = fields_vs_truth(nf.get(), v.get(), a.phase, a.coefficients, out / "video_sweep.csv");
    vj["phase"] = fields_vs_truth(pf.get(), v.get(), a.phase, a.coefficients, out / "video_sweep_phase.csv");
    if (!xy.empty()) {
      check(sf_fields_write_time_history(nf.get(), v.get(), xy.data(), xy.size() / 2,
                                         (out / "time_history.csv").string().c_str()));
      json rms = json::array();
      for (std::size_t i = 0; i < xy.size(); i += 2) {
        double nu = 0.0, nv = 0.0, pu = 0.0, pv = 0.0;
        check(sf_fields_rms_vs_truth(nf.get(), v.get(), xy[i], xy[i + 1], &nu, &nv));
        check(sf_fields_rms_vs_truth(pf.get(), v.get(), xy[i], xy[i + 1], &pu, &pv));
        rms.push_back({{"x", xy[i]},
                       {"y", xy[i + 1]},
                       {"network_rms_u", nu},
                       {"network_rms_v", nv},
                       {"phase_rms_u", pu},
                       {"phase_rms_v", pv}});
      }
      vj["rms_vs_truth"] = rms;
    }
    s["video"] = vj;
  }
  if (a.filters) {
    std::size_t n = 0;
    check(sf_network_export_filters(net.get(), (out / "filters").string().c_str(), &n));
    s["filters_exported"] = n;
  }
  return s;
}

json run_bench(const BenchArgs& a, const Globals&) {
  Network net;
  if (!a.checkpoint.empty())
    check(sf_network_load(a.checkpoint.c_str(), net.out()));
  else
    check(sf_network_create(parse_variant(a.variant), nullptr, a.seed, net.out()));
  sf_bench_report r{};
  check(sf_benchmark(net.get(), a.pairs, a.seed, a.threads, &r));
  sf_variant variant;
  check(sf_network_info(net.get(), &variant, nullptr));
  json j = {{"variant", variant_label(variant)},
            {"param_count", r.param_count},
            {"n_pairs", r.n_pairs},
            {"threads", r.threads},
            {"net_ms_per_pair", r.net_ms_per_pair},
            {"net_pairs_per_second", r.net_pairs_per_second},
            {"phase_ms_per_pair", r.phase_ms_per_pair},
            {"phase_pairs_per_second", r.phase_pairs_per_second},
            {"speed_ratio", r.speed_ratio},
            {"target_net_ms_per_pair", 10.0},
            {"meets_target", r.net_ms_per_pair < 10.0}};
  std::fprintf(stderr, "network %.3f ms/pair, phase %.3f ms/pair\n", r.net_ms_per_pair, r.phase_ms_per_pair);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subflow: phase-based subpixel displacement extraction and SubFlowNet training"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Params global_params;
  global_params.add(&app, "threads", "--threads", g.threads, "Worker threads (0: SUBFLOW_THREADS or 1)");
  global_params.flag(&app, "deterministic", "--deterministic", g.deterministic,
                     "Single-threaded, bitwise-reproducible outputs");
  global_params.add(&app, "profile", "--profile", g.profile, "Parameter profile")
      ->check(CLI::IsMember({"paper", "desk"}));
  app.add_option("--config", g.config, "Rerun from a config.resolved.json (explicit flags still win)");

  std::map<std::string, Params> params;
  std::map<std::string, std::function<json()>> runners;

  SynthArgs sy;
  {
    auto* c = app.add_subcommand("synth", "Generate a synthetic vibration video with known motion");
    auto& p = params["synth"];
    p.add(c, "out", "-o,--out", sy.out, "Output directory");
    p.add(c, "seed", "--seed", sy.seed, "Random seed");
    p.add(c, "width", "--width", sy.width, "Frame width (px)");
    p.add(c, "height", "--height", sy.height, "Frame height (px)");
    p.add(c, "frames", "--frames", sy.frames, "Frame count");
    p.add(c, "fps", "--fps", sy.fps, "Frame rate (1/s)");
    p.add(c, "texture", "--texture", sy.texture, "Texture kind")
        ->check(CLI::IsMember({"filtered-noise", "bars", "blobs"}));
    p.add(c, "tex_wavelength", "--tex-wavelength", sy.tex_wavelength, "Texture spectral wavelength (px)");
    p.add(c, "tex_sigma", "--tex-sigma", sy.tex_sigma, "Texture passband width (px)");
    p.add(c, "motion", "--motion", sy.motion, "Motion signal")
        ->check(CLI::IsMember({"zero", "sine", "damped-sine", "multi-sine"}));
    p.add(c, "amp", "--amp", sy.amp, "Motion amplitude (px)");
    p.add(c, "freq", "--freq", sy.freq, "Motion frequency (Hz)");
    p.add(c, "damping", "--damping", sy.damping, "Damping ratio for damped-sine");
    p.add(c, "direction", "--direction", sy.direction, "Motion direction (rad from +x)");
    p.add(c, "noise", "--noise", sy.noise, "Additive Gaussian noise sigma");
    p.add(c, "downsample", "--downsample", sy.downsample, "Blur+downsample levels after generation");
    p.flag(c, "pgm", "--pgm", sy.pgm, "Also write an 8-bit PGM sequence");
    runners["synth"] = [&] { return run_synth(sy, g); };
  }
  ExtractArgs ex;
  {
    auto* c = app.add_subcommand("extract", "Phase-based displacement fields and time histories");
    auto& p = params["extract"];
    p.add(c, "video", "-v,--video", ex.video, "Video: raw_f32 file or PGM directory");
    p.add(c, "truth", "--truth", ex.truth, "Known-motion CSV for RMS reporting");
    p.add(c, "out", "-o,--out", ex.out, "Output directory");
    p.add(c, "pixels", "--pixel", ex.pixels, "Time-history pixel x,y (repeatable)");
    p.add(c, "downsample", "--downsample", ex.downsample, "Blur+downsample levels before extraction");
    p.flag(c, "fields", "--fields,!--no-fields", ex.fields, "Write per-frame field CSVs");
    ex.phase.bind(p, c);
    runners["extract"] = [&] { return run_extract(ex, g); };
  }
  DatasetArgs ds;
  {
    auto* c = app.add_subcommand("dataset", "Build labelled 48x48 pair shards from a video");
    auto& p = params["dataset"];
    p.add(c, "video", "-v,--video", ds.video, "Source video: raw_f32 file or PGM directory");
    p.add(c, "out", "-o,--out", ds.out, "Output directory");
    p.add(c, "seed", "--seed", ds.seed, "Crop seed");
    p.add(c, "sections", "--sections", ds.sections, "Temporal sections");
    p.add(c, "frames_per_section", "--frames-per-section", ds.frames_per_section, "Frames per section");
    p.add(c, "first_frame", "--first-frame", ds.first_frame, "Frame where section 0 starts");
    p.add(c, "train_boxes", "--train-boxes", ds.train_boxes, "Train boxes per section");
    p.add(c, "val_boxes", "--val-boxes", ds.val_boxes, "Validation boxes per section");
    p.add(c, "test_boxes", "--test-boxes", ds.test_boxes, "Test boxes per section");
    p.flag(c, "flip", "--flip,!--no-flip", ds.flip, "Add transposed copies");
    p.add(c, "train_frac", "--train-frac", ds.train_frac, "Train band end (fraction of width)");
    p.add(c, "val_frac", "--val-frac", ds.val_frac, "Validation band end (fraction of width)");
    ds.phase.bind(p, c);
    runners["dataset"] = [&] { return run_dataset(ds, g); };
  }
  TrainArgs tr;
  {
    auto* c = app.add_subcommand("train", "Train a SubFlowNet on dataset shards");
    auto& p = params["train"];
    p.add(c, "data", "-d,--data", tr.data, "Dataset directory holding train/ and validation/");
    p.add(c, "train_dir", "--train-dir", tr.train_dir, "Train shard directory");
    p.add(c, "val_dir", "--val-dir", tr.val_dir, "Validation shard directory");
    p.add(c, "out", "-o,--out", tr.out, "Output directory");
    p.add(c, "variant", "--variant", tr.variant, "S or C")->check(CLI::IsMember({"S", "C", "SubFlowNetS", "SubFlowNetC"}));
    p.add(c, "epochs", "--epochs", tr.epochs, "Epochs");
    p.add(c, "batch", "--batch", tr.batch, "Batch size");
    p.add(c, "lr", "--lr", tr.lr, "Adam learning rate");
    p.add(c, "beta1", "--beta1", tr.beta1, "Adam beta1");
    p.add(c, "beta2", "--beta2", tr.beta2, "Adam beta2");
    p.add(c, "eps", "--eps", tr.eps, "Adam epsilon");
    p.add(c, "seed", "--seed", tr.seed, "Initialization and shuffle seed");
    p.flag(c, "mask_loss", "--mask-loss,!--no-mask-loss", tr.mask_loss, "Sparse (masked) loss term");
    p.add(c, "sparse_norm", "--sparse-norm", tr.sparse_norm, "Sparse term prefactor: N (1/N) or M (1/M)")
        ->check(CLI::IsMember({"N", "M"}));
    p.add(c, "max_train", "--max-train", tr.max_train, "Use at most this many training pairs (0: all)");
    p.flag(c, "share_weights", "--share-weights", tr.share_weights, "SubFlowNetC streams share weights");
    runners["train"] = [&] { return run_train(tr, g); };
  }
  InferArgs in;
  {
    auto* c = app.add_subcommand("infer", "Network displacement fields and time histories");
    auto& p = params["infer"];
    p.add(c, "checkpoint", "-c,--checkpoint", in.checkpoint, "SFCK checkpoint");
    p.add(c, "video", "-v,--video", in.video, "Video: raw_f32 file or PGM directory");
    p.add(c, "truth", "--truth", in.truth, "Known-motion CSV for RMS reporting");
    p.add(c, "out", "-o,--out", in.out, "Output directory");
    p.add(c, "pixels", "--pixel", in.pixels, "Time-history pixel x,y (repeatable)");
    p.add(c, "downsample", "--downsample", in.downsample, "Blur+downsample levels before inference");
    p.flag(c, "fields", "--fields,!--no-fields", in.fields, "Write per-frame field CSVs");
    in.phase.bind(p, c);
    runners["infer"] = [&] { return run_infer(in, g); };
  }
  EvalArgs ev;
  {
    auto* c = app.add_subcommand("eval", "MAE and threshold sweeps against labels or known motion");
    auto& p = params["eval"];
    p.add(c, "checkpoint", "-c,--checkpoint", ev.checkpoint, "SFCK checkpoint");
    p.add(c, "data", "-d,--data", ev.data, "Shard directory evaluated against its labels");
    p.add(c, "video", "-v,--video", ev.video, "Video evaluated against known motion");
    p.add(c, "truth", "--truth", ev.truth, "Known-motion CSV for --video");
    p.add(c, "out", "-o,--out", ev.out, "Output directory");
    p.add(c, "pixels", "--pixel", ev.pixels, "Time-history pixel x,y (repeatable)");
    p.add(c, "coefficients", "--coefficients", ev.coefficients, "Threshold sweep coefficients C")->delimiter(',');
    p.add(c, "downsample", "--downsample", ev.downsample, "Blur+downsample levels for --video");
    p.flag(c, "filters", "--filters", ev.filters, "Export first-layer filters");
    ev.phase.bind(p, c);
    runners["eval"] = [&] { return run_eval(ev, g); };
  }
  BenchArgs be;
  {
    auto* c = app.add_subcommand("bench", "Inference timing: network vs phase engine on 48x48 pairs");
    auto& p = params["bench"];
    p.add(c, "checkpoint", "-c,--checkpoint", be.checkpoint, "SFCK checkpoint (default: seeded network)");
    p.add(c, "variant", "--variant", be.variant, "S or C when no checkpoint is given")
        ->check(CLI::IsMember({"S", "C", "SubFlowNetS", "SubFlowNetC"}));
    p.add(c, "out", "-o,--out", be.out, "Output directory");
    p.add(c, "seed", "--seed", be.seed, "Seed for pairs and weights");
    p.add(c, "pairs", "--pairs", be.pairs, "Timed pairs (>= 10)");
    p.add(c, "bench_threads", "--bench-threads", be.threads, "Threads for timing");
    runners["bench"] = [&] { return run_bench(be, g); };
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "subflow: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    json config_params = json::object();
    if (!g.config.empty()) {
      const json cfg = read_json(g.config);
      if (cfg.value("subcommand", sub) != sub)
        throw UsageFailure("config is for '" + cfg.value("subcommand", std::string()) + "', not '" + sub + "'");
      if (cfg.contains("params")) config_params = cfg.at("params");
    }
    global_params.resolve(config_params, json::object());
    params[sub].resolve(config_params, profile_overrides(g.profile, sub));
    if (g.threads < 0) throw UsageFailure("--threads must be >= 0");

    json all = global_params.dump();
    const json sub_params = params[sub].dump();
    for (auto& [k, v] : sub_params.items()) all[k] = v;
    const fs::path out(all["out"].get<std::string>());
    ensure_dir(out);
    json resolved = {{"subcommand", sub}, {"version", sf_version()}, {"params", all}};
    write_json(resolved, out / "config.resolved.json");

    json summary = runners.at(sub)();
    json wrapped = {{"subcommand", sub}, {"version", sf_version()}, {"metrics", summary}};
    write_json(wrapped, out / "summary.json");
    std::cout << summary.dump(2) << '\n';
    return 0;
  } catch (const UsageFailure& e) {
    std::cerr << "subflow: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return 2;
  } catch (const RuntimeFailure& e) {
    std::cerr << "subflow: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "subflow: cli: " << e.what() << '\n';
    return 1;
  }
}
