#include "subflow/subflow.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <new>
#include <string>
#include <type_traits>
#include <vector>

#include "subflow/dataset.hpp"
#include "subflow/error.hpp"
#include "subflow/eval.hpp"
#include "subflow/nn.hpp"
#include "subflow/parallel.hpp"
#include "subflow/phase.hpp"
#include "subflow/synthetic.hpp"
#include "subflow/train.hpp"
#include "subflow/video_io.hpp"

#ifndef SUBFLOW_VERSION_STRING
#define SUBFLOW_VERSION_STRING "0.0.0"
#endif

using namespace subflow;

struct sf_video {
  FrameSequence seq;
  std::vector<Displacement> truth;
};

struct sf_fields {
  std::vector<MotionField> fields;
};

struct sf_estimator {
  std::unique_ptr<eval::Estimator> impl;
  std::string name;
};

struct sf_network {
  nn::NetworkParams<float> params;
};

namespace {

thread_local std::string g_last_error;

sf_status to_status(Errc c) {
  switch (c) {
    case Errc::io: return SF_ERR_IO;
    case Errc::format: return SF_ERR_FORMAT;
    case Errc::dimension: return SF_ERR_DIMENSION;
    case Errc::parameter: return SF_ERR_PARAMETER;
    case Errc::state: return SF_ERR_STATE;
    case Errc::empty_region: return SF_ERR_EMPTY_REGION;
    case Errc::numeric: return SF_ERR_NUMERIC;
  }
  return SF_ERR_INTERNAL;
}

template <typename Fn>
sf_status guard(Fn&& fn) {
  try {
    fn();
    return SF_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "subflow: out of memory";
    return SF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = std::string("subflow: ") + e.what();
    return SF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "subflow: unknown failure";
    return SF_ERR_INTERNAL;
  }
}

constexpr const char* kModule = "api";

void need(const void* p, const char* what) {
  if (!p) fail(Errc::parameter, kModule, std::string(what) + " is null");
}

PhaseConfig phase_config(const sf_phase_options* o) {
  PhaseConfig cfg;
  if (!o) return cfg;
  cfg.kernel_size = o->kernel_size;
  cfg.wavelength = o->wavelength;
  cfg.sigma = o->sigma;
  cfg.mask.coefficient = o->mask_coefficient;
  cfg.mask.top_count = o->top_count;
  cfg.mask.top_fraction = o->top_fraction;
  cfg.mask.border = o->border;
  return cfg;
}

nn::Variant to_variant(sf_variant v) {
  if (v == SF_SUBFLOWNET_S) return nn::Variant::subflownet_s;
  if (v == SF_SUBFLOWNET_C) return nn::Variant::subflownet_c;
  fail(Errc::parameter, kModule, "unknown variant " + std::to_string(static_cast<int>(v)));
}

sf_variant from_variant(nn::Variant v) { return v == nn::Variant::subflownet_s ? SF_SUBFLOWNET_S : SF_SUBFLOWNET_C; }

void export_arch(const nn::ArchConfig& a, sf_arch_options* o) {
  std::memset(o, 0, sizeof(*o));
  for (int i = 0; i < 4; ++i) o->encoder[i] = a.encoder[static_cast<std::size_t>(i)];
  for (int i = 0; i < 3; ++i) o->decoder[i] = a.decoder[static_cast<std::size_t>(i)];
  if (a.head.size() > 8) fail(Errc::parameter, kModule, "head has more than 8 layers");
  o->head_count = static_cast<int>(a.head.size());
  for (std::size_t i = 0; i < a.head.size(); ++i) o->head[i] = a.head[i];
  o->skip_full_resolution = a.skip_full_resolution ? 1 : 0;
  o->share_stream_weights = a.share_stream_weights ? 1 : 0;
}

nn::ArchConfig import_arch(nn::Variant v, const sf_arch_options* o) {
  nn::ArchConfig a = nn::default_arch(v);
  if (!o) return a;
  if (o->head_count < 0 || o->head_count > 8) fail(Errc::parameter, kModule, "head_count must be in [0, 8]");
  for (int i = 0; i < 4; ++i) a.encoder[static_cast<std::size_t>(i)] = o->encoder[i];
  for (int i = 0; i < 3; ++i) a.decoder[static_cast<std::size_t>(i)] = o->decoder[i];
  a.head.assign(o->head, o->head + o->head_count);
  a.skip_full_resolution = o->skip_full_resolution != 0;
  a.share_stream_weights = o->share_stream_weights != 0;
  return a;
}

void check_frame_count(const sf_video* v) {
  if (v->seq.empty()) fail(Errc::state, kModule, "video has no frames");
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

template <typename G>
void write_grid(const G& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      if (x) out << ',';
      if constexpr (std::is_same_v<typename decltype(g.data)::value_type, std::uint8_t>)
        out << static_cast<int>(g(x, y));
      else
        out << fmt(g(x, y));
    }
    out << '\n';
  }
  if (!out) fail(Errc::io, kModule, "failed writing " + path.string());
}

dataset::CropConfig crop_config(int width, int height, const sf_dataset_options* o) {
  if (!(o->train_fraction > 0.0 && o->train_fraction < o->validation_fraction && o->validation_fraction < 1.0))
    fail(Errc::parameter, kModule, "segment fractions must satisfy 0 < train < validation < 1");
  const int a = static_cast<int>(std::lround(o->train_fraction * width));
  const int b = static_cast<int>(std::lround(o->validation_fraction * width));
  dataset::CropConfig cfg;
  cfg.segments = {{dataset::Segment::train, {0, 0, a, height}},
                  {dataset::Segment::validation, {a, 0, b - a, height}},
                  {dataset::Segment::test, {b, 0, width - b, height}}};
  cfg.sections = o->sections;
  cfg.boxes_per_section = {{dataset::Segment::train, o->train_boxes},
                           {dataset::Segment::validation, o->validation_boxes},
                           {dataset::Segment::test, o->test_boxes}};
  cfg.include_flipped = o->include_flipped != 0;
  cfg.seed = o->seed;
  return cfg;
}

void fill_summary(const dataset::DatasetSummary& s, sf_dataset_summary* out) {
  auto get = [&](dataset::Segment seg) {
    auto it = s.pairs.find(seg);
    return it == s.pairs.end() ? std::size_t{0} : it->second;
  };
  out->train_pairs = get(dataset::Segment::train);
  out->validation_pairs = get(dataset::Segment::validation);
  out->test_pairs = get(dataset::Segment::test);
  out->plans = s.plans;
  out->out_of_range = s.out_of_range;
}

void fill_epoch(const train::EpochRecord& r, sf_epoch_report* e) {
  e->epoch = r.epoch;
  e->train_full = r.train.full_epe;
  e->train_sparse = r.train.sparse_epe;
  e->train_total = r.train.total;
  e->val_full = r.validation.full_epe;
  e->val_sparse = r.validation.sparse_epe;
  e->val_total = r.validation.total;
  e->seconds = r.seconds;
}

}  // namespace

extern "C" {

const char* sf_version(void) { return SUBFLOW_VERSION_STRING; }

const char* sf_last_error(void) { return g_last_error.c_str(); }

const char* sf_status_name(sf_status status) {
  switch (status) {
    case SF_OK: return "ok";
    case SF_ERR_IO: return "io";
    case SF_ERR_FORMAT: return "format";
    case SF_ERR_DIMENSION: return "dimension";
    case SF_ERR_PARAMETER: return "parameter";
    case SF_ERR_STATE: return "state";
    case SF_ERR_EMPTY_REGION: return "empty_region";
    case SF_ERR_NUMERIC: return "numeric";
    case SF_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int sf_resolve_threads(int requested) { return resolve_threads(requested); }

void sf_phase_options_default(sf_phase_options* opts) {
  if (!opts) return;
  const PhaseConfig cfg;
  opts->kernel_size = cfg.kernel_size;
  opts->wavelength = cfg.wavelength;
  opts->sigma = cfg.sigma;
  opts->mask_coefficient = cfg.mask.coefficient;
  opts->top_count = cfg.mask.top_count;
  opts->top_fraction = cfg.mask.top_fraction;
  opts->border = cfg.mask.border;
}

// ---- videos -----------------------------------------------------------------

void sf_synth_options_default(sf_synth_options* opts) {
  if (!opts) return;
  const MotionOptions m;
  const TextureOptions t;
  opts->seed = 0;
  opts->width = 48;
  opts->height = 48;
  opts->frames = m.frames;
  opts->frame_rate = m.frame_rate;
  opts->texture = SF_TEXTURE_FILTERED_NOISE;
  opts->texture_wavelength = t.wavelength;
  opts->texture_sigma = t.sigma;
  opts->motion = SF_MOTION_DAMPED_SINE;
  opts->amplitude = m.amplitude;
  opts->frequency = m.frequency;
  opts->damping = m.damping;
  opts->direction = m.direction;
  opts->noise_sigma = 0.0;
  opts->downsample_levels = 0;
}

sf_status sf_video_synthesize(const sf_synth_options* o, sf_video** out) {
  return guard([&] {
    need(o, "options");
    need(out, "output");
    if (o->downsample_levels < 0) fail(Errc::parameter, kModule, "downsample_levels must be >= 0");
    TextureKind tk;
    switch (o->texture) {
      case SF_TEXTURE_FILTERED_NOISE: tk = TextureKind::filtered_noise; break;
      case SF_TEXTURE_BARS: tk = TextureKind::bars; break;
      case SF_TEXTURE_BLOBS: tk = TextureKind::blobs; break;
      default: fail(Errc::parameter, kModule, "unknown texture kind");
    }
    MotionOptions m;
    switch (o->motion) {
      case SF_MOTION_ZERO: m.kind = MotionKind::zero; break;
      case SF_MOTION_SINE: m.kind = MotionKind::sine; break;
      case SF_MOTION_DAMPED_SINE: m.kind = MotionKind::damped_sine; break;
      case SF_MOTION_MULTI_SINE: m.kind = MotionKind::multi_sine; break;
      default: fail(Errc::parameter, kModule, "unknown motion kind");
    }
    m.frames = o->frames;
    m.amplitude = o->amplitude;
    m.frequency = o->frequency;
    m.frame_rate = o->frame_rate;
    m.damping = o->damping;
    m.direction = o->direction;
    m.seed = o->seed;
    const Frame texture = generate_texture(o->seed, o->width, o->height, tk, {o->texture_wavelength, o->texture_sigma});
    VibrationVideo vib =
        generate_vibration_sequence(texture, make_motion(m), o->frame_rate, o->noise_sigma, o->seed ^ 0x5eedULL);
    auto v = std::make_unique<sf_video>();
    v->truth = std::move(vib.truth);
    if (o->downsample_levels > 0) {
      v->seq = blur_downsample(vib.video, o->downsample_levels);
      const double s = std::ldexp(1.0, -o->downsample_levels);
      for (auto& d : v->truth) d = {d.dx * s, d.dy * s};
    } else {
      v->seq = std::move(vib.video);
    }
    *out = v.release();
  });
}

sf_status sf_video_load(const char* path, sf_frame_format format, sf_video** out) {
  return guard([&] {
    need(path, "path");
    need(out, "output");
    const FrameFormat f = format == SF_FORMAT_RAW_F32 ? FrameFormat::raw_f32 : FrameFormat::pgm_sequence;
    auto v = std::make_unique<sf_video>();
    v->seq = load_frames(path, f);
    *out = v.release();
  });
}

sf_status sf_video_save(const sf_video* video, const char* path, sf_frame_format format) {
  return guard([&] {
    need(video, "video");
    need(path, "path");
    if (format == SF_FORMAT_RAW_F32)
      write_frames(video->seq, path);
    else
      write_pgm_sequence(video->seq, path);
  });
}

sf_status sf_video_info(const sf_video* video, int* width, int* height, int* frames, double* frame_rate) {
  return guard([&] {
    need(video, "video");
    if (width) *width = video->seq.width();
    if (height) *height = video->seq.height();
    if (frames) *frames = static_cast<int>(video->seq.size());
    if (frame_rate) *frame_rate = video->seq.frame_rate;
  });
}

sf_status sf_video_frame(const sf_video* video, int index, double* buffer, size_t capacity) {
  return guard([&] {
    need(video, "video");
    need(buffer, "buffer");
    if (index < 0 || static_cast<std::size_t>(index) >= video->seq.size())
      fail(Errc::parameter, kModule, "frame index " + std::to_string(index) + " out of range");
    const auto& d = video->seq.frames[static_cast<std::size_t>(index)].luma.data;
    if (capacity < d.size()) fail(Errc::dimension, kModule, "buffer too small");
    std::copy(d.begin(), d.end(), buffer);
  });
}

sf_status sf_video_downsample(const sf_video* video, int levels, sf_video** out) {
  return guard([&] {
    need(video, "video");
    need(out, "output");
    if (levels < 0) fail(Errc::parameter, kModule, "levels must be >= 0");
    auto v = std::make_unique<sf_video>();
    v->seq = blur_downsample(video->seq, levels);
    const double s = std::ldexp(1.0, -levels);
    for (const auto& d : video->truth) v->truth.push_back({d.dx * s, d.dy * s});
    *out = v.release();
  });
}

int sf_video_has_truth(const sf_video* video) { return video && !video->truth.empty() ? 1 : 0; }

sf_status sf_video_truth(const sf_video* video, int index, double* dx, double* dy) {
  return guard([&] {
    need(video, "video");
    if (video->truth.empty()) fail(Errc::state, kModule, "video has no known motion");
    if (index < 0 || static_cast<std::size_t>(index) >= video->truth.size())
      fail(Errc::parameter, kModule, "truth index " + std::to_string(index) + " out of range");
    const auto& d = video->truth[static_cast<std::size_t>(index)];
    if (dx) *dx = d.dx - video->truth[0].dx;
    if (dy) *dy = d.dy - video->truth[0].dy;
  });
}

sf_status sf_video_save_truth(const sf_video* video, const char* csv_path) {
  return guard([&] {
    need(video, "video");
    need(csv_path, "path");
    if (video->truth.empty()) fail(Errc::state, kModule, "video has no known motion");
    write_motion_csv({video->truth, ""}, csv_path);
  });
}

sf_status sf_video_load_truth(sf_video* video, const char* csv_path, double scale) {
  return guard([&] {
    need(video, "video");
    need(csv_path, "path");
    MotionSignal s = read_motion_csv(csv_path);
    if (s.samples.size() != video->seq.size())
      fail(Errc::dimension, kModule,
           "truth has " + std::to_string(s.samples.size()) + " rows for " + std::to_string(video->seq.size()) +
               " frames");
    for (auto& d : s.samples) d = {d.dx * scale, d.dy * scale};
    video->truth = std::move(s.samples);
  });
}

void sf_video_free(sf_video* video) { delete video; }

// ---- estimators -------------------------------------------------------------

sf_status sf_estimator_phase(const sf_phase_options* opts, sf_estimator** out) {
  return guard([&] {
    need(out, "output");
    auto e = std::make_unique<sf_estimator>();
    e->impl = std::make_unique<eval::PhaseEstimator>(phase_config(opts));
    e->name = e->impl->name();
    *out = e.release();
  });
}

sf_status sf_estimator_network(const sf_network* net, const sf_phase_options* opts, int threads, sf_estimator** out) {
  return guard([&] {
    need(net, "network");
    need(out, "output");
    auto e = std::make_unique<sf_estimator>();
    e->impl = std::make_unique<eval::NetworkEstimator>(net->params, phase_config(opts), resolve_threads(threads));
    e->name = e->impl->name();
    *out = e.release();
  });
}

const char* sf_estimator_name(const sf_estimator* est) { return est ? est->name.c_str() : ""; }

sf_status sf_estimator_run(sf_estimator* est, const sf_video* video, sf_fields** out) {
  return guard([&] {
    need(est, "estimator");
    need(video, "video");
    need(out, "output");
    auto f = std::make_unique<sf_fields>();
    f->fields = eval::extract_fields(*est->impl, video->seq);
    *out = f.release();
  });
}

void sf_estimator_free(sf_estimator* est) { delete est; }

// ---- fields -----------------------------------------------------------------

int sf_fields_count(const sf_fields* fields) { return fields ? static_cast<int>(fields->fields.size()) : 0; }

sf_status sf_fields_shape(const sf_fields* fields, int* width, int* height) {
  return guard([&] {
    need(fields, "fields");
    if (fields->fields.empty()) fail(Errc::state, kModule, "no fields");
    if (width) *width = fields->fields[0].width();
    if (height) *height = fields->fields[0].height();
  });
}

sf_status sf_fields_get(const sf_fields* fields, int index, double* u, double* v, uint8_t* mask_u, uint8_t* mask_v,
                        size_t capacity) {
  return guard([&] {
    need(fields, "fields");
    if (index < 0 || static_cast<std::size_t>(index) >= fields->fields.size())
      fail(Errc::parameter, kModule, "field index " + std::to_string(index) + " out of range");
    const MotionField& m = fields->fields[static_cast<std::size_t>(index)];
    if (capacity < m.u.size()) fail(Errc::dimension, kModule, "buffer too small");
    if (u) std::copy(m.u.data.begin(), m.u.data.end(), u);
    if (v) std::copy(m.v.data.begin(), m.v.data.end(), v);
    if (mask_u) std::copy(m.mask_u.mask.data.begin(), m.mask_u.mask.data.end(), mask_u);
    if (mask_v) std::copy(m.mask_v.mask.data.begin(), m.mask_v.mask.data.end(), mask_v);
  });
}

sf_status sf_fields_out_of_range(const sf_fields* fields, size_t* count) {
  return guard([&] {
    need(fields, "fields");
    need(count, "count");
    std::size_t n = 0;
    for (const auto& m : fields->fields) n += m.out_of_range_u + m.out_of_range_v;
    *count = n;
  });
}

sf_status sf_fields_write_csv(const sf_fields* fields, const char* dir) {
  return guard([&] {
    need(fields, "fields");
    need(dir, "dir");
    const std::filesystem::path d(dir);
    std::error_code ec;
    std::filesystem::create_directories(d, ec);
    if (ec) fail(Errc::io, kModule, "cannot create " + d.string() + ": " + ec.message());
    char name[32];
    for (std::size_t i = 0; i < fields->fields.size(); ++i) {
      const MotionField& m = fields->fields[i];
      const int frame = static_cast<int>(i + 1);
      std::snprintf(name, sizeof name, "u_%05d.csv", frame);
      write_grid(m.u, d / name);
      std::snprintf(name, sizeof name, "v_%05d.csv", frame);
      write_grid(m.v, d / name);
      std::snprintf(name, sizeof name, "mask_u_%05d.csv", frame);
      write_grid(m.mask_u.mask, d / name);
      std::snprintf(name, sizeof name, "mask_v_%05d.csv", frame);
      write_grid(m.mask_v.mask, d / name);
    }
  });
}

sf_status sf_fields_write_time_history(const sf_fields* fields, const sf_video* video, const int* xy, size_t n_pixels,
                                       const char* csv_path) {
  return guard([&] {
    need(fields, "fields");
    need(video, "video");
    need(csv_path, "path");
    if (n_pixels > 0) need(xy, "pixel list");
    std::vector<eval::Pixel> px;
    for (std::size_t i = 0; i < n_pixels; ++i) px.push_back({xy[2 * i], xy[2 * i + 1]});
    eval::write_time_history_csv(eval::histories_from_fields(fields->fields, video->seq, px), csv_path);
  });
}

sf_status sf_fields_rms_vs_truth(const sf_fields* fields, const sf_video* video, int x, int y, double* rms_u,
                                 double* rms_v) {
  return guard([&] {
    need(fields, "fields");
    need(video, "video");
    if (video->truth.empty()) fail(Errc::state, kModule, "video has no known motion");
    const auto h = eval::histories_from_fields(fields->fields, video->seq, {{x, y}});
    const eval::RmsResult r = eval::rms_error(h.front(), video->truth);
    if (rms_u) *rms_u = r.u;
    if (rms_v) *rms_v = r.v;
  });
}

sf_status sf_fields_truth(const sf_video* video, const sf_fields* masks, sf_fields** out) {
  return guard([&] {
    need(video, "video");
    need(masks, "masks");
    need(out, "output");
    if (video->truth.empty()) fail(Errc::state, kModule, "video has no known motion");
    if (masks->fields.size() + 1 != video->seq.size() || video->truth.size() != video->seq.size())
      fail(Errc::dimension, kModule, "field count does not match the video");
    auto f = std::make_unique<sf_fields>();
    const Displacement d0 = video->truth[0];
    for (std::size_t i = 0; i < masks->fields.size(); ++i) {
      const Displacement d = video->truth[i + 1];
      f->fields.push_back(eval::uniform_field({d.dx - d0.dx, d.dy - d0.dy}, masks->fields[i]));
    }
    *out = f.release();
  });
}

sf_status sf_fields_mae(const sf_fields* pred, const sf_fields* truth, sf_region region, double* mae_u, double* mae_v,
                        size_t* count_u, size_t* count_v) {
  return guard([&] {
    need(pred, "prediction");
    need(truth, "truth");
    if (pred->fields.size() != truth->fields.size())
      fail(Errc::dimension, kModule, "prediction and truth field counts differ");
    if (pred->fields.empty()) fail(Errc::empty_region, kModule, "no fields");
    const eval::Region r = region == SF_REGION_FULL       ? eval::Region::full
                           : region == SF_REGION_INTERIOR ? eval::Region::interior
                                                          : eval::Region::masked;
    double su = 0.0, sv = 0.0;
    std::size_t nu = 0, nv = 0;
    for (std::size_t i = 0; i < pred->fields.size(); ++i) {
      const MotionField& p = pred->fields[i];
      const MotionField& t = truth->fields[i];
      if (!p.u.same_shape(t.u)) fail(Errc::dimension, kModule, "field shapes differ");
      // Pool sums over every field; a field with an empty mask contributes nothing.
      for (int y = 0; y < p.height(); ++y)
        for (int x = 0; x < p.width(); ++x) {
          bool in_u = true, in_v = true;
          if (r == eval::Region::interior) {
            const int b = eval::kInteriorBorder;
            in_u = in_v = x >= b && y >= b && x < p.width() - b && y < p.height() - b;
          } else if (r == eval::Region::masked) {
            in_u = t.mask_u.mask(x, y) != 0;
            in_v = t.mask_v.mask(x, y) != 0;
          }
          if (in_u) {
            su += std::abs(t.u(x, y) - p.u(x, y));
            ++nu;
          }
          if (in_v) {
            sv += std::abs(t.v(x, y) - p.v(x, y));
            ++nv;
          }
        }
    }
    if (nu + nv == 0) fail(Errc::empty_region, kModule, std::string(eval::region_name(r)) + " region is empty");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (mae_u) *mae_u = nu ? su / static_cast<double>(nu) : nan;
    if (mae_v) *mae_v = nv ? sv / static_cast<double>(nv) : nan;
    if (count_u) *count_u = nu;
    if (count_v) *count_v = nv;
  });
}

sf_status sf_fields_sweep(const sf_fields* pred, const sf_fields* truth, const sf_video* video,
                          const sf_phase_options* opts, const double* coefficients, size_t n, double* mae_out,
                          size_t* count_out) {
  return guard([&] {
    need(pred, "prediction");
    need(truth, "truth");
    need(video, "video");
    if (n == 0) fail(Errc::parameter, kModule, "coefficient list is empty");
    need(coefficients, "coefficients");
    check_frame_count(video);
    if (pred->fields.size() != truth->fields.size())
      fail(Errc::dimension, kModule, "prediction and truth field counts differ");
    const PhaseConfig cfg = phase_config(opts);
    const PhaseEngine engine(cfg);
    const PhaseAnalysis ref = engine.analyze_frame(video->seq.frames[0]);
    const std::vector<double> coefs(coefficients, coefficients + n);
    std::vector<double> sum(n, 0.0);
    std::vector<std::size_t> cnt(n, 0);
    for (std::size_t i = 0; i < pred->fields.size(); ++i) {
      const eval::SweepResult s = eval::threshold_sweep(pred->fields[i], truth->fields[i], ref, coefs, cfg.mask);
      for (std::size_t k = 0; k < n; ++k) {
        const auto& e = s.entries[k];
        if (e.mae) sum[k] += *e.mae * static_cast<double>(e.count());
        cnt[k] += e.count();
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (mae_out)
        mae_out[k] = cnt[k] ? sum[k] / static_cast<double>(cnt[k]) : std::numeric_limits<double>::quiet_NaN();
      if (count_out) count_out[k] = cnt[k];
    }
  });
}

void sf_fields_free(sf_fields* fields) { delete fields; }

// ---- networks ---------------------------------------------------------------

sf_status sf_arch_options_default(sf_variant variant, sf_arch_options* opts) {
  return guard([&] {
    need(opts, "options");
    export_arch(nn::default_arch(to_variant(variant)), opts);
  });
}

sf_status sf_network_create(sf_variant variant, const sf_arch_options* arch, uint64_t seed, sf_network** out) {
  return guard([&] {
    need(out, "output");
    const nn::Variant v = to_variant(variant);
    auto n = std::make_unique<sf_network>();
    n->params = nn::build_network<float>(v, import_arch(v, arch));
    nn::init_uniform(n->params, seed);
    *out = n.release();
  });
}

sf_status sf_network_load(const char* path, sf_network** out) {
  return guard([&] {
    need(path, "path");
    need(out, "output");
    auto n = std::make_unique<sf_network>();
    n->params = nn::load_checkpoint(path);
    *out = n.release();
  });
}

sf_status sf_network_save(const sf_network* net, const char* path) {
  return guard([&] {
    need(net, "network");
    need(path, "path");
    nn::save_checkpoint(net->params, path);
  });
}

sf_status sf_network_info(const sf_network* net, sf_variant* variant, size_t* param_count) {
  return guard([&] {
    need(net, "network");
    if (variant) *variant = from_variant(net->params.variant);
    if (param_count) *param_count = net->params.total_params();
  });
}

sf_status sf_network_arch(const sf_network* net, sf_arch_options* arch) {
  return guard([&] {
    need(net, "network");
    need(arch, "arch");
    export_arch(net->params.arch, arch);
  });
}

sf_status sf_network_set_zero(sf_network* net) {
  return guard([&] {
    need(net, "network");
    net->params.zero();
  });
}

sf_status sf_network_export_filters(const sf_network* net, const char* dir, size_t* count) {
  return guard([&] {
    need(net, "network");
    need(dir, "dir");
    const auto files = eval::export_learned_filters(net->params, dir);
    if (count) *count = files.size();
  });
}

sf_status sf_network_predict(const sf_network* net, const double* reference, const double* current, int width,
                             int height, double* u, double* v) {
  return guard([&] {
    need(net, "network");
    need(reference, "reference");
    need(current, "current");
    if (width <= 0 || height <= 0) fail(Errc::parameter, kModule, "frame size must be positive");
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    nn::Tensor4<float> r(1, 1, height, width), c(1, 1, height, width);
    for (std::size_t i = 0; i < n; ++i) {
      r.data[i] = static_cast<float>(reference[i]);
      c.data[i] = static_cast<float>(current[i]);
    }
    const nn::Tensor4<float> out = nn::forward<float>(net->params, r, c, nullptr, 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (u) u[i] = out.data[i];
      if (v) v[i] = out.data[n + i];
    }
  });
}

void sf_network_free(sf_network* net) { delete net; }

// ---- datasets ---------------------------------------------------------------

void sf_dataset_options_default(sf_dataset_options* opts) {
  if (!opts) return;
  const dataset::CropConfig crop;
  const dataset::PairConfig pairs;
  opts->sections = crop.sections;
  opts->frames_per_section = pairs.frames_per_section;
  opts->first_frame = pairs.first_frame;
  opts->train_boxes = crop.boxes_per_section.at(dataset::Segment::train);
  opts->validation_boxes = crop.boxes_per_section.at(dataset::Segment::validation);
  opts->test_boxes = crop.boxes_per_section.at(dataset::Segment::test);
  opts->include_flipped = crop.include_flipped ? 1 : 0;
  opts->seed = crop.seed;
  opts->train_fraction = 0.7;
  opts->validation_fraction = 0.85;
  sf_phase_options_default(&opts->phase);
}

sf_status sf_dataset_build(const sf_video* video, const sf_dataset_options* opts, const char* out_dir, int threads,
                           sf_dataset_summary* summary) {
  return guard([&] {
    need(video, "video");
    need(opts, "options");
    need(out_dir, "output dir");
    check_frame_count(video);
    dataset::PairConfig pairs;
    pairs.frames_per_section = opts->frames_per_section;
    pairs.first_frame = opts->first_frame;
    pairs.phase = phase_config(&opts->phase);
    const auto s = dataset::build_dataset(video->seq, crop_config(video->seq.width(), video->seq.height(), opts),
                                          pairs, out_dir, resolve_threads(threads));
    if (summary) fill_summary(s, summary);
  });
}

sf_status sf_dataset_plan_count(int width, int height, const sf_dataset_options* opts, sf_dataset_summary* summary) {
  return guard([&] {
    need(opts, "options");
    need(summary, "summary");
    const auto plans = dataset::plan_crops(width, height, crop_config(width, height, opts));
    dataset::DatasetSummary s;
    s.plans = plans.size();
    for (auto seg : {dataset::Segment::train, dataset::Segment::validation, dataset::Segment::test}) {
      std::vector<dataset::CropPlan> sub;
      for (const auto& p : plans)
        if (p.segment == seg) sub.push_back(p);
      s.pairs[seg] = dataset::count_pairs(sub, opts->frames_per_section);
    }
    fill_summary(s, summary);
  });
}

sf_status sf_dataset_count(const char* dir, size_t* count) {
  return guard([&] {
    need(dir, "dir");
    need(count, "count");
    *count = dataset::read_dataset(dir).size();
  });
}

// ---- training ---------------------------------------------------------------

void sf_train_options_default(sf_train_options* opts) {
  if (!opts) return;
  const train::TrainConfig cfg;
  opts->variant = from_variant(cfg.variant);
  opts->batch_size = cfg.batch_size;
  opts->epochs = cfg.epochs;
  opts->learning_rate = cfg.adam.learning_rate;
  opts->beta1 = cfg.adam.beta1;
  opts->beta2 = cfg.adam.beta2;
  opts->eps = cfg.adam.eps;
  opts->seed = cfg.seed;
  opts->mask_loss_enabled = cfg.loss.mask_loss_enabled ? 1 : 0;
  opts->sparse_norm = SF_SPARSE_NORM_N;
  opts->threads = 0;
  opts->deterministic = 0;
  opts->max_train_samples = 0;
  opts->checkpoint_path = nullptr;
  opts->log_path = nullptr;
  opts->arch = nullptr;
}

sf_status sf_train(const char* train_dir, const char* val_dir, const sf_train_options* opts,
                   sf_epoch_callback callback, void* user, sf_network** best, sf_train_summary* summary) {
  return guard([&] {
    need(train_dir, "train dir");
    need(val_dir, "validation dir");
    need(opts, "options");
    if (opts->max_train_samples < 0) fail(Errc::parameter, kModule, "max_train_samples must be >= 0");
    auto train_set = dataset::read_dataset(train_dir);
    const auto val_set = dataset::read_dataset(val_dir);
    if (opts->max_train_samples > 0 && train_set.size() > static_cast<std::size_t>(opts->max_train_samples))
      train_set.resize(static_cast<std::size_t>(opts->max_train_samples));

    train::TrainConfig cfg;
    cfg.variant = to_variant(opts->variant);
    cfg.arch = import_arch(cfg.variant, opts->arch);
    cfg.batch_size = opts->batch_size;
    cfg.epochs = opts->epochs;
    cfg.adam = {opts->learning_rate, opts->beta1, opts->beta2, opts->eps};
    cfg.seed = opts->seed;
    cfg.loss.mask_loss_enabled = opts->mask_loss_enabled != 0;
    cfg.loss.sparse_norm =
        opts->sparse_norm == SF_SPARSE_NORM_M ? train::SparseNorm::masked_pixels : train::SparseNorm::all_pixels;
    cfg.threads = resolve_threads(opts->threads);
    cfg.deterministic = opts->deterministic != 0;
    if (opts->checkpoint_path) cfg.checkpoint_path = opts->checkpoint_path;
    if (opts->log_path) cfg.log_path = opts->log_path;

    train::EpochCallback cb;
    if (callback)
      cb = [&](const train::EpochRecord& r) {
        sf_epoch_report e;
        fill_epoch(r, &e);
        callback(&e, user);
      };
    train::TrainResult res = train::train(train_set, val_set, cfg, cb);
    if (summary) {
      summary->epochs_run = static_cast<int>(res.log.size());
      summary->best_epoch = res.state.best_epoch;
      summary->best_validation_loss = res.state.best_validation_loss;
      summary->train_samples = train_set.size();
      summary->validation_samples = val_set.size();
    }
    if (best) {
      auto n = std::make_unique<sf_network>();
      n->params = std::move(res.best_params);
      *best = n.release();
    }
  });
}

// ---- evaluation -------------------------------------------------------------

sf_status sf_evaluate_dataset(const sf_network* net, const char* dir, const sf_phase_options* opts, int threads,
                              const double* coefficients, size_t n, sf_dataset_eval* result, double* mae_out,
                              size_t* count_out) {
  return guard([&] {
    need(net, "network");
    need(dir, "dir");
    need(result, "result");
    if (n > 0) need(coefficients, "coefficients");
    const auto samples = dataset::read_dataset(dir);
    if (samples.empty()) fail(Errc::parameter, kModule, "dataset " + std::string(dir) + " is empty");
    const int th = resolve_threads(threads);
    const std::vector<double> coefs(coefficients, coefficients + n);
    const auto ev = eval::evaluate_dataset(net->params, samples, coefs, phase_config(opts), th);
    const auto loss = train::evaluate_loss(net->params, samples, {}, 64, th);
    result->samples = ev.samples;
    result->full_u = ev.full.u;
    result->full_v = ev.full.v;
    result->interior_u = ev.interior.u;
    result->interior_v = ev.interior.v;
    result->masked_u = ev.masked.u;
    result->masked_v = ev.masked.v;
    result->masked = ev.masked.combined();
    result->masked_count = ev.masked.count_u + ev.masked.count_v;
    result->loss_full = loss.full_epe;
    result->loss_sparse = loss.sparse_epe;
    result->loss_total = loss.total;
    for (std::size_t k = 0; k < n; ++k) {
      const auto& e = ev.sweep.entries[k];
      if (mae_out) mae_out[k] = e.mae ? *e.mae : std::numeric_limits<double>::quiet_NaN();
      if (count_out) count_out[k] = e.count();
    }
  });
}

sf_status sf_benchmark(const sf_network* net, int n_pairs, uint64_t seed, int threads, sf_bench_report* report) {
  return guard([&] {
    need(net, "network");
    need(report, "report");
    const auto b = eval::benchmark_inference(net->params, n_pairs, seed, threads < 1 ? 1 : threads);
    report->n_pairs = b.n_pairs;
    report->threads = b.threads;
    report->param_count = b.param_count;
    report->net_ms_per_pair = b.net_ms_per_pair;
    report->net_pairs_per_second = b.net_pairs_per_second;
    report->phase_ms_per_pair = b.phase_ms_per_pair;
    report->phase_pairs_per_second = b.phase_pairs_per_second;
    report->speed_ratio = b.speed_ratio;
  });
}

}  // extern "C"
