#include "subflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>

#include "binary_io.hpp"
#include "subflow/error.hpp"
#include "subflow/parallel.hpp"

namespace subflow::dataset {

namespace {

constexpr const char* kModule = "dataset";
constexpr std::uint32_t kShardVersion = 1;
constexpr std::size_t kPlane = static_cast<std::size_t>(kPairSize) * kPairSize;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, Segment seg, int section, Source src) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(seg));
  h = splitmix(h ^ static_cast<std::uint64_t>(section));
  return splitmix(h ^ static_cast<std::uint64_t>(src));
}

Grid round_to_float(const Grid& g) {
  Grid out = g;
  for (double& v : out.data) v = static_cast<double>(static_cast<float>(v));
  return out;
}

Frame crop_plan_frame(const Frame& frame, const CropPlan& plan) {
  const Rect& b = plan.box;
  if (plan.source == Source::original) return crop(frame, b.x0, b.y0, b.width, b.height);
  return transpose(crop(frame, b.y0, b.x0, b.height, b.width));
}

std::string shard_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard_%05zu.sfds", index);
  return buf;
}

}  // namespace

const char* segment_name(Segment s) noexcept {
  switch (s) {
    case Segment::train: return "train";
    case Segment::validation: return "validation";
    case Segment::test: return "test";
  }
  return "unknown";
}

Segment parse_segment(const std::string& name) {
  if (name == "train") return Segment::train;
  if (name == "validation" || name == "val") return Segment::validation;
  if (name == "test") return Segment::test;
  fail(Errc::parameter, kModule, "unknown segment '" + name + "'");
}

const char* source_name(Source s) noexcept { return s == Source::original ? "original" : "flipped"; }

std::map<Segment, Rect> default_segments(int video_width, int video_height) {
  const int a = static_cast<int>(std::floor(0.70 * video_width));
  const int b = static_cast<int>(std::floor(0.85 * video_width));
  return {{Segment::train, {0, 0, a, video_height}},
          {Segment::validation, {a, 0, b - a, video_height}},
          {Segment::test, {b, 0, video_width - b, video_height}}};
}

std::vector<CropPlan> plan_crops(int video_width, int video_height, const CropConfig& cfg) {
  if (cfg.sections < 1) fail(Errc::parameter, kModule, "sections must be >= 1");
  if (video_width < 1 || video_height < 1) fail(Errc::parameter, kModule, "video dimensions must be positive");
  const auto segments = cfg.segments.empty() ? default_segments(video_width, video_height) : cfg.segments;
  const Rect video{0, 0, video_width, video_height};
  std::vector<CropPlan> plans;
  for (const auto& [segment, count] : cfg.boxes_per_section) {
    if (count < 0) fail(Errc::parameter, kModule, "box counts must be non-negative");
    if (count == 0) continue;
    const auto it = segments.find(segment);
    if (it == segments.end())
      fail(Errc::parameter, kModule, std::string("no spatial extent for segment ") + segment_name(segment));
    const Rect& r = it->second;
    if (r.width < kBoxSize || r.height < kBoxSize)
      fail(Errc::parameter, kModule,
           std::string(segment_name(segment)) + " segment is " + std::to_string(r.width) + "x" +
               std::to_string(r.height) + ", smaller than the " + std::to_string(kBoxSize) + " px box");
    if (!video.contains(r))
      fail(Errc::parameter, kModule, std::string(segment_name(segment)) + " segment lies outside the video");
    for (int section = 0; section < cfg.sections; ++section) {
      for (Source src : {Source::original, Source::flipped}) {
        if (src == Source::flipped && !cfg.include_flipped) continue;
        std::mt19937_64 rng(stream_seed(cfg.seed, segment, section, src));
        // In transposed coordinates the segment's axes swap.
        const int ox = src == Source::original ? r.x0 : r.y0;
        const int oy = src == Source::original ? r.y0 : r.x0;
        const int span_x = (src == Source::original ? r.width : r.height) - kBoxSize;
        const int span_y = (src == Source::original ? r.height : r.width) - kBoxSize;
        std::uniform_int_distribution<int> dx(0, span_x);
        std::uniform_int_distribution<int> dy(0, span_y);
        for (int i = 0; i < count; ++i) {
          CropPlan p;
          p.segment = segment;
          p.section_index = section;
          p.source = src;
          p.box.x0 = ox + dx(rng);
          p.box.y0 = oy + dy(rng);
          plans.push_back(p);
        }
      }
    }
  }
  return plans;
}

std::vector<LabeledPair> build_labeled_pairs(const FrameSequence& video, const CropPlan& plan, const PairConfig& cfg) {
  const int f = cfg.frames_per_section;
  if (f < 2) fail(Errc::parameter, kModule, "frames_per_section must be >= 2");
  if (cfg.first_frame < 0) fail(Errc::parameter, kModule, "first_frame must be non-negative");
  if (plan.box.width != kBoxSize || plan.box.height != kBoxSize)
    fail(Errc::dimension, kModule, "crop boxes must be 96x96");
  const long long begin = cfg.first_frame + static_cast<long long>(plan.section_index) * f;
  const long long end = begin + f;
  if (plan.section_index < 0 || end > static_cast<long long>(video.size()))
    fail(Errc::dimension, kModule,
         "section " + std::to_string(plan.section_index) + " needs frames [" + std::to_string(begin) + ", " +
             std::to_string(end) + ") but the video has " + std::to_string(video.size()));

  PhaseEngine engine(cfg.phase);
  std::vector<LabeledPair> pairs;
  pairs.reserve(static_cast<std::size_t>(f - 1));
  Frame reference;
  for (long long t = begin; t < end; ++t) {
    const Frame& src = video.frames[static_cast<std::size_t>(t)];
    Frame small = blur_downsample(crop_plan_frame(src, plan), 1);
    small.luma = round_to_float(small.luma);
    small.timestamp_index = src.timestamp_index;
    if (t == begin) {
      reference = small;
      engine.set_reference(reference);
      continue;
    }
    LabeledPair pair;
    pair.label = engine.estimate(small);
    pair.label.u = round_to_float(pair.label.u);
    pair.label.v = round_to_float(pair.label.v);
    pair.reference = reference;
    pair.current = std::move(small);
    pair.plan = plan;
    pair.pair_index = static_cast<int>(t - begin);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::size_t count_pairs(const std::vector<CropPlan>& plans, int frames_per_section) {
  if (frames_per_section < 2) fail(Errc::parameter, kModule, "frames_per_section must be >= 2");
  return plans.size() * static_cast<std::size_t>(frames_per_section - 1);
}

StoredPair to_stored(const LabeledPair& pair) {
  auto check = [](int w, int h, const char* what) {
    if (w != kPairSize || h != kPairSize)
      fail(Errc::dimension, kModule, std::string(what) + " must be 48x48");
  };
  check(pair.reference.width(), pair.reference.height(), "reference");
  check(pair.current.width(), pair.current.height(), "current");
  check(pair.label.u.width, pair.label.u.height, "label");
  check(pair.label.mask_u.mask.width, pair.label.mask_u.mask.height, "mask");
  StoredPair s;
  auto to_f = [](const Grid& g) {
    std::vector<float> out(g.data.size());
    std::transform(g.data.begin(), g.data.end(), out.begin(), [](double v) { return static_cast<float>(v); });
    return out;
  };
  s.reference = to_f(pair.reference.luma);
  s.current = to_f(pair.current.luma);
  s.label_u = to_f(pair.label.u);
  s.label_v = to_f(pair.label.v);
  s.mask_u = pair.label.mask_u.mask.data;
  s.mask_v = pair.label.mask_v.mask.data;
  return s;
}

// ---------------------------------------------------------------------------
// Shards.

namespace {

void encode_shard(const std::vector<StoredPair>& samples, std::size_t begin, std::size_t end,
                  std::vector<unsigned char>& out) {
  using namespace detail;
  out.clear();
  put_bytes(out, "SFDS", 4);
  put_u32(out, kShardVersion);
  put_u32(out, static_cast<std::uint32_t>(end - begin));
  put_u32(out, kPairSize);
  put_u32(out, kPairSize);
  for (std::size_t i = begin; i < end; ++i) {
    const StoredPair& s = samples[i];
    for (const auto* v : {&s.reference, &s.current, &s.label_u, &s.label_v}) {
      if (v->size() != kPlane) fail(Errc::dimension, kModule, "stored pair has wrong plane size");
      for (float x : *v) put_f32(out, x);
    }
    for (const auto* m : {&s.mask_u, &s.mask_v}) {
      if (m->size() != kPlane) fail(Errc::dimension, kModule, "stored mask has wrong plane size");
      out.insert(out.end(), m->begin(), m->end());
    }
  }
}

}  // namespace

ShardWriter::ShardWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(Errc::io, kModule, "cannot create " + dir_.string() + ": " + ec.message());
}

void ShardWriter::add(StoredPair sample) {
  pending_.push_back(std::move(sample));
  if (pending_.size() == static_cast<std::size_t>(kShardCapacity)) flush();
}

void ShardWriter::flush() {
  if (pending_.empty()) return;
  std::vector<unsigned char> bytes;
  encode_shard(pending_, 0, pending_.size(), bytes);
  const auto path = dir_ / shard_name(files_.size());
  detail::write_file(path, bytes, kModule);
  files_.push_back(path);
  written_ += pending_.size();
  pending_.clear();
}

std::size_t ShardWriter::finish() {
  flush();
  return written_;
}

std::vector<std::filesystem::path> write_shards(const std::vector<StoredPair>& samples,
                                                const std::filesystem::path& dir) {
  ShardWriter writer(dir);
  for (const auto& s : samples) writer.add(s);
  writer.finish();
  return writer.files();
}

std::vector<StoredPair> read_shard(const std::filesystem::path& path, int shard_index) {
  const auto bytes = detail::read_file(path, kModule);
  const std::string where = "shard " + std::to_string(shard_index) + " (" + path.filename().string() + ")";
  if (bytes.size() < 20) fail(Errc::io, kModule, where + ": truncated header");
  detail::Reader r(bytes.data(), bytes.size());
  if (r.str(4) != "SFDS") fail(Errc::format, kModule, where + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kShardVersion) fail(Errc::format, kModule, where + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  if (h != kPairSize || w != kPairSize)
    fail(Errc::format, kModule, where + ": unexpected sample shape " + std::to_string(w) + "x" + std::to_string(h));
  const std::size_t per_sample = kPlane * (4 * 4 + 2);
  if (r.remaining() < per_sample * count)
    fail(Errc::io, kModule, where + ": truncated, expected " + std::to_string(count) + " samples");
  if (r.remaining() != per_sample * count) fail(Errc::format, kModule, where + ": trailing bytes");
  std::vector<StoredPair> out(count);
  for (auto& s : out) {
    for (auto* v : {&s.reference, &s.current, &s.label_u, &s.label_v}) {
      v->resize(kPlane);
      for (float& x : *v) x = r.f32();
    }
    for (auto* m : {&s.mask_u, &s.mask_v}) {
      m->resize(kPlane);
      for (auto& x : *m) x = r.u8();
    }
  }
  return out;
}

std::vector<StoredPair> read_dataset(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) fail(Errc::io, kModule, "dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".sfds") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<StoredPair> all;
  for (std::size_t i = 0; i < files.size(); ++i) {
    auto part = read_shard(files[i], static_cast<int>(i));
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

DatasetSummary build_dataset(const FrameSequence& video, const CropConfig& crop_cfg, const PairConfig& pair_cfg,
                             const std::filesystem::path& out_dir, int threads) {
  validate(video);
  const auto plans = plan_crops(video.width(), video.height(), crop_cfg);
  const long long needed = pair_cfg.first_frame + static_cast<long long>(crop_cfg.sections) * pair_cfg.frames_per_section;
  if (needed > static_cast<long long>(video.size()))
    fail(Errc::dimension, kModule,
         std::to_string(crop_cfg.sections) + " sections of " + std::to_string(pair_cfg.frames_per_section) +
             " frames need " + std::to_string(needed) + " frames, video has " + std::to_string(video.size()));

  DatasetSummary summary;
  summary.plans = plans.size();
  std::map<Segment, std::unique_ptr<ShardWriter>> writers;
  std::map<Segment, std::ofstream> indices;
  for (Segment s : {Segment::train, Segment::validation, Segment::test}) {
    summary.pairs[s] = 0;
    const auto it = crop_cfg.boxes_per_section.find(s);
    if (it == crop_cfg.boxes_per_section.end() || it->second == 0) continue;
    const auto dir = out_dir / segment_name(s);
    writers[s] = std::make_unique<ShardWriter>(dir);
    indices[s].open(dir / "pairs.csv");
    if (!indices[s]) fail(Errc::io, kModule, "cannot write " + (dir / "pairs.csv").string());
    indices[s] << "sample,section,source,x0,y0,pair_index\n";
  }

  const int workers = std::max(1, resolve_threads(threads));
  const std::size_t group = static_cast<std::size_t>(workers) * 2;
  for (std::size_t g0 = 0; g0 < plans.size(); g0 += group) {
    const std::size_t g1 = std::min(plans.size(), g0 + group);
    std::vector<std::vector<StoredPair>> stored(g1 - g0);
    std::vector<std::vector<int>> offsets(g1 - g0);
    std::vector<std::size_t> oor(g1 - g0, 0);
    parallel_chunks(static_cast<int>(g1 - g0), workers, [&](int, int b, int e) {
      for (int i = b; i < e; ++i) {
        const auto pairs = build_labeled_pairs(video, plans[g0 + static_cast<std::size_t>(i)], pair_cfg);
        for (const auto& p : pairs) {
          stored[static_cast<std::size_t>(i)].push_back(to_stored(p));
          offsets[static_cast<std::size_t>(i)].push_back(p.pair_index);
          if (p.label.out_of_range()) ++oor[static_cast<std::size_t>(i)];
        }
      }
    });
    for (std::size_t i = 0; i < stored.size(); ++i) {
      const CropPlan& plan = plans[g0 + i];
      auto& writer = *writers.at(plan.segment);
      auto& index = indices.at(plan.segment);
      for (std::size_t j = 0; j < stored[i].size(); ++j) {
        index << summary.pairs[plan.segment] << ',' << plan.section_index << ',' << source_name(plan.source) << ','
              << plan.box.x0 << ',' << plan.box.y0 << ',' << offsets[i][j] << '\n';
        writer.add(std::move(stored[i][j]));
        ++summary.pairs[plan.segment];
      }
      summary.out_of_range += oor[i];
    }
  }
  for (auto& [s, w] : writers) w->finish();
  for (auto& [s, f] : indices) {
    f.flush();
    if (!f) fail(Errc::io, kModule, std::string("failed writing pairs.csv for ") + segment_name(s));
  }
  return summary;
}

}  // namespace subflow::dataset
