#pragma once

// Crop planning, phase-based pair labelling and SFDS shard persistence.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "subflow/phase.hpp"
#include "subflow/video_io.hpp"

namespace subflow::dataset {

enum class Segment : std::uint8_t { train = 0, validation = 1, test = 2 };
enum class Source : std::uint8_t { original = 0, flipped = 1 };

const char* segment_name(Segment s) noexcept;
Segment parse_segment(const std::string& name);
const char* source_name(Source s) noexcept;

inline constexpr int kBoxSize = 96;
inline constexpr int kPairSize = 48;
inline constexpr int kShardCapacity = 4096;

struct Rect {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;

  bool contains(const Rect& r) const noexcept {
    return r.x0 >= x0 && r.y0 >= y0 && r.x0 + r.width <= x0 + width && r.y0 + r.height <= y0 + height;
  }
  bool operator==(const Rect&) const = default;
};

// For flipped plans the box is expressed in the transposed video's coordinates.
struct CropPlan {
  Segment segment = Segment::train;
  int section_index = 0;
  Rect box{0, 0, kBoxSize, kBoxSize};
  Source source = Source::original;

  bool operator==(const CropPlan&) const = default;
};

struct CropConfig {
  std::map<Segment, Rect> segments;  // spatial extents in original coordinates
  int sections = 10;
  std::map<Segment, int> boxes_per_section{{Segment::train, 100}, {Segment::validation, 30}, {Segment::test, 30}};
  bool include_flipped = true;
  std::uint64_t seed = 0;
};

// Consecutive full-height column bands: train [0, 0.7W), validation
// [0.7W, 0.85W), test [0.85W, W).
std::map<Segment, Rect> default_segments(int video_width, int video_height);

std::vector<CropPlan> plan_crops(int video_width, int video_height, const CropConfig& cfg);

struct LabeledPair {
  Frame reference;
  Frame current;
  MotionField label;
  CropPlan plan;
  int pair_index = 0;  // frame offset from the section's reference
};

struct PairConfig {
  int frames_per_section = 50;
  int first_frame = 0;  // video frame where section 0 starts
  PhaseConfig phase;
};

// Frames [first + s*F, first + (s+1)*F) of section s; the first of them is
// the reference for the F-1 pairs. Frames and labels are rounded to float
// precision so they survive a shard round trip exactly.
std::vector<LabeledPair> build_labeled_pairs(const FrameSequence& video, const CropPlan& plan, const PairConfig& cfg);

std::size_t count_pairs(const std::vector<CropPlan>& plans, int frames_per_section);

// Flat float storage of one sample, exactly the SFDS per-sample payload.
struct StoredPair {
  std::vector<float> reference;
  std::vector<float> current;
  std::vector<float> label_u;
  std::vector<float> label_v;
  std::vector<std::uint8_t> mask_u;
  std::vector<std::uint8_t> mask_v;

  bool operator==(const StoredPair&) const = default;
};

StoredPair to_stored(const LabeledPair& pair);

// SFDS shards of at most kShardCapacity samples, named shard_00000.sfds, ...
class ShardWriter {
 public:
  explicit ShardWriter(std::filesystem::path dir);
  void add(StoredPair sample);
  // Flushes the pending shard; returns the total number of samples written.
  std::size_t finish();
  const std::vector<std::filesystem::path>& files() const noexcept { return files_; }

 private:
  void flush();

  std::filesystem::path dir_;
  std::vector<StoredPair> pending_;
  std::vector<std::filesystem::path> files_;
  std::size_t written_ = 0;
};

std::vector<std::filesystem::path> write_shards(const std::vector<StoredPair>& samples,
                                                const std::filesystem::path& dir);
std::vector<StoredPair> read_shard(const std::filesystem::path& path, int shard_index = 0);
// Reads every *.sfds file in `dir` in name order. An existing directory with no
// shards yields an empty dataset.
std::vector<StoredPair> read_dataset(const std::filesystem::path& dir);

struct DatasetSummary {
  std::map<Segment, std::size_t> pairs;
  std::size_t plans = 0;
  std::size_t out_of_range = 0;  // labels with near-pi phase changes
};

// Plans crops, labels every plan and writes <out>/<segment>/shard_*.sfds plus a
// pairs.csv index per segment. Labelling runs on `threads` threads; output is
// independent of the thread count.
DatasetSummary build_dataset(const FrameSequence& video, const CropConfig& crop, const PairConfig& pairs,
                             const std::filesystem::path& out_dir, int threads = 1);

}  // namespace subflow::dataset
