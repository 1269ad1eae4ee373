#pragma once

#include <filesystem>
#include <vector>

#include "subflow/grid.hpp"

namespace subflow {

// One luma frame, intensities nominally in [0, 1].
struct Frame {
  Grid luma;
  int timestamp_index = 0;

  Frame() = default;
  Frame(int width, int height, double fill = 0.0, int index = 0) : luma(width, height, fill), timestamp_index(index) {}
  Frame(Grid grid, int index) : luma(std::move(grid)), timestamp_index(index) {}

  int width() const noexcept { return luma.width; }
  int height() const noexcept { return luma.height; }
};

struct FrameSequence {
  std::vector<Frame> frames;
  double frame_rate = 0.0;

  std::size_t size() const noexcept { return frames.size(); }
  bool empty() const noexcept { return frames.empty(); }
  int width() const noexcept { return frames.empty() ? 0 : frames.front().width(); }
  int height() const noexcept { return frames.empty() ? 0 : frames.front().height(); }
};

enum class FrameFormat { pgm_sequence, raw_f32 };

// Throws Errc::format if the sequence breaks the shared-shape, increasing-index
// or finite-intensity invariants.
void validate(const FrameSequence& sequence);

FrameSequence load_frames(const std::filesystem::path& path, FrameFormat format);

// raw_f32 container: "SFV1", u32 width, u32 height, u32 frame_count,
// f32 frame_rate, then frame_count * width * height little-endian f32.
void write_frames(const FrameSequence& sequence, const std::filesystem::path& path);

// Writes frames as 8-bit binary PGM files frame_00000.pgm, ... into `dir`.
void write_pgm_sequence(const FrameSequence& sequence, const std::filesystem::path& dir);

Frame rgb_to_luma(const Grid& r, const Grid& g, const Grid& b);

// Separable (1,4,6,4,1)/16 blur with reflect borders, no decimation.
Frame binomial_blur(const Frame& frame);

// Separable (1,4,6,4,1)/16 blur with reflect borders, then 2x decimation, per level.
Frame blur_downsample(const Frame& frame, int levels);
FrameSequence blur_downsample(const FrameSequence& sequence, int levels);

Frame crop(const Frame& frame, int x0, int y0, int width, int height);
Frame transpose(const Frame& frame);

}  // namespace subflow
