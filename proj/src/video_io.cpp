#include "subflow/video_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "subflow/error.hpp"

namespace subflow {

namespace {

constexpr const char* kModule = "video_io";
constexpr char kRawMagic[4] = {'S', 'F', 'V', '1'};

// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// Skips whitespace and '#' comments in a PGM header.
void skip_pgm_space(const std::vector<unsigned char>& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(buf[pos])) {
      ++pos;
    } else {
      break;
    }
  }
}

int read_pgm_int(const std::vector<unsigned char>& buf, std::size_t& pos, const std::string& name) {
  skip_pgm_space(buf, pos);
  if (pos >= buf.size() || !std::isdigit(buf[pos])) fail(Errc::format, kModule, "malformed PGM header in " + name);
  long v = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    v = v * 10 + (buf[pos] - '0');
    if (v > (1 << 24)) fail(Errc::format, kModule, "PGM header value too large in " + name);
    ++pos;
  }
  return static_cast<int>(v);
}

Frame load_pgm(const std::filesystem::path& path, int index) {
  const auto buf = detail::read_file(path, kModule);
  const std::string name = path.filename().string();
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') fail(Errc::format, kModule, name + " is not a binary PGM (P5)");
  std::size_t pos = 2;
  const int width = read_pgm_int(buf, pos, name);
  const int height = read_pgm_int(buf, pos, name);
  const int maxval = read_pgm_int(buf, pos, name);
  if (width <= 0 || height <= 0) fail(Errc::format, kModule, name + " has empty dimensions");
  if (maxval <= 0 || maxval > 255) fail(Errc::format, kModule, name + " is not an 8-bit PGM");
  ++pos;  // single whitespace byte before the raster
  const std::size_t count = static_cast<std::size_t>(width) * height;
  if (buf.size() < pos + count) fail(Errc::format, kModule, name + " raster is truncated");
  Frame frame(width, height, 0.0, index);
  for (std::size_t i = 0; i < count; ++i) frame.luma.data[i] = static_cast<double>(buf[pos + i]) / maxval;
  return frame;
}

FrameSequence load_pgm_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir)) fail(Errc::io, kModule, "no such path " + dir.string());
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_regular_file(dir)) {
    files.push_back(dir);
  } else {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  }
  if (files.empty()) fail(Errc::format, kModule, "no .pgm frames in " + dir.string());
  FrameSequence seq;
  seq.frame_rate = 0.0;
  for (std::size_t i = 0; i < files.size(); ++i) seq.frames.push_back(load_pgm(files[i], static_cast<int>(i)));
  return seq;
}

FrameSequence load_raw_f32(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(Errc::io, kModule, "no such file " + path.string());
  const auto buf = detail::read_file(path, kModule);
  detail::Reader in(buf.data(), buf.size());
  if (!in.has(20) || in.str(4) != std::string(kRawMagic, 4)) fail(Errc::format, kModule, "bad raw_f32 magic in " + path.string());
  const std::uint32_t width = in.u32();
  const std::uint32_t height = in.u32();
  const std::uint32_t count = in.u32();
  const float rate = in.f32();
  const std::uint64_t pixels = static_cast<std::uint64_t>(width) * height;
  if (width == 0 || height == 0) fail(Errc::format, kModule, "raw_f32 has empty dimensions");
  if (in.remaining() != pixels * count * 4) fail(Errc::format, kModule, "raw_f32 payload size does not match header");
  FrameSequence seq;
  seq.frame_rate = rate;
  seq.frames.reserve(count);
  for (std::uint32_t f = 0; f < count; ++f) {
    Frame frame(static_cast<int>(width), static_cast<int>(height), 0.0, static_cast<int>(f));
    for (auto& v : frame.luma.data) {
      const float x = in.f32();
      if (!std::isfinite(x)) fail(Errc::format, kModule, "non-finite intensity in frame " + std::to_string(f));
      v = x;
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

// One separable pass of the binomial kernel along x or y.
Grid binomial_pass(const Grid& in, bool along_x) {
  static constexpr std::array<double, 5> taps = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  Grid out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int t = -2; t <= 2; ++t) {
        const double v = along_x ? in(reflect101(x + t, in.width), y) : in(x, reflect101(y + t, in.height));
        acc += taps[t + 2] * v;
      }
      out(x, y) = acc;
    }
  }
  return out;
}

}  // namespace

void validate(const FrameSequence& sequence) {
  if (sequence.frames.empty()) return;
  const int w = sequence.width();
  const int h = sequence.height();
  for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
    const Frame& f = sequence.frames[i];
    if (f.width() != w || f.height() != h) fail(Errc::format, kModule, "frame " + std::to_string(i) + " has inconsistent dimensions");
    if (f.luma.size() != static_cast<std::size_t>(w) * h) fail(Errc::format, kModule, "frame " + std::to_string(i) + " data length mismatch");
    if (i > 0 && f.timestamp_index <= sequence.frames[i - 1].timestamp_index)
      fail(Errc::format, kModule, "timestamp indices must be strictly increasing");
    for (double v : f.luma.data)
      if (!std::isfinite(v)) fail(Errc::format, kModule, "non-finite intensity in frame " + std::to_string(i));
  }
}

FrameSequence load_frames(const std::filesystem::path& path, FrameFormat format) {
  FrameSequence seq = format == FrameFormat::raw_f32 ? load_raw_f32(path) : load_pgm_sequence(path);
  validate(seq);
  return seq;
}

void write_frames(const FrameSequence& sequence, const std::filesystem::path& path) {
  validate(sequence);
  std::vector<unsigned char> out;
  const std::size_t pixels = static_cast<std::size_t>(sequence.width()) * sequence.height();
  out.reserve(20 + 4 * pixels * sequence.size());
  detail::put_bytes(out, kRawMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(sequence.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(sequence.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(sequence.size()));
  detail::put_f32(out, static_cast<float>(sequence.frame_rate));
  for (const Frame& f : sequence.frames)
    for (double v : f.luma.data) detail::put_f32(out, static_cast<float>(v));
  detail::write_file(path, out, kModule);
}

void write_pgm_sequence(const FrameSequence& sequence, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    const Frame& f = sequence.frames[i];
    std::ostringstream name;
    name << "frame_" << std::string(5 - std::min<std::size_t>(5, std::to_string(i).size()), '0') << i << ".pgm";
    std::vector<unsigned char> out;
    const std::string header = "P5\n" + std::to_string(f.width()) + " " + std::to_string(f.height()) + "\n255\n";
    detail::put_bytes(out, header.data(), header.size());
    for (double v : f.luma.data) {
      const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
      out.push_back(static_cast<unsigned char>(scaled));
    }
    detail::write_file(dir / name.str(), out, kModule);
  }
}

Frame rgb_to_luma(const Grid& r, const Grid& g, const Grid& b) {
  if (!r.same_shape(g) || !r.same_shape(b)) fail(Errc::dimension, kModule, "rgb planes differ in shape");
  Frame out(r.width, r.height);
  for (std::size_t i = 0; i < r.size(); ++i)
    out.luma.data[i] = 0.299 * r.data[i] + 0.587 * g.data[i] + 0.114 * b.data[i];
  return out;
}

Frame binomial_blur(const Frame& frame) {
  return Frame(binomial_pass(binomial_pass(frame.luma, true), false), frame.timestamp_index);
}

Frame blur_downsample(const Frame& frame, int levels) {
  if (levels < 0) fail(Errc::parameter, kModule, "levels must be >= 0");
  const int factor = 1 << levels;
  if (frame.width() % factor != 0 || frame.height() % factor != 0)
    fail(Errc::dimension, kModule,
         std::to_string(frame.width()) + "x" + std::to_string(frame.height()) + " is not divisible by " + std::to_string(factor));
  Frame current = frame;
  for (int level = 0; level < levels; ++level) {
    const Frame blurred = binomial_blur(current);
    Frame half(current.width() / 2, current.height() / 2, 0.0, frame.timestamp_index);
    for (int y = 0; y < half.height(); ++y)
      for (int x = 0; x < half.width(); ++x) half.luma(x, y) = blurred.luma(2 * x, 2 * y);
    current = std::move(half);
  }
  return current;
}

FrameSequence blur_downsample(const FrameSequence& sequence, int levels) {
  FrameSequence out;
  out.frame_rate = sequence.frame_rate;
  out.frames.reserve(sequence.size());
  for (const Frame& f : sequence.frames) out.frames.push_back(blur_downsample(f, levels));
  return out;
}

Frame crop(const Frame& frame, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > frame.width() || y0 + height > frame.height())
    fail(Errc::dimension, kModule, "crop box out of bounds");
  Frame out(width, height, 0.0, frame.timestamp_index);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.luma(x, y) = frame.luma(x0 + x, y0 + y);
  return out;
}

Frame transpose(const Frame& frame) {
  Frame out(frame.height(), frame.width(), 0.0, frame.timestamp_index);
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x) out.luma(y, x) = frame.luma(x, y);
  return out;
}

}  // namespace subflow
