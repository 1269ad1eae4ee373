#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include "../common/oracles.hpp"
#include "../common/tempdir.hpp"
#include "subflow/dataset.hpp"
#include "subflow/error.hpp"
#include "subflow/synthetic.hpp"

using namespace subflow;
using namespace subflow::dataset;

namespace {

Errc code_of(const std::function<void()>& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("expected an error");
  return Errc::io;
}

FrameSequence vibrating(int size, int frames, double dx, double dy, std::uint64_t seed = 1) {
  TextureOptions t;
  t.wavelength = 16.0;
  t.sigma = 4.0;
  const Frame tex = generate_texture(seed, size, size, TextureKind::filtered_noise, t);
  MotionSignal s;
  for (int i = 0; i < frames; ++i) s.samples.push_back({i == 0 ? 0.0 : dx, i == 0 ? 0.0 : dy});
  return generate_vibration_sequence(tex, s).video;
}

CropConfig single_box(Source src = Source::original) {
  CropConfig c;
  c.sections = 1;
  c.boxes_per_section = {{Segment::train, 1}};
  c.segments = {{Segment::train, {0, 0, 96, 96}}};
  c.include_flipped = src == Source::flipped;
  return c;
}

StoredPair sample(float base) {
  StoredPair s;
  for (auto* v : {&s.reference, &s.current, &s.label_u, &s.label_v}) {
    v->resize(48 * 48);
    for (std::size_t i = 0; i < v->size(); ++i) (*v)[i] = base + static_cast<float>(i) * 1e-3f;
  }
  for (auto* m : {&s.mask_u, &s.mask_v}) {
    m->resize(48 * 48);
    for (std::size_t i = 0; i < m->size(); ++i) (*m)[i] = static_cast<std::uint8_t>(i % 3 == 0);
  }
  return s;
}

Grid transposed(const Grid& g) {
  Grid t(g.height, g.width);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) t(y, x) = g(x, y);
  return t;
}

}  // namespace

TEST_CASE("default segments are consecutive column bands") {
  const auto s = default_segments(1000, 200);
  CHECK(s.at(Segment::train).x0 == 0);
  CHECK(s.at(Segment::train).width == 700);
  CHECK(s.at(Segment::validation).x0 == 700);
  CHECK(s.at(Segment::validation).width == 150);
  CHECK(s.at(Segment::test).x0 == 850);
  CHECK(s.at(Segment::test).width == 150);
  for (const auto& [seg, r] : s) CHECK(r.height == 200);
}

TEST_CASE("plan counts, bounds and determinism") {
  CropConfig c;
  c.segments = {{Segment::train, {0, 0, 1000, 200}}};
  c.boxes_per_section = {{Segment::train, 100}};
  const auto plans = plan_crops(1000, 200, c);
  std::size_t original = 0, flipped = 0;
  std::set<int> sections;
  const Rect seg{0, 0, 1000, 200}, seg_t{0, 0, 200, 1000};
  for (const auto& p : plans) {
    CHECK(p.segment == Segment::train);
    CHECK(p.box.width == 96);
    CHECK(p.box.height == 96);
    CHECK((p.source == Source::original ? seg : seg_t).contains(p.box));
    (p.source == Source::original ? original : flipped) += 1;
    sections.insert(p.section_index);
  }
  CHECK(original == 1000);
  CHECK(flipped == 1000);
  CHECK(sections.size() == 10);
  CHECK(plan_crops(1000, 200, c) == plans);

  c.seed = 1;
  CHECK(plan_crops(1000, 200, c) != plans);

  // Sections draw independent boxes.
  c.include_flipped = false;
  const auto p2 = plan_crops(1000, 200, c);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += p2[static_cast<std::size_t>(i)].box == p2[static_cast<std::size_t>(100 + i)].box;
  CHECK(same < 5);
}

TEST_CASE("single box plan") {
  const auto plans = plan_crops(150, 120, [] {
    CropConfig c;
    c.sections = 1;
    c.include_flipped = false;
    c.boxes_per_section = {{Segment::train, 1}};
    c.segments = {{Segment::train, {10, 5, 120, 110}}};
    return c;
  }());
  REQUIRE(plans.size() == 1);
  CHECK(Rect{10, 5, 120, 110}.contains(plans[0].box));
}

TEST_CASE("plan parameter errors") {
  CropConfig c;
  c.boxes_per_section = {{Segment::train, 1}};
  c.segments = {{Segment::train, {0, 0, 95, 200}}};
  CHECK(code_of([&] { plan_crops(200, 200, c); }) == Errc::parameter);
  c.segments = {{Segment::train, {150, 0, 96, 96}}};
  CHECK(code_of([&] { plan_crops(200, 200, c); }) == Errc::parameter);
  c.segments = {};
  c.sections = 0;
  CHECK(code_of([&] { plan_crops(1000, 200, c); }) == Errc::parameter);
  c.sections = 1;
  c.boxes_per_section = {{Segment::validation, 1}};
  c.segments = {{Segment::train, {0, 0, 96, 96}}};
  CHECK(code_of([&] { plan_crops(200, 200, c); }) == Errc::parameter);
}

TEST_CASE("ten sections of 100 boxes with flips give 98,000 training pairs") {
  CropConfig c;
  c.boxes_per_section = {{Segment::train, 100}, {Segment::validation, 30}};
  const auto plans = plan_crops(1400, 200, c);
  std::size_t train = 0;
  for (const auto& p : plans) train += p.segment == Segment::train;
  CHECK(train == 2000);
  std::vector<CropPlan> train_plans;
  for (const auto& p : plans)
    if (p.segment == Segment::train) train_plans.push_back(p);
  CHECK(count_pairs(train_plans, 50) == 98000);
  CHECK(count_pairs(train_plans, 51) == 100000);
  CHECK(code_of([&] { count_pairs(train_plans, 1); }) == Errc::parameter);
}

TEST_CASE("labelled pairs: count, shapes, static video, known shift") {
  const auto plan = plan_crops(96, 96, single_box())[0];
  PairConfig pc;
  pc.frames_per_section = 50;
  const auto moving = vibrating(96, 50, 0.8, 0.0);
  const auto pairs = build_labeled_pairs(moving, plan, pc);
  REQUIRE(pairs.size() == 49);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].pair_index == static_cast<int>(i) + 1);
    CHECK(pairs[i].reference.width() == 48);
    CHECK(pairs[i].current.height() == 48);
    CHECK(pairs[i].label.u.same_shape(48, 48));
    CHECK(pairs[i].reference.luma == pairs[0].reference.luma);
  }
  const auto& l = pairs[10].label;
  CHECK(l.mask_u.count() > 100);
  CHECK(std::abs(oracle::masked_median(l.u, l.mask_u.mask) - 0.4) < 0.05);
  CHECK(std::abs(oracle::masked_median(l.v, l.mask_v.mask)) < 0.05);
  for (std::size_t i = 0; i < l.u.size(); ++i) {
    if (!l.mask_u.mask.data[i]) CHECK(l.u.data[i] == 0.0);
    if (!l.mask_v.mask.data[i]) CHECK(l.v.data[i] == 0.0);
  }

  pc.frames_per_section = 5;
  for (const auto& p : build_labeled_pairs(vibrating(96, 5, 0.0, 0.0), plan, pc)) {
    for (double v : p.label.u.data) CHECK(v == 0.0);
    for (double v : p.label.v.data) CHECK(v == 0.0);
  }
}

TEST_CASE("labelled pair errors") {
  auto plan = plan_crops(96, 96, single_box())[0];
  PairConfig pc;
  pc.frames_per_section = 6;
  const auto video = vibrating(96, 10, 0.2, 0.0);
  plan.section_index = 1;
  CHECK(code_of([&] { build_labeled_pairs(video, plan, pc); }) == Errc::dimension);
  plan.section_index = 0;
  pc.frames_per_section = 1;
  CHECK(code_of([&] { build_labeled_pairs(video, plan, pc); }) == Errc::parameter);
  pc.frames_per_section = 4;
  plan.box.x0 = 10;
  CHECK(code_of([&] { build_labeled_pairs(video, plan, pc); }) == Errc::dimension);
}

TEST_CASE("flipped pairs are transposed copies with u and v exchanged") {
  const auto video = vibrating(96, 4, 0.6, -0.3, 4);
  CropPlan orig{Segment::train, 0, {0, 0, 96, 96}, Source::original};
  CropPlan flip = orig;
  flip.source = Source::flipped;
  PairConfig pc;
  pc.frames_per_section = 4;
  const auto a = build_labeled_pairs(video, orig, pc);
  const auto b = build_labeled_pairs(video, flip, pc);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b[i].current.luma == transposed(a[i].current.luma));
    const Grid ut = transposed(a[i].label.v), vt = transposed(a[i].label.u);
    std::size_t mismatched = 0;
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) {
        mismatched += b[i].label.mask_u.mask(x, y) != a[i].label.mask_v.mask(y, x);
        mismatched += b[i].label.mask_v.mask(x, y) != a[i].label.mask_u.mask(y, x);
        if (b[i].label.mask_u.mask(x, y) && a[i].label.mask_v.mask(y, x))
          CHECK(std::abs(b[i].label.u(x, y) - ut(x, y)) < 1e-6);
        if (b[i].label.mask_v.mask(x, y) && a[i].label.mask_u.mask(y, x))
          CHECK(std::abs(b[i].label.v(x, y) - vt(x, y)) < 1e-6);
      }
    CHECK(mismatched == 0);
    CHECK(oracle::masked_median(b[i].label.u, b[i].label.mask_u.mask) == doctest::Approx(-0.15).epsilon(0.3));
  }
}

TEST_CASE("shard round trip") {
  testutil::TempDir dir("shard");
  const auto files = write_shards({sample(0.25f)}, dir / "one");
  REQUIRE(files.size() == 1);
  const auto back = read_dataset(dir / "one");
  REQUIRE(back.size() == 1);
  CHECK(back[0] == sample(0.25f));

  const auto none = write_shards({}, dir / "empty");
  CHECK(none.empty());
  CHECK(read_dataset(dir / "empty").empty());
  CHECK(code_of([&] { read_dataset(dir / "nowhere"); }) == Errc::io);
}

TEST_CASE("5,000 samples split into 4,096 + 904") {
  testutil::TempDir dir("shard5k");
  {
    ShardWriter w(dir.path());
    for (int i = 0; i < 5000; ++i) w.add(sample(static_cast<float>(i)));
    CHECK(w.finish() == 5000);
    REQUIRE(w.files().size() == 2);
    CHECK(w.files()[0].filename() == "shard_00000.sfds");
  }
  CHECK(read_shard(dir / "shard_00000.sfds").size() == 4096);
  const auto tail = read_shard(dir / "shard_00001.sfds", 1);
  REQUIRE(tail.size() == 904);
  CHECK(tail.back() == sample(4999.0f));
  CHECK(read_dataset(dir.path()).size() == 5000);
}

TEST_CASE("corrupt and truncated shards") {
  testutil::TempDir dir("bad");
  write_shards({sample(1.0f), sample(2.0f)}, dir / "a");
  write_shards({sample(3.0f)}, dir / "b");
  const auto good = dir / "a" / "shard_00000.sfds";
  std::vector<char> bytes;
  {
    std::ifstream in(good, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto put = [&](const std::filesystem::path& p, std::vector<char> b) {
    std::ofstream out(p, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto magic = bytes;
  magic[1] = 'X';
  put(dir / "magic.sfds", magic);
  CHECK(code_of([&] { read_shard(dir / "magic.sfds"); }) == Errc::format);
  auto version = bytes;
  version[4] = 99;
  put(dir / "version.sfds", version);
  CHECK(code_of([&] { read_shard(dir / "version.sfds"); }) == Errc::format);

  // A truncated second shard names its index.
  auto cut = bytes;
  cut.resize(bytes.size() - 100);
  put(dir / "b" / "shard_00001.sfds", cut);
  std::string msg;
  CHECK(code_of([&] { read_dataset(dir / "b"); }, &msg) == Errc::io);
  CHECK(msg.find("shard 1") != std::string::npos);
}

TEST_CASE("built datasets: layout, counts, stored labels recompute, thread invariance") {
  testutil::TempDir dir("build");
  const auto video = vibrating(200, 9, 0.5, 0.2, 6);
  CropConfig c;
  c.sections = 2;
  c.boxes_per_section = {{Segment::train, 2}, {Segment::validation, 1}};
  c.segments = {{Segment::train, {0, 0, 100, 200}}, {Segment::validation, {100, 0, 100, 200}}};
  PairConfig pc;
  pc.frames_per_section = 4;
  const auto s1 = build_dataset(video, c, pc, dir / "t1", 1);
  const auto s3 = build_dataset(video, c, pc, dir / "t3", 3);
  CHECK(s1.plans == 12);
  CHECK(s1.pairs.at(Segment::train) == 2 * 2 * 2 * 3);
  CHECK(s1.pairs.at(Segment::validation) == 2 * 1 * 2 * 3);
  CHECK(s1.pairs.at(Segment::test) == 0);
  CHECK(s3.pairs == s1.pairs);
  CHECK_FALSE(std::filesystem::exists(dir / "t1" / "test"));

  const auto train = read_dataset(dir / "t1" / "train");
  CHECK(read_dataset(dir / "t3" / "train") == train);
  REQUIRE(train.size() == 24);
  {
    std::ifstream idx(dir / "t1" / "train" / "pairs.csv");
    std::string line;
    int rows = -1;
    while (std::getline(idx, line)) ++rows;
    CHECK(rows == 24);
  }

  PhaseEngine engine;
  for (const auto& s : train) {
    Frame ref(48, 48), cur(48, 48);
    ref.luma.data.assign(s.reference.begin(), s.reference.end());
    cur.luma.data.assign(s.current.begin(), s.current.end());
    const MotionField m = engine.estimate(ref, cur);
    for (std::size_t i = 0; i < m.u.size(); ++i) {
      CHECK(std::abs(m.u.data[i] - s.label_u[i]) <= 1e-6);
      CHECK(std::abs(m.v.data[i] - s.label_v[i]) <= 1e-6);
      CHECK(m.mask_u.mask.data[i] == s.mask_u[i]);
      CHECK(m.mask_v.mask.data[i] == s.mask_v[i]);
    }
  }

  pc.frames_per_section = 5;
  CHECK(code_of([&] { build_dataset(video, c, pc, dir / "short"); }) == Errc::dimension);
}
