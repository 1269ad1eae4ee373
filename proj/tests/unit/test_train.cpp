#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

#include "../common/oracles.hpp"
#include "../common/tempdir.hpp"
#include "subflow/error.hpp"
#include "subflow/synthetic.hpp"
#include "subflow/train.hpp"

using namespace subflow;
using namespace subflow::train;
using nn::Tensor4;

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

struct Fields {
  Tensor4<double> pred, label, mask;
};

Fields random_fields(int n, int h, int w, std::uint64_t seed, double mask_rate = 0.4) {
  std::mt19937_64 rng(seed);
  Fields f{Tensor4<double>(n, 2, h, w), Tensor4<double>(n, 2, h, w), Tensor4<double>(n, 2, h, w)};
  oracle::fill_uniform(f.pred.data, rng);
  oracle::fill_uniform(f.label.data, rng);
  std::bernoulli_distribution on(mask_rate);
  for (double& m : f.mask.data) m = on(rng) ? 1.0 : 0.0;
  return f;
}

// Central crops of a texture and of its shifted copy, labelled with the
// per-pair shift everywhere and masked inside a 4 px ring.
std::vector<dataset::StoredPair> shifted_pairs(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  std::vector<dataset::StoredPair> out;
  for (int i = 0; i < count; ++i) {
    const Frame big = generate_texture(seed * 100 + static_cast<std::uint64_t>(i), 96, 96, TextureKind::filtered_noise);
    const double du = d(rng), dv = d(rng);
    const Frame ref = crop(big, 24, 24, 48, 48);
    const Frame cur = crop(subpixel_shift(big, du, dv), 24, 24, 48, 48);
    dataset::StoredPair p;
    p.reference.assign(ref.luma.data.begin(), ref.luma.data.end());
    p.current.assign(cur.luma.data.begin(), cur.luma.data.end());
    p.label_u.assign(48 * 48, static_cast<float>(du));
    p.label_v.assign(48 * 48, static_cast<float>(dv));
    p.mask_u.assign(48 * 48, 0);
    for (int y = 4; y < 44; ++y)
      for (int x = 4; x < 44; ++x) p.mask_u[static_cast<std::size_t>(y) * 48 + x] = 1;
    p.mask_v = p.mask_u;
    out.push_back(std::move(p));
  }
  return out;
}

nn::ArchConfig small_arch() {
  nn::ArchConfig a = nn::default_arch(nn::Variant::subflownet_c);
  a.encoder = {4, 4, 8, 8};
  a.decoder = {8, 4, 4};
  a.head = {8};
  return a;
}

TrainConfig small_config(int epochs) {
  TrainConfig c;
  c.arch = small_arch();
  c.epochs = epochs;
  c.batch_size = 4;
  c.seed = 3;
  c.deterministic = true;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

nn::NetworkParams<float> scalar_network(float w0) {
  nn::NetworkParams<float> p;
  p.layers.emplace_back("scalar", nn::conv_spec(1, 1, 1, 1));
  p.layers[0].weight[0] = w0;
  return p;
}

nn::Gradients<float> scalar_grad(float g) {
  nn::Gradients<float> gr;
  gr.weight = {{g}};
  gr.bias = {{0.0f}};
  return gr;
}

}  // namespace

TEST_CASE("loss: exact prediction, 3-4-5 residual, empty masks") {
  Tensor4<double> p(1, 2, 1, 1), l(1, 2, 1, 1), m(1, 2, 1, 1, 1.0);
  CHECK(epe_loss(p, l, m).total == 0.0);
  l.data = {3.0, 4.0};
  const auto r = epe_loss(p, l, m);
  CHECK(r.full_epe == doctest::Approx(5.0));
  CHECK(r.sparse_epe == doctest::Approx(5.0));
  CHECK(r.total == doctest::Approx(10.0));
  CHECK(r.masked_pixel_count == 1);
  CHECK(r.total_pixel_count == 1);

  auto f = random_fields(2, 6, 5, 1);
  std::fill(f.mask.data.begin(), f.mask.data.end(), 0.0);
  const auto e = epe_loss(f.pred, f.label, f.mask);
  CHECK(e.sparse_epe == 0.0);
  CHECK(e.total == e.full_epe);
  CHECK(e.masked_pixel_count == 0);
}

TEST_CASE("loss matches the brute-force oracle for both sparse normalizations") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = random_fields(3, 9, 11, seed);
    for (auto norm : {SparseNorm::all_pixels, SparseNorm::masked_pixels}) {
      LossConfig cfg;
      cfg.sparse_norm = norm;
      const auto r = epe_loss(f.pred, f.label, f.mask, cfg);
      const auto o = oracle::brute_epe(f.pred, f.label, f.mask, norm == SparseNorm::masked_pixels);
      CHECK(std::abs(r.full_epe - o.full) < 1e-10);
      CHECK(std::abs(r.sparse_epe - o.sparse) < 1e-10);
      CHECK(r.total == doctest::Approx(r.full_epe + r.sparse_epe).epsilon(1e-15));
      cfg.mask_loss_enabled = false;
      const auto a = epe_loss(f.pred, f.label, f.mask, cfg);
      CHECK(a.objective == a.full_epe);
      CHECK(a.sparse_epe == r.sparse_epe);
    }
  }
  const auto f = random_fields(1, 4, 4, 9);
  CHECK(code_of([&] { epe_loss(f.pred, Tensor4<double>(1, 2, 4, 3), f.mask); }) == Errc::dimension);
  CHECK(code_of([&] { epe_loss(Tensor4<double>(1, 3, 4, 4), Tensor4<double>(1, 3, 4, 4), Tensor4<double>(1, 3, 4, 4)); }) ==
        Errc::dimension);
  CHECK(parse_sparse_norm(sparse_norm_name(SparseNorm::masked_pixels)) == SparseNorm::masked_pixels);
  CHECK(code_of([] { parse_sparse_norm("Q"); }) == Errc::parameter);
}

TEST_CASE("loss gradient matches finite differences") {
  for (auto norm : {SparseNorm::all_pixels, SparseNorm::masked_pixels})
    for (bool enabled : {true, false}) {
      auto f = random_fields(2, 5, 6, 4);
      LossConfig cfg;
      cfg.sparse_norm = norm;
      cfg.mask_loss_enabled = enabled;
      Tensor4<double> g;
      epe_loss(f.pred, f.label, f.mask, cfg, &g);
      const double h = 1e-5;
      double worst = 0.0;
      for (std::size_t i = 0; i < f.pred.size(); ++i) {
        const double keep = f.pred.data[i];
        f.pred.data[i] = keep + h;
        const double up = epe_loss(f.pred, f.label, f.mask, cfg).objective;
        f.pred.data[i] = keep - h;
        const double down = epe_loss(f.pred, f.label, f.mask, cfg).objective;
        f.pred.data[i] = keep;
        worst = std::max(worst, oracle::relative_error(g.data[i], (up - down) / (2 * h), 1e-6));
      }
      CHECK(worst < 1e-5);
    }
}

TEST_CASE("loss gradient is zero at zero residual") {
  auto f = random_fields(1, 3, 3, 5);
  f.pred.data = f.label.data;
  Tensor4<double> g;
  epe_loss(f.pred, f.label, f.mask, {}, &g);
  for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("masked pixels receive at least the full-term gradient") {
  const auto f = random_fields(2, 8, 8, 6);
  LossConfig with, without;
  without.mask_loss_enabled = false;
  Tensor4<double> gw, go;
  epe_loss(f.pred, f.label, f.mask, with, &gw);
  epe_loss(f.pred, f.label, f.mask, without, &go);
  std::size_t masked = 0;
  for (int b = 0; b < 2; ++b)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double nw = std::hypot(gw.at(b, 0, y, x), gw.at(b, 1, y, x));
        const double no = std::hypot(go.at(b, 0, y, x), go.at(b, 1, y, x));
        if (f.mask.at(b, 0, y, x) != 0.0 || f.mask.at(b, 1, y, x) != 0.0) {
          ++masked;
          CHECK(nw >= no - 1e-15);
        } else {
          CHECK(nw == doctest::Approx(no).epsilon(1e-14));
        }
      }
  CHECK(masked > 0);
}

TEST_CASE("adam: first step moves by about the learning rate") {
  TrainState s(scalar_network(0.5f));
  AdamConfig cfg;
  adam_step(s, scalar_grad(1.0f), cfg);
  CHECK(s.step == 1);
  CHECK(s.params.layers[0].weight[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
  CHECK(s.m_weight[0][0] == doctest::Approx(0.1));
  CHECK(s.v_weight[0][0] == doctest::Approx(0.001));

  TrainState n(scalar_network(0.5f));
  adam_step(n, scalar_grad(-4.0f), cfg);
  CHECK(n.params.layers[0].weight[0] == doctest::Approx(0.5 + 1e-3).epsilon(1e-6));
}

TEST_CASE("adam: zero gradients leave parameters and decay moments") {
  TrainState s(scalar_network(0.25f));
  s.m_weight[0][0] = 0.0;
  s.v_weight[0][0] = 0.0;
  adam_step(s, scalar_grad(0.0f), {});
  CHECK(s.params.layers[0].weight[0] == 0.25f);
  s.m_weight[0][0] = 0.2;
  s.v_weight[0][0] = 0.3;
  const float before = s.params.layers[0].weight[0];
  auto z = scalar_grad(0.0f);
  adam_step(s, z, {});
  CHECK(s.m_weight[0][0] == doctest::Approx(0.18));
  CHECK(s.v_weight[0][0] == doctest::Approx(0.2997));
  CHECK(s.params.layers[0].weight[0] != before);
}

TEST_CASE("adam: deterministic over ten steps, non-finite gradients rejected") {
  auto run = [] {
    auto p = nn::build_network<float>(nn::Variant::subflownet_c, small_arch());
    nn::init_uniform(p, 1);
    TrainState s(p);
    std::mt19937_64 rng(2);
    for (int k = 0; k < 10; ++k) {
      nn::Gradients<float> g;
      g.reset(s.params);
      for (auto& w : g.weight) oracle::fill_uniform(w, rng);
      adam_step(s, g, {});
    }
    return s;
  };
  const auto a = run(), b = run();
  CHECK(a.step == 10);
  for (std::size_t l = 0; l < a.params.layers.size(); ++l) {
    CHECK(a.params.layers[l].weight == b.params.layers[l].weight);
    CHECK(a.m_weight[l] == b.m_weight[l]);
  }

  TrainState s(scalar_network(0.5f));
  std::string msg;
  CHECK(code_of([&] { adam_step(s, scalar_grad(std::numeric_limits<float>::quiet_NaN()), {}, 17); }, &msg) ==
        Errc::numeric);
  CHECK(msg.find("scalar") != std::string::npos);
  CHECK(msg.find("17") != std::string::npos);
  CHECK(s.params.layers[0].weight[0] == 0.5f);
  CHECK(code_of([&] { adam_step(s, nn::Gradients<float>{}, {}); }) == Errc::dimension);
}

TEST_CASE("train: empty data and bad configuration") {
  const auto d = shifted_pairs(2, 1);
  CHECK(code_of([&] { train::train({}, d, small_config(1)); }) == Errc::parameter);
  CHECK(code_of([&] { train::train(d, {}, small_config(1)); }) == Errc::parameter);
  auto c = small_config(1);
  c.batch_size = 0;
  CHECK(code_of([&] { train::train(d, d, c); }) == Errc::parameter);
  c = small_config(1);
  c.adam.learning_rate = -1.0;
  CHECK(code_of([&] { train::train(d, d, c); }) == Errc::parameter);
  c = small_config(1);
  c.checkpoint_path = "/proc/subflow-no-such-dir/best.sfck";
  CHECK(code_of([&] { train::train(d, d, c); }) == Errc::io);
  testutil::TempDir dir("badlog");
  { std::ofstream(dir / "file") << "x"; }
  c = small_config(1);
  c.log_path = dir / "file" / "log.csv";
  CHECK(code_of([&] { train::train(d, d, c); }) == Errc::io);
  CHECK(code_of([] { evaluate_loss(nn::build_network<float>(nn::Variant::subflownet_s), {}, {}); }) == Errc::parameter);
}

TEST_CASE("train: zero learning rate leaves parameters and logs one row") {
  testutil::TempDir dir("lr0");
  const auto d = shifted_pairs(1, 2);
  auto c = small_config(1);
  c.adam.learning_rate = 0.0;
  c.log_path = dir / "log.csv";
  c.checkpoint_path = dir / "best.sfck";
  auto init = nn::build_network<float>(nn::Variant::subflownet_c, small_arch());
  nn::init_uniform(init, c.seed);
  const auto r = train::train(d, d, c);
  REQUIRE(r.log.size() == 1);
  for (std::size_t l = 0; l < init.layers.size(); ++l) CHECK(r.state.params.layers[l].weight == init.layers[l].weight);
  const std::string log = slurp(dir / "log.csv");
  CHECK(log.rfind("epoch,train_full,train_sparse,train_total,val_full,val_sparse,val_total,seconds\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);
  CHECK(std::filesystem::exists(dir / "best.sfck"));
  CHECK(r.state.best_epoch == 1);
}

TEST_CASE("train: loss is independent of sample order at zero learning rate") {
  const auto d = shifted_pairs(6, 3);
  auto rev = d;
  std::reverse(rev.begin(), rev.end());
  auto c = small_config(2);
  c.adam.learning_rate = 0.0;
  const auto a = train::train(d, d, c), b = train::train(rev, rev, c);
  for (int e = 0; e < 2; ++e) {
    CHECK(a.log[e].train.total == doctest::Approx(b.log[e].train.total).epsilon(1e-6));
    CHECK(a.log[e].validation.total == doctest::Approx(b.log[e].validation.total).epsilon(1e-6));
  }
  CHECK(a.log[0].train.total == doctest::Approx(a.log[1].train.total).epsilon(1e-6));
  CHECK(a.log[0].validation.total == doctest::Approx(a.log[0].train.total).epsilon(1e-6));
}

TEST_CASE("train: repeated deterministic runs write identical logs and checkpoints") {
  testutil::TempDir dir("det");
  const auto d = shifted_pairs(8, 4), v = shifted_pairs(2, 5);
  for (const char* tag : {"a", "b"}) {
    auto c = small_config(3);
    c.log_path = dir / tag / "log.csv";
    c.checkpoint_path = dir / (std::string(tag) + ".sfck");
    std::filesystem::create_directories(dir / tag);
    train::train(d, v, c);
  }
  CHECK(slurp(dir / "a" / "log.csv") == slurp(dir / "b" / "log.csv"));
  CHECK(slurp(dir / "a.sfck") == slurp(dir / "b.sfck"));
  CHECK(slurp(dir / "a" / "log.csv").find(",0.000") != std::string::npos);
}

TEST_CASE("train: overfitting ten pairs cuts the training loss tenfold") {
  const auto d = shifted_pairs(10, 6);
  auto c = small_config(500);
  c.arch.reset();
  c.batch_size = 10;
  c.adam.learning_rate = 3e-3;
  int epochs = 0;
  const auto r = train::train(d, {d[0]}, c, [&](const EpochRecord&) { ++epochs; });
  CHECK(epochs == 500);
  const double first = r.log.front().train.total, last = r.log.back().train.total;
  MESSAGE("train total: epoch 1 " << first << ", epoch 500 " << last);
  CHECK(last * 10.0 <= first);

  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (const auto& e : r.log)
    if (e.validation.objective < best) {
      best = e.validation.objective;
      best_epoch = e.epoch;
    }
  CHECK(r.state.best_validation_loss == best);
  CHECK(r.state.best_epoch == best_epoch);
  CHECK(evaluate_loss(r.best_params, {d[0]}, {}).objective == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("make_batch packs samples in order") {
  const auto d = shifted_pairs(3, 7);
  const std::vector<std::size_t> order{2, 0, 1};
  const auto b = make_batch(d, order, 1, 3);
  CHECK(b.reference.n == 2);
  CHECK(b.label.c == 2);
  CHECK(b.reference.data[5] == d[0].reference[5]);
  CHECK(b.label.at(1, 1, 3, 3) == d[1].label_v[3 * 48 + 3]);
  CHECK(b.mask.at(0, 0, 0, 0) == 0.0f);
  CHECK(b.mask.at(0, 0, 10, 10) == 1.0f);
  CHECK(code_of([&] { make_batch(d, order, 2, 2); }) == Errc::parameter);
}
