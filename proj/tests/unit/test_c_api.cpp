#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "../common/tempdir.hpp"
#include "subflow/subflow.h"

namespace {

sf_video* synth(sf_motion_kind motion, int frames, int size = 48, uint64_t seed = 1) {
  sf_synth_options o;
  sf_synth_options_default(&o);
  o.motion = motion;
  o.frames = frames;
  o.width = size;
  o.height = size;
  o.seed = seed;
  sf_video* v = nullptr;
  REQUIRE(sf_video_synthesize(&o, &v) == SF_OK);
  return v;
}

std::vector<double> frame(const sf_video* v, int i) {
  int w = 0, h = 0, n = 0;
  double fr = 0;
  REQUIRE(sf_video_info(v, &w, &h, &n, &fr) == SF_OK);
  std::vector<double> buf(static_cast<std::size_t>(w) * h);
  REQUIRE(sf_video_frame(v, i, buf.data(), buf.size()) == SF_OK);
  return buf;
}

bool mentions(const char* text, const char* needle) { return std::string(text).find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("status names, version and threads") {
  CHECK(std::string(sf_version()).size() > 0);
  CHECK(std::string(sf_status_name(SF_OK)) != std::string(sf_status_name(SF_ERR_IO)));
  CHECK(sf_resolve_threads(3) == 3);
  setenv("SUBFLOW_THREADS", "2", 1);
  CHECK(sf_resolve_threads(0) == 2);
  unsetenv("SUBFLOW_THREADS");
  CHECK(sf_resolve_threads(0) == 1);
}

TEST_CASE("null arguments and last error") {
  sf_video* v = nullptr;
  CHECK(sf_video_synthesize(nullptr, &v) == SF_ERR_PARAMETER);
  CHECK(v == nullptr);
  CHECK(mentions(sf_last_error(), "null"));
  CHECK(sf_video_load("/nonexistent/dir", SF_FORMAT_PGM_SEQUENCE, &v) == SF_ERR_IO);
  CHECK(v == nullptr);
  const std::string io = sf_last_error();
  CHECK(io.size() > 0);
  std::string other;
  std::thread([&] {
    sf_network* n = nullptr;
    CHECK(sf_network_load(nullptr, &n) == SF_ERR_PARAMETER);
    other = sf_last_error();
  }).join();
  CHECK(sf_last_error() == io);
  CHECK(other != io);
  sf_video_free(nullptr);
  sf_fields_free(nullptr);
  sf_network_free(nullptr);
  sf_estimator_free(nullptr);
}

TEST_CASE("synthesized video, truth and round trips") {
  testutil::TempDir dir("capi");
  sf_video* v = synth(SF_MOTION_DAMPED_SINE, 8);
  int w, h, n;
  double fr;
  REQUIRE(sf_video_info(v, &w, &h, &n, &fr) == SF_OK);
  CHECK((w == 48 && h == 48 && n == 8));
  CHECK(fr == 240.0);
  CHECK(sf_video_has_truth(v) == 1);
  double dx = 1, dy = 1;
  REQUIRE(sf_video_truth(v, 0, &dx, &dy) == SF_OK);
  CHECK((dx == 0.0 && dy == 0.0));
  CHECK(sf_video_truth(v, 8, &dx, &dy) != SF_OK);
  std::vector<double> small(10);
  CHECK(sf_video_frame(v, 0, small.data(), small.size()) == SF_ERR_DIMENSION);

  const std::string raw = (dir / "v.raw").string();
  REQUIRE(sf_video_save(v, raw.c_str(), SF_FORMAT_RAW_F32) == SF_OK);
  sf_video* back = nullptr;
  REQUIRE(sf_video_load(raw.c_str(), SF_FORMAT_RAW_F32, &back) == SF_OK);
  CHECK(sf_video_has_truth(back) == 0);
  CHECK(sf_video_truth(back, 1, &dx, &dy) == SF_ERR_STATE);
  const auto a = frame(v, 3), b = frame(back, 3);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  CHECK(diff < 1e-6);

  const std::string csv = (dir / "truth.csv").string();
  REQUIRE(sf_video_save_truth(v, csv.c_str()) == SF_OK);
  REQUIRE(sf_video_load_truth(back, csv.c_str(), 2.0) == SF_OK);
  double tx, ty, bx, by;
  sf_video_truth(v, 5, &tx, &ty);
  sf_video_truth(back, 5, &bx, &by);
  CHECK(bx == doctest::Approx(2.0 * tx).epsilon(1e-6));
  CHECK(by == doctest::Approx(2.0 * ty).epsilon(1e-6));

  sf_video* half = nullptr;
  REQUIRE(sf_video_downsample(v, 1, &half) == SF_OK);
  sf_video_info(half, &w, &h, &n, &fr);
  CHECK((w == 24 && h == 24 && n == 8));
  sf_video_truth(half, 5, &bx, &by);
  CHECK(bx == doctest::Approx(0.5 * tx));

  sf_video_free(half);
  sf_video_free(back);
  sf_video_free(v);
}

TEST_CASE("phase estimator on static and moving video") {
  sf_estimator* est = nullptr;
  REQUIRE(sf_estimator_phase(nullptr, &est) == SF_OK);
  CHECK(std::string(sf_estimator_name(est)).size() > 0);
  sf_video* still = synth(SF_MOTION_ZERO, 4, 64);
  sf_fields* f = nullptr;
  REQUIRE(sf_estimator_run(est, still, &f) == SF_OK);
  CHECK(sf_fields_count(f) == 3);
  int w, h;
  sf_fields_shape(f, &w, &h);
  std::vector<double> u(w * h), vv(w * h);
  std::vector<uint8_t> mu(w * h);
  REQUIRE(sf_fields_get(f, 2, u.data(), vv.data(), mu.data(), nullptr, u.size()) == SF_OK);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK((u[i] == 0.0 && vv[i] == 0.0));
  CHECK(sf_fields_get(f, 3, u.data(), nullptr, nullptr, nullptr, u.size()) != SF_OK);
  sf_fields_free(f);

  sf_video* moving = synth(SF_MOTION_DAMPED_SINE, 30, 64, 4);
  REQUIRE(sf_estimator_run(est, moving, &f) == SF_OK);
  sf_fields* truth = nullptr;
  REQUIRE(sf_fields_truth(moving, f, &truth) == SF_OK);
  double mae_u, mae_v;
  size_t cu, cv;
  REQUIRE(sf_fields_mae(f, truth, SF_REGION_MASKED, &mae_u, &mae_v, &cu, &cv) == SF_OK);
  CHECK(cu > 0);
  double su = 0, sv = 0;
  size_t nu = 0, nv = 0;
  std::vector<double> tu(w * h), tv(w * h);
  std::vector<uint8_t> mv(w * h);
  for (int i = 0; i < sf_fields_count(f); ++i) {
    sf_fields_get(f, i, u.data(), vv.data(), nullptr, nullptr, u.size());
    sf_fields_get(truth, i, tu.data(), tv.data(), mu.data(), mv.data(), u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
      if (mu[k]) su += std::abs(u[k] - tu[k]), ++nu;
      if (mv[k]) sv += std::abs(vv[k] - tv[k]), ++nv;
    }
  }
  CHECK(cu == nu);
  CHECK(cv == nv);
  CHECK(mae_u == doctest::Approx(su / nu).epsilon(1e-12));
  CHECK(mae_v == doctest::Approx(sv / nv).epsilon(1e-12));
  const double coefs[] = {1.0, 2.0, 1e6};
  double mae[3];
  size_t cnt[3];
  REQUIRE(sf_fields_sweep(f, truth, moving, nullptr, coefs, 3, mae, cnt) == SF_OK);
  CHECK(cnt[0] == cu + cv);
  CHECK(mae[0] == doctest::Approx((mae_u * cu + mae_v * cv) / double(cu + cv)).epsilon(1e-9));
  CHECK(cnt[1] <= cnt[0]);
  CHECK(cnt[2] == 0);
  CHECK(std::isnan(mae[2]));

  testutil::TempDir dir("capi_fields");
  const int xy[] = {32, 32, 20, 40};
  const std::string hist = (dir / "h.csv").string();
  CHECK(sf_fields_write_time_history(f, moving, xy, 2, hist.c_str()) == SF_OK);
  CHECK(std::filesystem::exists(hist));
  CHECK(sf_fields_write_csv(f, (dir / "grids").string().c_str()) == SF_OK);
  CHECK(std::filesystem::exists(dir / "grids" / "u_00001.csv"));
  double ru, rv;
  CHECK(sf_fields_rms_vs_truth(f, moving, 32, 32, &ru, &rv) == SF_OK);
  CHECK(std::isfinite(ru));
  CHECK(sf_fields_rms_vs_truth(f, moving, 64, 0, &ru, &rv) == SF_ERR_PARAMETER);
  CHECK(sf_fields_truth(still, f, &truth) != SF_OK);

  sf_fields_free(truth);
  sf_fields_free(f);
  sf_video_free(moving);
  sf_video_free(still);
  sf_estimator_free(est);
}

TEST_CASE("network create, save, load and predict") {
  testutil::TempDir dir("capi_net");
  sf_network* net = nullptr;
  REQUIRE(sf_network_create(SF_SUBFLOWNET_C, nullptr, 7, &net) == SF_OK);
  sf_variant var;
  size_t params = 0;
  REQUIRE(sf_network_info(net, &var, &params) == SF_OK);
  CHECK(var == SF_SUBFLOWNET_C);
  CHECK(params == 34882);
  sf_arch_options arch, def;
  sf_network_arch(net, &arch);
  sf_arch_options_default(SF_SUBFLOWNET_C, &def);
  CHECK(arch.encoder[3] == def.encoder[3]);
  CHECK(arch.head_count == def.head_count);
  CHECK(sf_network_create(static_cast<sf_variant>(9), nullptr, 7, &net) == SF_ERR_PARAMETER);

  sf_video* v = synth(SF_MOTION_SINE, 2);
  const auto r = frame(v, 0), c = frame(v, 1);
  std::vector<double> u1(48 * 48), v1(48 * 48), u2(48 * 48), v2(48 * 48);
  REQUIRE(sf_network_predict(net, r.data(), c.data(), 48, 48, u1.data(), v1.data()) == SF_OK);
  const std::string path = (dir / "n.sfck").string();
  REQUIRE(sf_network_save(net, path.c_str()) == SF_OK);
  sf_network* back = nullptr;
  REQUIRE(sf_network_load(path.c_str(), &back) == SF_OK);
  REQUIRE(sf_network_predict(back, r.data(), c.data(), 48, 48, u2.data(), v2.data()) == SF_OK);
  CHECK(u1 == u2);
  CHECK(v1 == v2);
  CHECK(sf_network_predict(net, r.data(), c.data(), 44, 44, u1.data(), v1.data()) == SF_ERR_DIMENSION);

  size_t count = 0;
  REQUIRE(sf_network_export_filters(net, (dir / "filters").string().c_str(), &count) == SF_OK);
  CHECK(count == 8);

  REQUIRE(sf_network_set_zero(back) == SF_OK);
  sf_network_predict(back, r.data(), c.data(), 48, 48, u2.data(), v2.data());
  for (double x : u2) CHECK(x == 0.0);

  sf_estimator* est = nullptr;
  REQUIRE(sf_estimator_network(back, nullptr, 1, &est) == SF_OK);
  sf_fields* f = nullptr;
  REQUIRE(sf_estimator_run(est, v, &f) == SF_OK);
  CHECK(sf_fields_count(f) == 1);
  sf_fields_free(f);
  sf_estimator_free(est);

  sf_bench_report rep;
  REQUIRE(sf_benchmark(back, 10, 1, 1, &rep) == SF_OK);
  CHECK(rep.n_pairs == 10);
  CHECK(rep.net_ms_per_pair > 0);
  CHECK(sf_benchmark(back, 3, 1, 1, &rep) == SF_ERR_PARAMETER);

  CHECK(sf_network_load((dir / "missing.sfck").string().c_str(), &back) == SF_ERR_IO);
  sf_video_free(v);
  sf_network_free(back);
  sf_network_free(net);
}

TEST_CASE("dataset, training and evaluation through the interface") {
  testutil::TempDir dir("capi_ds");
  sf_video* v = synth(SF_MOTION_DAMPED_SINE, 4, 800, 5);
  sf_dataset_options o;
  sf_dataset_options_default(&o);
  o.sections = 1;
  o.frames_per_section = 3;
  o.first_frame = 0;
  o.train_boxes = 2;
  o.validation_boxes = 1;
  o.test_boxes = 1;
  o.include_flipped = 0;
  sf_dataset_summary plan, built;
  REQUIRE(sf_dataset_plan_count(800, 800, &o, &plan) == SF_OK);
  CHECK(plan.train_pairs == 2 * 2);
  REQUIRE(sf_dataset_build(v, &o, dir.path().string().c_str(), 1, &built) == SF_OK);
  CHECK(built.train_pairs == plan.train_pairs);
  CHECK(built.validation_pairs == plan.validation_pairs);
  size_t count = 0;
  REQUIRE(sf_dataset_count((dir / "train").string().c_str(), &count) == SF_OK);
  CHECK(count == built.train_pairs);
  o.train_fraction = 0.9;
  CHECK(sf_dataset_plan_count(800, 800, &o, &plan) == SF_ERR_PARAMETER);

  sf_train_options t;
  sf_train_options_default(&t);
  t.epochs = 2;
  t.batch_size = 2;
  t.deterministic = 1;
  t.threads = 1;
  int calls = 0;
  auto cb = [](const sf_epoch_report* r, void* user) {
    ++*static_cast<int*>(user);
    CHECK(std::isfinite(r->val_total));
  };
  sf_network* best = nullptr;
  sf_train_summary s;
  const std::string tr = (dir / "train").string(), va = (dir / "validation").string();
  REQUIRE(sf_train(tr.c_str(), va.c_str(), &t, cb, &calls, &best, &s) == SF_OK);
  CHECK(calls == 2);
  CHECK(s.epochs_run == 2);
  CHECK(s.train_samples == count);

  sf_dataset_eval ev;
  const double coefs[] = {1.0, 2.0};
  double mae[2];
  size_t cnt[2];
  REQUIRE(sf_evaluate_dataset(best, va.c_str(), nullptr, 1, coefs, 2, &ev, mae, cnt) == SF_OK);
  CHECK(ev.samples == built.validation_pairs);
  CHECK(std::isfinite(ev.masked));
  CHECK(cnt[1] <= cnt[0]);
  CHECK(sf_train((dir / "nope").string().c_str(), va.c_str(), &t, nullptr, nullptr, nullptr, nullptr) == SF_ERR_IO);
  sf_network_free(best);
  sf_video_free(v);
}
