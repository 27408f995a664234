#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "flygm/persistence.hpp"
#include "support.hpp"

using namespace flygm;

namespace {

std::vector<NamedTensor> sample_tensors() {
  std::vector<NamedTensor> ts;
  ts.push_back(NamedTensor::scalar("alpha", 2.5));
  std::vector<double> v = {1.0, -2.0, 0.25};
  ts.push_back(NamedTensor::vec("vee", v));
  Rng rng(3);
  ts.push_back(NamedTensor::matrix("mat64", Tensor2<double>::gaussian(3, 4, 1.0, rng)));
  ts.push_back(NamedTensor::matrix("mat32", Tensor2<float>::gaussian(2, 5, 1.0, rng)));
  return ts;
}

}  // namespace

TEST_CASE("tensor container roundtrips and re-saves byte identically") {
  testsupport::TmpDir tmp("pers_tensors");
  auto ts = sample_tensors();
  const auto p1 = tmp.file("a.fgm");
  save_tensors(p1, ts);

  auto back = load_tensors(p1);
  REQUIRE(back.size() == ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].name == ts[i].name);
    CHECK(back[i].dtype == ts[i].dtype);
    CHECK(back[i].dims == ts[i].dims);
    CHECK(back[i].raw == ts[i].raw);
  }
  CHECK(back[0].as_scalar() == 2.5);
  CHECK(find_tensor(back, "vee") != nullptr);
  CHECK(find_tensor(back, "nope") == nullptr);
  CHECK_THROWS_AS(require_tensor(back, "nope"), DataError);
  auto m = back[2].as_matrix<double>();
  CHECK(m.rows == 3);
  CHECK(m.cols == 4);
  CHECK_THROWS_AS(back[2].as_matrix<float>(), DataError);  // precision mismatch
  CHECK_THROWS_AS(back[0].as_matrix<double>(), DataError); // rank mismatch

  const auto p2 = tmp.file("b.fgm");
  save_tensors(p2, back);
  CHECK(testsupport::slurp(p1) == testsupport::slurp(p2));
}

TEST_CASE("corruption, bad magic, and truncation are rejected") {
  testsupport::TmpDir tmp("pers_bad");
  const auto path = tmp.file("t.fgm");
  save_tensors(path, sample_tensors());

  auto expect_throw = [&](const std::string& file, const char* needle) {
    std::string msg;
    try {
      load_tensors(file);
    } catch (const DataError& e) {
      msg = e.what();
    }
    INFO("expected substring: " << needle << "; got: " << msg);
    CHECK(msg.find(needle) != std::string::npos);
  };

  std::string good = testsupport::slurp(path);

  {
    std::string bad = good;
    bad[bad.size() / 2] ^= 0x40;
    const auto p = tmp.file("corrupt.fgm");
    testsupport::spit(p, bad);
    expect_throw(p, "checksum mismatch");
  }
  {
    std::string bad = good.substr(0, good.size() - 5);
    const auto p = tmp.file("short.fgm");
    testsupport::spit(p, bad);
    CHECK_THROWS_AS(load_tensors(p), DataError);
  }
  {
    std::string msg;
    try {
      load_tensors(path, "FGO1");
    } catch (const DataError& e) {
      msg = e.what();
    }
    CHECK(msg.find("not a") != std::string::npos);
  }
  CHECK_THROWS_AS(load_tensors(tmp.file("missing.fgm")), DataError);
}

TEST_CASE("policy checkpoints restore behavior exactly") {
  testsupport::TmpDir tmp("pers_ckpt");
  SynthSpec spec;
  spec.n_afferent = 3;
  spec.n_intrinsic = 6;
  spec.n_efferent = 3;
  spec.n_edges = 28;
  spec.seed = 2;
  Connectome g = synth_connectome(spec);
  CsrMatrix op = build_signed_operator(g);
  FlyGMConfig cfg;
  cfg.channels = 4;
  cfg.descriptor_dim = 3;
  cfg.enc_dim = 4;
  cfg.k_iters = 2;
  cfg.update_hidden = 6;
  cfg.dec_hidden = 8;

  FlyGMPolicy<double> a(g, op, 5, 2, cfg, 7);
  Rng rng(9);
  std::vector<double> obs(5);
  for (int i = 0; i < 20; ++i) {
    for (auto& v : obs) v = rng.normal();
    a.norm.update(obs);
  }
  a.norm.freeze();
  for (auto& v : obs) v = rng.normal();
  ActionDist before = a.act(obs);

  const auto path = tmp.file("pol.fgm");
  save_checkpoint(path, a);

  FlyGMPolicy<double> b(g, op, 5, 2, cfg, 99);  // different init
  load_policy_state(b, load_tensors(path));
  CHECK(b.norm.count() == a.norm.count());
  CHECK(b.norm.frozen());
  b.reset_state();
  a.reset_state();
  ActionDist da = a.act(obs);
  ActionDist db = b.act(obs);
  REQUIRE(da.mu.size() == db.mu.size());
  for (size_t i = 0; i < da.mu.size(); ++i) {
    CHECK(db.mu[i] == da.mu[i]);
    CHECK(db.sigma[i] == da.sigma[i]);
  }
  // the pre-save act used the same params, so it must agree as well
  for (size_t i = 0; i < da.mu.size(); ++i) CHECK(before.mu[i] == da.mu[i]);

  SUBCASE("optimizer state rides along") {
    AdamState<double> adam;
    adam.init_like(a.params);
    adam.t = 17;
    Rng r2(5);
    for (auto& t : adam.m)
      for (auto& x : t.data) x = r2.normal();
    for (auto& t : adam.v)
      for (auto& x : t.data) x = std::abs(r2.normal());
    const auto p2 = tmp.file("pol_opt.fgm");
    save_checkpoint(p2, a, &adam);

    AdamState<double> got;
    FlyGMPolicy<double> c(g, op, 5, 2, cfg, 100);
    load_policy_state(c, load_tensors(p2), &got);
    CHECK(got.t == 17);
    REQUIRE(got.m.size() == adam.m.size());
    for (size_t i = 0; i < adam.m.size(); ++i) {
      CHECK(max_abs_diff(got.m[i], adam.m[i]) == 0.0);
      CHECK(max_abs_diff(got.v[i], adam.v[i]) == 0.0);
    }
  }

  SUBCASE("kind, dims, and shapes are checked") {
    MlpPolicy<double> mlp(5, 2, MlpConfig{4, 6, 1e-4}, 3);
    const auto pm = tmp.file("mlp.fgm");
    save_checkpoint(pm, mlp);
    FlyGMPolicy<double> f2(g, op, 5, 2, cfg, 1);
    CHECK_THROWS_AS(load_policy_state(f2, load_tensors(pm)), DataError);

    MlpPolicy<double> wrong_obs(6, 2, MlpConfig{4, 6, 1e-4}, 3);
    CHECK_THROWS_AS(load_policy_state(wrong_obs, load_tensors(pm)), DataError);

    FlyGMConfig cfg2 = cfg;
    cfg2.channels = 5;  // same names, different shapes
    FlyGMPolicy<double> f3(g, op, 5, 2, cfg2, 1);
    CHECK_THROWS_AS(load_policy_state(f3, load_tensors(path)), DataError);
  }
}

TEST_CASE("value net state roundtrips") {
  testsupport::TmpDir tmp("pers_value");
  ValueNet<double> v(6, 8, 11);
  std::vector<double> x = {0.1, -0.4, 0.9, 0.0, 1.2, -0.3};
  const double before = v.eval(x);

  const auto path = tmp.file("val.fgm");
  save_tensors(path, value_state_tensors(v));

  ValueNet<double> w(6, 8, 99);
  CHECK(w.eval(x) != before);  // different init almost surely
  load_value_state(w, load_tensors(path));
  CHECK(w.eval(x) == before);

  // a policy checkpoint is not a value function
  MlpPolicy<double> mlp(6, 2, MlpConfig{4, 6, 1e-4}, 3);
  const auto pm = tmp.file("mlp.fgm");
  save_checkpoint(pm, mlp);
  CHECK_THROWS_AS(load_value_state(w, load_tensors(pm)), DataError);

  ValueNet<double> narrow(5, 8, 11);
  CHECK_THROWS_AS(load_value_state(narrow, load_tensors(path)), DataError);
}

TEST_CASE("dataset storage is single precision and stable on the second trip") {
  testsupport::TmpDir tmp("pers_ds");
  Dataset ds;
  ds.env_name = "pointfly-walk";
  ds.obs_dim = 3;
  ds.act_dim = 2;
  ds.cmd_dim = 2;
  ds.dt = 0.01;
  ds.episode_len = 4;
  Rng rng(8);
  for (int e = 0; e < 2; ++e) {
    DatasetEpisode ep;
    ep.command = {0.4, 0.1 * e};
    ep.length = 4;
    for (int t = 0; t < 4; ++t) {
      for (int i = 0; i < 3; ++i) ep.obs.push_back(rng.normal());
      for (int i = 0; i < 2; ++i) ep.action.push_back(rng.normal());
      for (int i = 0; i < 2; ++i) ep.expert_mu.push_back(rng.normal());
      for (int i = 0; i < 2; ++i) ep.expert_sigma.push_back(0.05);
      ep.reward.push_back(rng.normal());
      ep.done.push_back(t == 3 ? 1 : 0);
    }
    ds.episodes.push_back(std::move(ep));
  }

  const auto p1 = tmp.file("d.fgd");
  save_dataset(p1, ds);
  Dataset back = load_dataset(p1);
  CHECK(back.env_name == ds.env_name);
  CHECK(back.obs_dim == 3);
  CHECK(back.act_dim == 2);
  CHECK(back.cmd_dim == 2);
  CHECK(back.dt == ds.dt);
  CHECK(back.episode_len == 4);
  REQUIRE(back.episodes.size() == 2);
  CHECK(back.episodes[1].command == ds.episodes[1].command);  // commands stay f64
  for (size_t e = 0; e < 2; ++e) {
    const auto& be = back.episodes[e];
    const auto& oe = ds.episodes[e];
    CHECK(be.length == 4);
    REQUIRE(be.obs.size() == oe.obs.size());
    for (size_t i = 0; i < oe.obs.size(); ++i) CHECK(be.obs[i] == double(float(oe.obs[i])));
    for (size_t i = 0; i < oe.action.size(); ++i)
      CHECK(be.action[i] == double(float(oe.action[i])));
    CHECK(be.done == oe.done);
  }

  // the quantization is idempotent: a second trip is byte-identical
  const auto p2 = tmp.file("d2.fgd");
  save_dataset(p2, back);
  CHECK(testsupport::slurp(p1) == testsupport::slurp(p2));

  // corrupt byte detected
  std::string bad = testsupport::slurp(p1);
  bad[bad.size() / 3] ^= 0x01;
  const auto pb = tmp.file("bad.fgd");
  testsupport::spit(pb, bad);
  CHECK_THROWS_AS(load_dataset(pb), DataError);
}

TEST_CASE("state recording roundtrips") {
  testsupport::TmpDir tmp("pers_rec");
  StateRecording rec;
  rec.t_steps = 3;
  rec.n_neurons = 4;
  rec.channels = 2;
  // quarter steps survive the f32 storage exactly
  for (int i = 0; i < 3 * 4 * 2; ++i) rec.data.push_back(double(i) * 0.25 - 2.0);
  rec.flow = {0, 1, 1, 2};
  rec.superclass = {"sensory", "central", "optic", "motor"};

  const auto path = tmp.file("r.fgr");
  save_recording(path, rec);
  StateRecording back = load_recording(path);
  CHECK(back.t_steps == 3);
  CHECK(back.n_neurons == 4);
  CHECK(back.channels == 2);
  CHECK(back.data == rec.data);
  CHECK(back.flow == rec.flow);
  CHECK(back.superclass == rec.superclass);
  CHECK(back.at(1, 2, 1) == rec.data[(1 * 4 + 2) * 2 + 1]);

  StateRecording mismatched = rec;
  mismatched.flow.pop_back();
  CHECK_THROWS_AS(save_recording(tmp.file("x.fgr"), mismatched), std::logic_error);
  // wrong container kind
  CHECK_THROWS_AS(load_operator(path), DataError);
}

TEST_CASE("operator cache roundtrips exactly") {
  testsupport::TmpDir tmp("pers_op");
  SynthSpec spec;
  spec.n_afferent = 4;
  spec.n_intrinsic = 10;
  spec.n_efferent = 4;
  spec.n_edges = 70;
  spec.seed = 6;
  Connectome g = synth_connectome(spec);
  CsrMatrix op = build_signed_operator(g);

  const auto path = tmp.file("w.fgo");
  save_operator(path, op);
  CsrMatrix back = load_operator(path);
  CHECK(back.rows == op.rows);
  CHECK(back.cols == op.cols);
  CHECK(back.row_ptr == op.row_ptr);
  CHECK(back.col_idx == op.col_idx);
  CHECK(back.val == op.val);
  // the transpose view is rebuilt on load
  CHECK(back.t_row_ptr == op.t_row_ptr);
  CHECK(back.t_col_idx == op.t_col_idx);
  CHECK(back.t_val == op.t_val);
}

TEST_CASE("atomic writes leave no temp files behind") {
  testsupport::TmpDir tmp("pers_atomic");
  const auto path = tmp.file("note.txt");
  write_text_atomic(path, "first");
  write_text_atomic(path, "second version");
  CHECK(testsupport::slurp(path) == "second version");

  std::vector<uint8_t> payload = {1, 2, 3, 250, 255, 0, 7};
  const auto bin = tmp.file("blob.bin");
  write_file_atomic(bin, payload);
  CHECK(read_file_bytes(bin) == payload);

  int entries = 0;
  for (const auto& de : std::filesystem::directory_iterator(tmp.path))
    entries += de.is_regular_file() ? 1 : 0;
  CHECK(entries == 2);
}
