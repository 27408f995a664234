#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "doctest.h"
#include "flygm/gradcheck.hpp"
#include "flygm/nullmodels.hpp"
#include "flygm/policy.hpp"
#include "support.hpp"

using namespace flygm;

namespace {

using Mat = Tensor2<double>;

Mat affine_plain(const Mat& x, const Mat& w, const Mat& b) {
  Mat y(x.rows, w.rows);
  for (int32_t i = 0; i < x.rows; ++i)
    for (int32_t o = 0; o < w.rows; ++o) {
      double acc = b.data[size_t(o)];
      for (int32_t k = 0; k < x.cols; ++k) acc += double(x.at(i, k)) * double(w.at(o, k));
      y.at(i, o) = acc;
    }
  return y;
}

Mat map_plain(Mat x, double (*f)(double)) {
  for (auto& v : x.data) v = f(v);
  return x;
}

double relu1(double x) { return x > 0.0 ? x : 0.0; }
double softplus1(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

Mat concat_cols_plain(const Mat& a, const Mat& b) {
  Mat y(a.rows, a.cols + b.cols);
  for (int32_t i = 0; i < a.rows; ++i) {
    for (int32_t j = 0; j < a.cols; ++j) y.at(i, j) = a.at(i, j);
    for (int32_t j = 0; j < b.cols; ++j) y.at(i, a.cols + j) = b.at(i, j);
  }
  return y;
}

Mat spmm_plain(const CsrMatrix& w, const Mat& h) {
  Mat y(w.rows, h.cols);
  for (int32_t r = 0; r < w.rows; ++r)
    for (int64_t k = w.row_ptr[r]; k < w.row_ptr[r + 1]; ++k)
      for (int32_t c = 0; c < h.cols; ++c) y.at(r, c) += w.val[k] * h.at(w.col_idx[k], c);
  return y;
}

struct PlainStep {
  Mat x_enc, h_gate, dec_in, mu, sigma, h_out;
  std::vector<Mat> m_iter, h_iter;
};

// independent re-statement of the recurrent step, stage by stage
PlainStep flygm_plain(const FlyGMPolicy<double>& p, const Mat& h_in,
                      const std::vector<double>& obs) {
  const auto& ps = p.params;
  const auto& g = p.graph();
  const auto& cfg = p.config();
  auto P = [&](const std::string& n) -> const Mat& {
    int i = ps.find(n);
    REQUIRE(i >= 0);
    return ps[i];
  };

  PlainStep out;
  Mat x(1, int32_t(obs.size()));
  x.data = obs;
  out.x_enc = map_plain(affine_plain(x, P("enc_w"), P("enc_b")), relu1);

  Mat h = h_in;
  {
    Mat ha(int32_t(g.afferent.size()), cfg.channels);
    Mat xb(int32_t(g.afferent.size()), out.x_enc.cols);
    for (size_t i = 0; i < g.afferent.size(); ++i) {
      for (int32_t c = 0; c < cfg.channels; ++c) ha.at(int32_t(i), c) = h.at(g.afferent[i], c);
      for (int32_t c = 0; c < out.x_enc.cols; ++c) xb.at(int32_t(i), c) = out.x_enc.at(0, c);
    }
    Mat gate = map_plain(affine_plain(concat_cols_plain(ha, xb), P("gate_w"), P("gate_b")),
                         [](double v) { return std::tanh(v); });
    for (size_t i = 0; i < g.afferent.size(); ++i)
      for (int32_t c = 0; c < cfg.channels; ++c) h.at(g.afferent[i], c) = gate.at(int32_t(i), c);
  }
  out.h_gate = h;

  const Mat& eta = P("eta");
  for (int k = 0; k < cfg.k_iters; ++k) {
    std::string tag = cfg.per_iter_update ? "_" + std::to_string(k) : "";
    Mat m = spmm_plain(p.op(), h);
    out.m_iter.push_back(m);
    Mat f1 = map_plain(
        affine_plain(concat_cols_plain(m, eta), P("upd1_w" + tag), P("upd1_b" + tag)), relu1);
    h = affine_plain(f1, P("upd2_w" + tag), P("upd2_b" + tag));
    out.h_iter.push_back(h);
  }
  out.h_out = h;

  Mat z(1, int32_t(g.efferent.size()) * cfg.channels);
  for (size_t i = 0; i < g.efferent.size(); ++i)
    for (int32_t c = 0; c < cfg.channels; ++c)
      z.at(0, int32_t(i) * cfg.channels + c) = h.at(g.efferent[i], c);
  out.dec_in = z;

  Mat d1 = map_plain(affine_plain(z, P("dec1_w"), P("dec1_b")), relu1);
  Mat d2 = map_plain(affine_plain(d1, P("dec2_w"), P("dec2_b")), relu1);
  out.mu = affine_plain(d2, P("mu_w"), P("mu_b"));
  out.sigma = map_plain(affine_plain(d2, P("sig_w"), P("sig_b")), softplus1);
  for (auto& v : out.sigma.data) v += cfg.sigma_floor;
  return out;
}

Connectome small_graph(uint64_t seed = 5) {
  SynthSpec spec;
  spec.n_afferent = 4;
  spec.n_intrinsic = 10;
  spec.n_efferent = 4;
  spec.n_edges = 90;
  spec.seed = seed;
  return synth_connectome(spec);
}

void check_step_against_plain(const FlyGMPolicy<double>& p, uint64_t data_seed) {
  Rng rng(data_seed);
  Mat h0 = Mat::gaussian(p.graph().size(), p.config().channels, 0.7, rng);
  std::vector<double> obs(size_t(p.obs_dim()));
  for (auto& v : obs) v = rng.normal();

  Tape<double> tape;
  StepTrace<double> trace;
  auto st = p.step_taped(tape, tape.constant(h0), obs, &trace);
  PlainStep plain = flygm_plain(p, h0, obs);

  const double tol = 1e-10;
  CHECK(max_abs_diff(trace.x_enc, plain.x_enc) < tol);
  CHECK(max_abs_diff(trace.h_gate, plain.h_gate) < tol);
  REQUIRE(trace.m_iter.size() == plain.m_iter.size());
  for (size_t k = 0; k < plain.m_iter.size(); ++k) {
    CHECK(max_abs_diff(trace.m_iter[k], plain.m_iter[k]) < tol);
    CHECK(max_abs_diff(trace.h_iter[k], plain.h_iter[k]) < tol);
  }
  CHECK(max_abs_diff(trace.dec_in, plain.dec_in) < tol);
  CHECK(max_abs_diff(tape.val(st.mu), plain.mu) < tol);
  CHECK(max_abs_diff(tape.val(st.sigma), plain.sigma) < tol);
  CHECK(max_abs_diff(tape.val(st.h_out), plain.h_out) < tol);
  for (double s : tape.val(st.sigma).data) CHECK(s >= p.config().sigma_floor);
}

}  // namespace

TEST_CASE("graph policy step matches a straight-line computation") {
  Connectome g = small_graph();
  CsrMatrix op = build_signed_operator(g);
  FlyGMConfig cfg;
  cfg.channels = 5;
  cfg.descriptor_dim = 3;
  cfg.enc_dim = 6;
  cfg.k_iters = 3;
  cfg.update_hidden = 7;
  cfg.dec_hidden = 9;
  cfg.sigma_floor = 1e-4;

  SUBCASE("shared update weights") {
    FlyGMPolicy<double> p(g, op, 4, 3, cfg, 11);
    check_step_against_plain(p, 101);
  }
  SUBCASE("per round update weights") {
    cfg.per_iter_update = true;
    FlyGMPolicy<double> p(g, op, 4, 3, cfg, 11);
    CHECK(p.params.find("upd1_w_0") >= 0);
    CHECK(p.params.find("upd1_w_2") >= 0);
    CHECK(p.params.find("upd1_w") < 0);
    check_step_against_plain(p, 102);
  }
}

TEST_CASE("message columns of the first update layer shrink with the operator norm") {
  Connectome g = small_graph(9);
  CsrMatrix ws = build_signed_operator(g);
  CsrMatrix wu = unit_weights(g);
  REQUIRE(ws.inf_norm() > wu.inf_norm());

  FlyGMConfig cfg;
  cfg.channels = 4;
  cfg.descriptor_dim = 3;
  FlyGMPolicy<double> pa(g, ws, 4, 3, cfg, 17);
  FlyGMPolicy<double> pb(g, wu, 4, 3, cfg, 17);
  const double sa = std::max(1.0, ws.inf_norm());
  const double sb = std::max(1.0, wu.inf_norm());

  const Mat& wa = pa.params[pa.params.find("upd1_w")];
  const Mat& wb = pb.params[pb.params.find("upd1_w")];
  REQUIRE(wa.cols == cfg.channels + cfg.descriptor_dim);
  for (int32_t r = 0; r < wa.rows; ++r) {
    for (int32_t c = 0; c < cfg.channels; ++c)
      CHECK(wa.at(r, c) * sa == doctest::Approx(wb.at(r, c) * sb).epsilon(1e-12));
    for (int32_t c = cfg.channels; c < wa.cols; ++c) CHECK(wa.at(r, c) == wb.at(r, c));
  }
  // all other parameter blocks come from the same seeded draws
  const Mat& ea = pa.params[pa.params.find("enc_w")];
  const Mat& eb = pb.params[pb.params.find("enc_w")];
  CHECK(max_abs_diff(ea, eb) == 0.0);
}

TEST_CASE("dense baseline step matches a straight-line computation") {
  MlpConfig cfg;
  cfg.enc_dim = 5;
  cfg.hidden = 6;
  cfg.sigma_floor = 1e-4;
  MlpPolicy<double> p(4, 3, cfg, 23);

  Rng rng(7);
  std::vector<double> obs(4);
  for (auto& v : obs) v = rng.normal();

  Tape<double> tape;
  StepTrace<double> trace;
  auto st = p.step_taped(tape, tape.constant(p.initial_state()), obs, &trace);

  const auto& ps = p.params;
  auto P = [&](const char* n) -> const Mat& { return ps[ps.find(n)]; };
  Mat x(1, 4);
  x.data = obs;
  Mat xe = map_plain(affine_plain(x, P("enc_w"), P("enc_b")), relu1);
  Mat f1 = map_plain(affine_plain(xe, P("fc1_w"), P("fc1_b")), relu1);
  Mat f2 = map_plain(affine_plain(f1, P("fc2_w"), P("fc2_b")), relu1);
  Mat mu = affine_plain(f2, P("mu_w"), P("mu_b"));
  Mat sg = map_plain(affine_plain(f2, P("sig_w"), P("sig_b")), softplus1);
  for (auto& v : sg.data) v += cfg.sigma_floor;

  CHECK(max_abs_diff(trace.x_enc, xe) < 1e-12);
  CHECK(max_abs_diff(tape.val(st.mu), mu) < 1e-12);
  CHECK(max_abs_diff(tape.val(st.sigma), sg) < 1e-12);
  CHECK(p.initial_state().size() == 0);
  CHECK(!p.recurrent());
  CHECK(!p.carry_state());
}

TEST_CASE("act carries state across steps and reset restores the start") {
  Connectome g = small_graph();
  CsrMatrix op = build_signed_operator(g);
  FlyGMConfig cfg;
  cfg.channels = 4;
  cfg.descriptor_dim = 3;
  cfg.enc_dim = 5;
  cfg.k_iters = 2;
  cfg.update_hidden = 6;
  cfg.dec_hidden = 8;

  std::vector<double> obs = {0.3, -0.8, 1.1, 0.2};

  SUBCASE("recurrent carry") {
    FlyGMPolicy<double> p(g, op, 4, 3, cfg, 31);
    p.norm.freeze();
    CHECK(p.state().rows == g.size());
    CHECK(p.state().cols == cfg.channels);

    ActionDist d1 = p.act(obs);
    Mat s1 = p.state();
    ActionDist d2 = p.act(obs);
    bool moved = false;
    for (size_t i = 0; i < d1.mu.size(); ++i) moved = moved || d1.mu[i] != d2.mu[i];
    CHECK(moved);

    p.reset_state();
    ActionDist d3 = p.act(obs);
    for (size_t i = 0; i < d1.mu.size(); ++i) {
      CHECK(d3.mu[i] == d1.mu[i]);
      CHECK(d3.sigma[i] == d1.sigma[i]);
    }
    CHECK(max_abs_diff(p.state(), s1) == 0.0);
  }

  SUBCASE("state drop between steps") {
    cfg.reset_each_step = true;
    FlyGMPolicy<double> p(g, op, 4, 3, cfg, 31);
    p.norm.freeze();
    CHECK(!p.carry_state());
    ActionDist d1 = p.act(obs);
    ActionDist d2 = p.act(obs);
    for (size_t i = 0; i < d1.mu.size(); ++i) {
      CHECK(d2.mu[i] == d1.mu[i]);
      CHECK(d2.sigma[i] == d1.sigma[i]);
    }
  }

  SUBCASE("dense baseline is stateless") {
    MlpPolicy<double> p(4, 3, MlpConfig{5, 6, 1e-6}, 31);
    p.norm.freeze();
    ActionDist d1 = p.act(obs);
    ActionDist d2 = p.act(obs);
    for (size_t i = 0; i < d1.mu.size(); ++i) CHECK(d2.mu[i] == d1.mu[i]);
  }
}

TEST_CASE("policy construction is deterministic in the seed") {
  Connectome g = small_graph();
  CsrMatrix op = build_signed_operator(g);
  FlyGMConfig cfg;
  FlyGMPolicy<double> a(g, op, 4, 3, cfg, 77);
  FlyGMPolicy<double> b(g, op, 4, 3, cfg, 77);
  REQUIRE(a.params.size() == b.params.size());
  for (int i = 0; i < a.params.size(); ++i) {
    CHECK(a.params.entries[size_t(i)].name == b.params.entries[size_t(i)].name);
    CHECK(max_abs_diff(a.params[i], b.params[i]) == 0.0);
  }
  FlyGMPolicy<double> c(g, op, 4, 3, cfg, 78);
  CHECK(max_abs_diff(a.params[a.params.find("enc_w")], c.params[c.params.find("enc_w")]) > 0.0);
}

TEST_CASE("policy rejects broken inputs") {
  {
    // no efferent neurons at all
    Connectome g;
    g.neurons.resize(2);
    g.neurons[0].flow = FlowClass::Afferent;
    g.neurons[1].flow = FlowClass::Intrinsic;
    for (auto& n : g.neurons) n.nt = NtType::ACH;
    g.edges.push_back({0, 1, 1, std::nullopt});
    g.sort_edges();
    g.rebuild_partition();
    CsrMatrix op = build_signed_operator(g);
    CHECK_THROWS_AS((FlyGMPolicy<double>(g, op, 3, 2, FlyGMConfig{}, 0)), DataError);
  }
  {
    Connectome g = small_graph();
    CsrMatrix op = build_signed_operator(g);
    FlyGMPolicy<double> p(g, op, 4, 3, FlyGMConfig{}, 0);
    Tape<double> tape;
    std::vector<double> short_obs = {0.1, 0.2};
    CHECK_THROWS_AS(p.step_taped(tape, tape.constant(p.initial_state()), short_obs),
                    std::logic_error);
  }
}

TEST_CASE("full graph policy step passes a gradient check") {
  SynthSpec spec;
  spec.n_afferent = 2;
  spec.n_intrinsic = 2;
  spec.n_efferent = 2;
  spec.n_edges = 8;
  spec.seed = 3;
  Connectome g = synth_connectome(spec);
  CsrMatrix op = build_signed_operator(g);

  FlyGMConfig cfg;
  cfg.channels = 3;
  cfg.descriptor_dim = 2;
  cfg.enc_dim = 3;
  cfg.k_iters = 2;
  cfg.update_hidden = 4;
  cfg.dec_hidden = 5;
  cfg.sigma_floor = 1e-3;
  FlyGMPolicy<double> p(g, op, 3, 2, cfg, 41);

  Rng rng(13);
  Mat h0 = Mat::gaussian(g.size(), cfg.channels, 0.5, rng);
  std::vector<double> obs = {0.4, -0.9, 0.6};

  auto f = [&](Tape<double>& t) {
    auto st = p.step_taped(t, t.constant(h0), obs);
    auto loss = t.add(t.mean(st.mu), t.mean(st.sigma));
    return t.add(loss, t.mean(st.h_out));
  };
  auto rep = grad_check(f, p.params, {});
  INFO("max rel err " << rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("value net matches a dense oracle and passes a gradient check") {
  ValueNet<double> v(5, 7, 42);
  Rng rng(19);
  Mat xb = Mat::gaussian(4, 5, 1.0, rng);

  Tape<double> tape;
  auto out = v.forward_taped(tape, tape.constant(xb));
  const Mat& got = tape.val(out);
  REQUIRE(got.rows == 4);
  REQUIRE(got.cols == 1);

  const auto& ps = v.params;
  auto P = [&](const char* n) -> const Mat& { return ps[ps.find(n)]; };
  Mat f1 = map_plain(affine_plain(xb, P("w1"), P("b1")), relu1);
  Mat f2 = map_plain(affine_plain(f1, P("w2"), P("b2")), relu1);
  Mat y = affine_plain(f2, P("w3"), P("b3"));
  CHECK(max_abs_diff(got, y) < 1e-12);

  // single-row eval agrees with the batch rows
  for (int32_t r = 0; r < 4; ++r) {
    std::vector<double> row(xb[r], xb[r] + 5);
    CHECK(v.eval(row) == doctest::Approx(double(y.at(r, 0))).epsilon(1e-12));
  }

  auto f = [&](Tape<double>& t) { return t.mean(v.forward_taped(t, t.constant(xb))); };
  auto rep = grad_check(f, v.params, {});
  INFO("max rel err " << rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("distribution helpers match closed forms") {
  ActionDist d;
  d.mu = {0.0, 1.0};
  d.sigma = {1.0, 2.0};
  std::vector<double> a = {0.0, 1.0};
  CHECK(log_prob(d, a) == doctest::Approx(-std::log(2.0) - kLog2Pi).epsilon(1e-12));
  std::vector<double> b = {1.0, 1.0};
  CHECK(log_prob(d, b) ==
        doctest::Approx(-std::log(2.0) - kLog2Pi - 0.5).epsilon(1e-12));
  CHECK(entropy(d) == doctest::Approx(kLog2Pi + 1.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("single precision policy runs and stays finite") {
  Connectome g = small_graph();
  CsrMatrix op = build_signed_operator(g);
  FlyGMConfig cfg;
  cfg.channels = 4;
  cfg.descriptor_dim = 3;
  cfg.enc_dim = 5;
  cfg.k_iters = 2;
  cfg.update_hidden = 6;
  cfg.dec_hidden = 8;
  FlyGMPolicy<float> p(g, op, 4, 3, cfg, 51);
  std::vector<double> obs = {0.2, 0.4, -0.1, 0.9};
  ActionDist d = p.act(obs);
  REQUIRE(d.mu.size() == 3);
  for (double m : d.mu) CHECK(std::isfinite(m));
  for (double s : d.sigma) CHECK(s > 0.0);
}
