#include <doctest.h>

#include <cmath>

#include "saelab/optim.hpp"
#include "saelab/rng.hpp"
#include "test_util.hpp"

using namespace saelab;

namespace {

Eigen::ArrayXd arr(std::initializer_list<double> v) {
  Eigen::ArrayXd a(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) a[i++] = x;
  return a;
}

// Textbook AdamW on one scalar, used as the oracle for adamw_update.
struct ScalarAdamW {
  double m = 0, v = 0;
  long long t = 0;
  double step(double theta, double g, const AdamWHyper& h, bool decay) {
    ++t;
    m = h.beta1 * m + (1 - h.beta1) * g;
    v = h.beta2 * v + (1 - h.beta2) * g * g;
    const double mh = m / (1 - std::pow(h.beta1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(h.beta2, static_cast<double>(t)));
    return theta - h.lr * (mh / (std::sqrt(vh) + h.eps) + (decay ? h.weight_decay * theta : 0.0));
  }
};

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("hand examples") {
  AdamWHyper h;
  h.lr = 0.1;
  h.weight_decay = 0.0;
  Eigen::ArrayXd theta = arr({0.5, -2.0});
  Eigen::ArrayXd m = Eigen::ArrayXd::Zero(2), v = Eigen::ArrayXd::Zero(2);
  adamw_update(theta, m, v, Eigen::ArrayXd::Zero(2), h, 1, true);
  CHECK(theta[0] == 0.5);
  CHECK(theta[1] == -2.0);

  Eigen::ArrayXd t0 = arr({0.0});
  Eigen::ArrayXd m0 = Eigen::ArrayXd::Zero(1), v0 = Eigen::ArrayXd::Zero(1);
  adamw_update(t0, m0, v0, arr({1.0}), h, 1, true);
  CHECK(t0[0] == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-14));
  CHECK(std::abs(t0[0] + 0.0999999990) <= 1e-10);

  AdamWHyper d;
  d.lr = 0.1;
  d.weight_decay = 0.1;
  Eigen::ArrayXd t1 = arr({1.0});
  Eigen::ArrayXd m1 = Eigen::ArrayXd::Zero(1), v1 = Eigen::ArrayXd::Zero(1);
  adamw_update(t1, m1, v1, arr({0.0}), d, 1, true);
  CHECK(t1[0] == doctest::Approx(0.99).epsilon(1e-15));
  Eigen::ArrayXd t2 = arr({1.0});
  adamw_update(t2, m1, v1, arr({0.0}), d, 2, false);
  CHECK(t2[0] == 1.0);
}

TEST_CASE("matches the scalar oracle over many steps") {
  AdamWHyper h;
  h.lr = 0.01;
  h.weight_decay = 0.05;
  Rng rng(1);
  Eigen::ArrayXd theta = Eigen::ArrayXd::Zero(4), m = theta, v = theta;
  for (Index i = 0; i < 4; ++i) theta[i] = rng.normal();
  std::vector<ScalarAdamW> ref(4);
  std::vector<double> ref_theta(theta.data(), theta.data() + 4);
  for (long long t = 1; t <= 200; ++t) {
    Eigen::ArrayXd g(4);
    for (Index i = 0; i < 4; ++i) g[i] = rng.normal();
    adamw_update(theta, m, v, g, h, t, true);
    for (Index i = 0; i < 4; ++i) ref_theta[i] = ref[i].step(ref_theta[i], g[i], h, true);
    CHECK((v >= 0.0).all());
  }
  for (Index i = 0; i < 4; ++i) CHECK(theta[i] == doctest::Approx(ref_theta[i]).epsilon(1e-12));
}

TEST_CASE("constant gradient gives steps of size lr") {
  AdamWHyper h;
  h.lr = 1e-3;
  h.weight_decay = 0.0;
  Eigen::ArrayXd theta = arr({0.0, 0.0}), m = Eigen::ArrayXd::Zero(2), v = Eigen::ArrayXd::Zero(2);
  Eigen::ArrayXd prev = theta;
  for (long long t = 1; t <= 5000; ++t) {
    prev = theta;
    adamw_update(theta, m, v, arr({3.0, -0.2}), h, t, false);
  }
  const Eigen::ArrayXd step = theta - prev;
  CHECK(step[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(step[1] == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adamw_step on parameter groups") {
  AdamWHyper h;
  h.lr = 0.1;
  SaeParams p = SaeParams::init(4, 3, 2);
  p.b.setConstant(-0.3);
  AdamWState st = AdamWState::init(p, h);
  SaeGrads g = SaeGrads::zeros_like(p);
  g.W.setConstant(1.0);
  g.a.setConstant(1.0);
  g.b.setConstant(1.0);
  g.b_pre.setConstant(1.0);

  SaeParams q = p;
  ParamGroups only_w;
  only_w.a = false;
  only_w.b_pre = false;
  adamw_step(st, q, g, only_w);
  CHECK(st.t == 1);
  CHECK(q.a == p.a);
  CHECK(q.b == p.b);
  CHECK(q.b_pre == p.b_pre);
  CHECK_FALSE(q.W == p.W);

  // b is stepped when asked but never decayed
  AdamWHyper hd = h;
  hd.weight_decay = 0.5;
  SaeParams r = p;
  AdamWState sr = AdamWState::init(r, hd);
  SaeGrads zero = SaeGrads::zeros_like(r);
  ParamGroups all;
  all.b = true;
  adamw_step(sr, r, zero, all);
  CHECK(r.b == p.b);
  CHECK(r.a[0] == doctest::Approx(p.a[0] * (1 - 0.1 * 0.5)));

  SaeParams before = q;
  AdamWState snapshot = st;
  SaeGrads bad = g;
  bad.W(1, 1) = std::nan("");
  CHECK_THROWS(adamw_step(st, q, bad, only_w));
  CHECK(st.t == snapshot.t);
  CHECK(test::bitwise_equal(st.m.W, snapshot.m.W));
  CHECK(test::bitwise_equal(q.W, before.W));

  SaeGrads wrong = SaeGrads::zeros_like(SaeParams::init(5, 3, 1));
  CHECK_THROWS(adamw_step(st, q, wrong, only_w));
}

TEST_CASE("deterministic") {
  AdamWHyper h;
  SaeParams p1 = SaeParams::init(6, 4, 9), p2 = p1;
  AdamWState s1 = AdamWState::init(p1, h), s2 = AdamWState::init(p2, h);
  Rng rng(2);
  SaeGrads g = SaeGrads::zeros_like(p1);
  for (Index i = 0; i < g.W.size(); ++i) g.W.data()[i] = rng.normal();
  for (int k = 0; k < 10; ++k) {
    adamw_step(s1, p1, g, ParamGroups{});
    adamw_step(s2, p2, g, ParamGroups{});
  }
  CHECK(test::bitwise_equal(p1.W, p2.W));
}

TEST_CASE("hyper validation") {
  AdamWHyper h;
  CHECK_NOTHROW(h.validate());
  h.beta1 = 1.0;
  CHECK_THROWS(h.validate());
  h.beta1 = 0.9;
  h.eps = 0.0;
  CHECK_THROWS(h.validate());
  h.eps = 1e-8;
  h.lr = -1.0;
  CHECK_THROWS(h.validate());
}

}  // TEST_SUITE
