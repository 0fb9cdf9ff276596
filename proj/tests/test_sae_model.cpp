#include <doctest.h>

#include <cmath>
#include <numeric>

#include "grad_check.hpp"
#include "saelab/rng.hpp"
#include "saelab/sae_model.hpp"
#include "test_util.hpp"

using namespace saelab;

namespace {

SaeParams zero_params(Index M, Index d) {
  SaeParams p;
  p.W = Matrix::Zero(M, d);
  p.a = Vector::Ones(M);
  p.b = Vector::Zero(M);
  p.b_pre = Vector::Zero(d);
  return p;
}

const Activation kActs[] = {Activation::relu(), Activation::softplus(8.0), Activation::jump_relu()};

}  // namespace

TEST_SUITE("sae_model") {

TEST_CASE("activations") {
  const Activation relu = Activation::relu();
  CHECK(relu.value(-1.0) == 0.0);
  CHECK(relu.value(2.5) == 2.5);
  CHECK(relu.derivative(0.0) == 0.0);
  CHECK(relu.derivative(0.1) == 1.0);
  const Activation sp = Activation::softplus(8.0);
  for (double u : {-3.0, -0.2, 0.0, 0.4, 5.0, 200.0}) {
    CHECK(sp.value(u) == doctest::Approx(u > 50 ? u : std::log1p(std::exp(8.0 * u)) / 8.0));
    const double h = 1e-6;
    CHECK(sp.derivative(u) == doctest::Approx((sp.value(u + h) - sp.value(u - h)) / (2 * h)).epsilon(1e-6));
  }
  CHECK(std::isfinite(sp.value(-1000.0)));
  CHECK(to_string(activation_from_string("softplus:8")) == to_string(sp));
  CHECK(activation_from_string("relu").kind == Activation::Kind::relu);
  CHECK(activation_from_string("jump_relu").kind == Activation::Kind::jump_relu);
  CHECK(activation_from_string("softplus").gamma == 20.0);
  CHECK_THROWS(activation_from_string("tanh"));
  CHECK_THROWS(Activation::softplus(0.0));
}

TEST_CASE("pre_activations") {
  SaeParams p = zero_params(3, 4);
  Matrix x = Matrix::Random(5, 4);
  CHECK(pre_activations(p, x).isZero(0.0));

  SaeParams q = zero_params(1, 2);
  q.W << 1, 0;
  q.b << -0.5;
  Matrix one(1, 2);
  one << 2, 3;
  CHECK(pre_activations(q, one)(0, 0) == doctest::Approx(1.5));

  Rng rng(3);
  const test::GradInstance inst = test::random_instance(rng, 7, 6, 5);
  const Matrix y = pre_activations(inst.params, inst.batch);
  REQUIRE(y.rows() == 7);
  REQUIRE(y.cols() == 5);
  for (Index m = 0; m < 7; ++m)
    for (Index l = 0; l < 5; ++l) {
      double acc = inst.params.b[m];
      for (Index j = 0; j < 6; ++j) acc += inst.params.W(m, j) * (inst.batch(l, j) - inst.params.b_pre[j]);
      CHECK(std::abs(y(m, l) - acc) <= 1e-12);
    }
  CHECK_THROWS_AS(pre_activations(inst.params, Matrix::Zero(2, 5)), DimensionError);
}

TEST_CASE("forward") {
  Rng rng(4);
  test::GradInstance inst = test::random_instance(rng, 6, 4, 5);
  SaeParams p = inst.params;
  p.a.setZero();
  const ForwardCache c = forward(p, inst.batch, Activation::relu(), Objective::reconstruction());
  for (Index l = 0; l < 5; ++l) CHECK((c.recon.row(l).transpose() - p.b_pre).norm() == 0.0);

  SaeParams closed = inst.params;
  closed.b.setConstant(-100.0);
  const ForwardCache jc = forward(closed, inst.batch, Activation::jump_relu(), Objective::reconstruction());
  CHECK(jc.post.isZero(0.0));
  for (Index l = 0; l < 5; ++l) CHECK((jc.recon.row(l).transpose() - closed.b_pre).norm() == 0.0);

  SaeParams hand = zero_params(2, 2);
  hand.W = Matrix::Identity(2, 2);
  Matrix x(1, 2);
  x << 1, -2;
  const ForwardCache hc = forward(hand, x, Activation::relu(), Objective::reconstruction());
  CHECK(hc.post(0, 0) == 1.0);
  CHECK(hc.post(1, 0) == 0.0);
  CHECK(hc.recon(0, 0) == 1.0);
  CHECK(hc.recon(0, 1) == 0.0);

  // jump_relu passes the unbiased projection through an open gate
  SaeParams j = zero_params(1, 2);
  j.W << 1, 1;
  j.b << -0.5;
  Matrix xj(1, 2);
  xj << 0.5, 0.25;
  const ForwardCache jf = forward(j, xj, Activation::jump_relu(), Objective::reconstruction());
  CHECK(jf.post(0, 0) == doctest::Approx(0.75));

  for (const Activation& act : kActs) {
    const ForwardCache f = forward(inst.params, inst.batch, act, Objective::reconstruction());
    for (Index l = 0; l < 5; ++l) {
      Vector r = inst.params.b_pre;
      for (Index m = 0; m < 6; ++m) r += inst.params.a[m] * f.post(m, l) * inst.params.W.row(m).transpose();
      CHECK((f.recon.row(l).transpose() - r).norm() <= 1e-10 * std::max(1.0, r.norm()));
      CHECK((f.centered.row(l).transpose() - (inst.batch.row(l).transpose() - inst.params.b_pre)).norm() == 0.0);
    }
  }
}

TEST_CASE("forward is batch-order equivariant") {
  Rng rng(5);
  const test::GradInstance inst = test::random_instance(rng, 6, 4, 7);
  std::vector<Index> perm = {3, 0, 6, 1, 5, 2, 4};
  Matrix shuffled(7, 4);
  for (Index l = 0; l < 7; ++l) shuffled.row(l) = inst.batch.row(perm[l]);
  for (const Activation& act : kActs) {
    const ForwardCache a = forward(inst.params, inst.batch, act, Objective::topk(2));
    const ForwardCache b = forward(inst.params, shuffled, act, Objective::topk(2));
    for (Index l = 0; l < 7; ++l) {
      CHECK(b.pre.col(l) == a.pre.col(perm[l]));
      CHECK(b.post.col(l) == a.post.col(perm[l]));
      CHECK(b.recon.row(l) == a.recon.row(perm[l]));
    }
  }
}

TEST_CASE("topk_select") {
  Vector v(3);
  v << 3, 1, 2;
  Vector e(3);
  e << 3, 0, 2;
  CHECK(topk_select(v, 2) == e);
  Vector ties = Vector::Ones(3);
  Vector first = Vector::Zero(3);
  first[0] = 1;
  CHECK(topk_select(ties, 1) == first);
  CHECK(topk_select(v, 3) == v);
  CHECK(topk_select(v, 7) == v);

  Rng rng(6);
  const test::GradInstance inst = test::random_instance(rng, 20, 8, 30);
  for (int k : {1, 3, 5}) {
    const ForwardCache c = forward(inst.params, inst.batch, Activation::relu(), Objective::topk(k));
    for (Index l = 0; l < 30; ++l) CHECK((c.post.col(l).array() != 0.0).count() <= k);
  }
}

TEST_CASE("loss") {
  SaeParams p = zero_params(2, 3);
  p.a.setZero();
  Matrix x(1, 3);
  x << 0.6, 0.8, 0.0;
  CHECK(loss(p, x, Activation::relu(), Objective::reconstruction()) == doctest::Approx(0.5));

  SaeParams perfect = zero_params(3, 3);
  perfect.W = Matrix::Identity(3, 3);
  Matrix pos(2, 3);
  pos << 0.2, 0.3, 0.4, 1.0, 0.0, 2.0;
  CHECK(loss(perfect, pos, Activation::relu(), Objective::reconstruction()) == 0.0);

  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const test::GradInstance inst = test::random_instance(rng, 8, 5, 4);
    for (const Activation& act : kActs)
      for (const Objective& obj : {Objective::reconstruction(), Objective::l1(0.05), Objective::topk(3)}) {
        const double ref = test::naive_loss(inst.params, inst.batch, act, obj);
        CHECK(std::abs(loss(inst.params, inst.batch, act, obj) - ref) <= 1e-12 * std::max(1.0, ref));
      }
  }
}

TEST_CASE("gradients match central differences") {
  Rng rng(8);
  for (const Activation& act : kActs)
    for (const Objective& obj : {Objective::reconstruction(), Objective::l1(0.01), Objective::topk(3)})
      for (int trial = 0; trial < 5; ++trial) {
        const test::GradInstance inst = test::kink_free_instance(rng, 8, 5, 4, act, obj);
        const test::GradCheckResult r = test::check_gradients(inst, act, obj);
        INFO(to_string(act), " ", to_string(obj), " worst ", r.worst);
        CHECK(r.max_rel_err <= 1e-5);
      }
}

TEST_CASE("gradient special cases") {
  Rng rng(9);
  test::GradInstance inst = test::random_instance(rng, 6, 4, 5);
  inst.params.b.setConstant(-100.0);
  const SaeGrads g = objective_grad(inst.params, inst.batch, Activation::relu(), Objective::reconstruction());
  CHECK(g.a.isZero(0.0));
  CHECK(g.W.isZero(0.0));
  CHECK(g.b.isZero(0.0));
  const Vector expect = (inst.params.b_pre.transpose().replicate(5, 1) - inst.batch).colwise().mean().transpose();
  CHECK((g.b_pre - expect).norm() <= 1e-14);

  const test::GradInstance r = test::random_instance(rng, 6, 4, 5);
  for (const Activation& act : kActs) {
    const SaeGrads rec = objective_grad(r.params, r.batch, act, Objective::reconstruction());
    const SaeGrads l1 = objective_grad(r.params, r.batch, act, Objective::l1(0.0));
    CHECK(test::bitwise_equal(rec.W, l1.W));
    CHECK(test::bitwise_equal(rec.a, l1.a));
    CHECK(test::bitwise_equal(rec.b, l1.b));
    CHECK(test::bitwise_equal(rec.b_pre, l1.b_pre));
  }

  SaeGrads via;
  const double lv = loss_and_grad(r.params, r.batch, Activation::relu(), Objective::l1(0.1), via);
  CHECK(lv == doctest::Approx(loss(r.params, r.batch, Activation::relu(), Objective::l1(0.1))).epsilon(1e-14));
  const SaeGrads og = objective_grad(r.params, r.batch, Activation::relu(), Objective::l1(0.1));
  CHECK(test::bitwise_equal(via.W, og.W));

  // jump_relu: the gate is a constant, so b gets no gradient
  const SaeGrads jg = objective_grad(r.params, r.batch, Activation::jump_relu(), Objective::reconstruction());
  CHECK(jg.b.isZero(0.0));
}

TEST_CASE("tied-weight rescaling leaves relu reconstructions unchanged") {
  Rng rng(10);
  test::GradInstance inst = test::random_instance(rng, 6, 4, 5);
  inst.params.b.setZero();
  inst.params.b_pre.setZero();
  SaeParams scaled = inst.params;
  scaled.W *= 2.0;
  scaled.a /= 4.0;
  const ForwardCache a = forward(inst.params, inst.batch, Activation::relu(), Objective::reconstruction());
  const ForwardCache b = forward(scaled, inst.batch, Activation::relu(), Objective::reconstruction());
  CHECK((a.recon - b.recon).norm() <= 1e-12 * a.recon.norm());
}

TEST_CASE("init") {
  const SaeParams p = SaeParams::init(50, 9, 3);
  for (Index m = 0; m < 50; ++m) CHECK(std::abs(p.W.row(m).norm() - 1.0) <= 1e-12);
  CHECK(p.a.isOnes(0.0));
  CHECK(p.b.isZero(0.0));
  CHECK(p.b_pre.isZero(0.0));
  CHECK(test::bitwise_equal(p.W, SaeParams::init(50, 9, 3).W));
  CHECK(p.all_finite());
  SaeParams bad = p;
  bad.a[3] = std::nan("");
  CHECK_FALSE(bad.all_finite());
}

}  // TEST_SUITE
