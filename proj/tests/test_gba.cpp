#include <doctest.h>

#include <cmath>
#include <limits>

#include "saelab/gba_trainer.hpp"
#include "saelab/rng.hpp"
#include "saelab/synthdata.hpp"
#include "test_util.hpp"

using namespace saelab;

namespace {

Dataset small_dataset(std::uint64_t seed, Index N = 800, Index n = 24, Index d = 12) {
  CoeffGenConfig cc;
  cc.N = N;
  cc.n = n;
  cc.s = 2;
  cc.mode = CoeffMode::uniform_without_replacement;
  return assemble_dataset(gen_coefficients(cc, seed), gen_features(n, d, seed), true);
}

GbaConfig small_config(Index M) {
  GbaConfig c;
  c.M = M;
  c.htf = 0.2;
  c.ltf = 0.02;
  c.batch_size = 16;
  c.buffer_size = 64;
  c.steps = 120;
  c.log_every = 1;
  c.seed = 5;
  return c;
}

BufferStats one_shot(const Matrix& y) {
  BufferStats s = BufferStats::empty(y.rows());
  for (Index m = 0; m < y.rows(); ++m) {
    s.p_hat[m] = static_cast<double>((y.row(m).array() > 0.0).count()) / static_cast<double>(y.cols());
    s.r[m] = std::max(0.0, y.row(m).maxCoeff());
  }
  s.count = y.cols();
  return s;
}

}  // namespace

TEST_SUITE("gba_trainer") {

TEST_CASE("make_groups") {
  const NeuronGroups g = make_groups(66000, 10, 0.1, 0.001);
  CHECK(g.tafs.front() == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(g.tafs.back() == doctest::Approx(0.001).epsilon(1e-12));
  for (int k = 0; k + 1 < 10; ++k) {
    CHECK(g.tafs[k + 1] / g.tafs[k] == doctest::Approx(std::pow(10.0, -2.0 / 9.0)).epsilon(1e-12));
    CHECK(g.tafs[k + 1] < g.tafs[k]);
  }
  CHECK(std::abs(std::pow(10.0, -2.0 / 9.0) - 0.59948) < 1e-5);
  std::vector<Index> sizes(10, 0);
  for (std::size_t m = 0; m < g.assignments.size(); ++m) {
    ++sizes[g.assignments[m]];
    if (m > 0) CHECK(g.assignments[m] >= g.assignments[m - 1]);
  }
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);

  const NeuronGroups ba = make_groups(4, 1, 0.05, std::numeric_limits<double>::quiet_NaN());
  CHECK(ba.K() == 1);
  CHECK(ba.tafs[0] == 0.05);
  for (int a : ba.assignments) CHECK(a == 0);

  const NeuronGroups odd = make_groups(7, 3, 0.1, 0.01);
  std::vector<int> counts(3, 0);
  for (int a : odd.assignments) ++counts[a];
  CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);

  CHECK_THROWS(make_groups(3, 4, 0.1, 0.01));
  CHECK_THROWS(make_groups(10, 2, 0.01, 0.1));
  CHECK_THROWS(make_groups(10, 0, 0.1, 0.01));
}

TEST_CASE("buffer_update") {
  BufferStats s = BufferStats::empty(1);
  Matrix y(1, 3);
  y << -1, 2, 0.5;
  buffer_update(s, y);
  CHECK(s.p_hat[0] == doctest::Approx(2.0 / 3.0));
  CHECK(s.r[0] == 2.0);
  CHECK(s.count == 3);

  Matrix neg(1, 3);
  neg << -1, -2, -0.1;
  buffer_update(s, neg);
  CHECK(s.p_hat[0] == doctest::Approx(2.0 / 6.0));
  CHECK(s.r[0] == 2.0);

  BufferStats z = BufferStats::empty(1);
  buffer_update(z, neg);
  CHECK(z.r[0] == 0.0);
  CHECK(z.p_hat[0] == 0.0);
  Matrix zero_act(1, 2);
  zero_act << 0.0, 0.0;
  buffer_update(z, zero_act);
  CHECK(z.p_hat[0] == 0.0);  // y = 0 is not active

  CHECK_THROWS_AS(buffer_update(z, Matrix::Zero(2, 3)), DimensionError);
}

TEST_CASE("streaming equals one-shot under random chunking") {
  Rng rng(17);
  for (int stream = 0; stream < 100; ++stream) {
    const Index M = 1 + static_cast<Index>(rng.below(9));
    const Index total = 1 + static_cast<Index>(rng.below(300));
    Matrix y(M, total);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal() - 0.5;
    BufferStats s = BufferStats::empty(M);
    Index at = 0;
    while (at < total) {
      const Index len = std::min<Index>(total - at, static_cast<Index>(rng.below(40)));
      buffer_update(s, y.middleCols(at, len));
      at += len;
    }
    const BufferStats ref = one_shot(y);
    CHECK(s.count == ref.count);
    CHECK((s.p_hat - ref.p_hat).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(test::bitwise_equal(s.r, ref.r));
    CHECK((s.p_hat.array() >= 0.0).all());
    CHECK((s.p_hat.array() <= 1.0).all());
  }
}

TEST_CASE("adapt_bias") {
  GbaConfig cfg;
  cfg.M = 3;
  const NeuronGroups g = make_groups(3, 1, 0.1, 0.0);

  BufferStats s = BufferStats::empty(3);
  s.p_hat << 0.5, 0.0, 0.05;
  s.r << 0.8, 0.0, 1.2;
  Vector b(3);
  b << 0.0, -0.5, -0.3;
  const Vector out = adapt_bias(b, s, g, cfg);
  CHECK(out[0] == doctest::Approx(-0.008));
  // r_bar over alive neurons: (0.8 + 1.2) / 2
  CHECK(out[1] == doctest::Approx(-0.5 + 0.01 * 1.0));
  CHECK(out[2] == -0.3);

  // the spec's substitution example: r_bar = 1 -> -0.49
  BufferStats s2 = BufferStats::empty(2);
  s2.p_hat << 0.0, 0.05;
  s2.r << 0.0, 2.0;
  Vector b2(2);
  b2 << -0.5, -0.2;
  GbaConfig c2;
  c2.M = 2;
  const Vector o2 = adapt_bias(b2, s2, make_groups(2, 1, 0.1, 0.0), c2);
  CHECK(o2[0] == doctest::Approx(-0.5 + 0.01 * 2.0));

  // dead group: nobody alive, increase is a no-op
  BufferStats dead = BufferStats::empty(2);
  Vector bd(2);
  bd << -0.7, -1.0;
  CHECK(adapt_bias(bd, dead, make_groups(2, 1, 0.1, 0.0), c2) == bd);

  // clamps
  BufferStats hot = BufferStats::empty(2);
  hot.p_hat << 0.9, 0.9;
  hot.r << 50.0, 0.1;
  Vector bh(2);
  bh << -0.9, -0.999;
  const Vector oh = adapt_bias(bh, hot, make_groups(2, 1, 0.1, 0.0), c2);
  CHECK(oh[0] == -1.0);
  CHECK(oh[1] == -1.0);
  BufferStats cold = BufferStats::empty(2);
  cold.r << 0.0, 500.0;
  cold.p_hat << 0.0, 0.01;
  Vector bc(2);
  bc << -0.001, -0.5;
  CHECK(adapt_bias(bc, cold, make_groups(2, 1, 0.1, 0.0), c2)[0] == 0.0);
}

TEST_CASE("adapt_bias properties") {
  Rng rng(3);
  GbaConfig cfg;
  cfg.M = 40;
  cfg.htf = 0.2;
  cfg.ltf = 0.01;
  cfg.epsilon = 1e-3;
  cfg.gamma_minus = 0.05;
  cfg.gamma_plus = 0.05;
  const NeuronGroups g = make_groups(40, 4, cfg.htf, cfg.ltf);
  for (int trial = 0; trial < 50; ++trial) {
    BufferStats s = BufferStats::empty(40);
    Vector b(40);
    for (Index m = 0; m < 40; ++m) {
      const double u = rng.uniform();
      s.p_hat[m] = u < 0.3 ? 0.0 : rng.uniform() * 0.4;
      s.r[m] = rng.uniform() < 0.2 ? 0.0 : 2.0 * rng.uniform();
      b[m] = -rng.uniform();
    }
    const Vector out = adapt_bias(b, s, g, cfg);
    CHECK((out.array() >= -1.0).all());
    CHECK((out.array() <= 0.0).all());
    for (Index m = 0; m < 40; ++m) {
      const double p = g.tafs[g.assignments[m]];
      const bool down = s.p_hat[m] > p;
      const bool up = s.p_hat[m] < cfg.epsilon;
      CHECK_FALSE((down && up));
      if (!down && !up) CHECK(out[m] == b[m]);
      if (down) CHECK(out[m] <= b[m]);
      if (up) CHECK(out[m] >= b[m]);
    }
    // raising p_hat never raises the adapted bias
    for (Index m = 0; m < 40; ++m) {
      BufferStats hi = s;
      hi.p_hat[m] = std::min(1.0, s.p_hat[m] + 0.3 * rng.uniform());
      CHECK(adapt_bias(b, hi, g, cfg)[m] <= out[m]);
    }
  }
}

TEST_CASE("config validation") {
  GbaConfig c = small_config(8);
  CHECK_NOTHROW(c.validate(2));
  c.ltf = c.epsilon;
  CHECK_THROWS_WITH(c.validate(2), doctest::Contains("epsilon"));
  c = small_config(8);
  c.buffer_size = 4;
  CHECK_THROWS(c.validate(2));
  c = small_config(8);
  c.gamma_plus = 1.5;
  CHECK_THROWS(c.validate(2));
  c = small_config(8);
  c.buffer_size = 0;
  CHECK(c.resolved_buffer_size() == 50 * c.batch_size);
}

TEST_CASE("sample_minibatch") {
  const Dataset d = small_dataset(2);
  Matrix raw = d.X * 3.0;
  const Matrix a = sample_minibatch(raw, 10, 4, 7);
  const Matrix b = sample_minibatch(raw, 10, 4, 7);
  CHECK(test::bitwise_equal(a, b));
  CHECK_FALSE(test::bitwise_equal(a, sample_minibatch(raw, 10, 4, 8)));
  for (Index l = 0; l < 10; ++l) CHECK(std::abs(a.row(l).norm() - 1.0) <= 1e-12);
}

TEST_CASE("train_gba invariants") {
  const Dataset data = small_dataset(1);
  GbaConfig cfg = small_config(48);
  const NeuronGroups groups = make_groups(48, 3, cfg.htf, cfg.ltf);
  const TrainResult r = train_gba(data, groups, cfg);
  CHECK(r.state.step == cfg.steps);
  REQUIRE(r.history.rows.size() == static_cast<std::size_t>(cfg.steps));
  CHECK((r.state.params.b.array() >= -1.0).all());
  CHECK((r.state.params.b.array() <= 0.0).all());
  int adaptations = 0;
  for (std::size_t i = 0; i < r.history.rows.size(); ++i) {
    const HistoryRow& h = r.history.rows[i];
    CHECK(h.step == static_cast<long long>(i) + 1);
    CHECK(h.bias_min >= -1.0);
    CHECK(h.bias_max <= 0.0);
    adaptations += h.adapted;
    if (i > 0 && !h.adapted) {
      const HistoryRow& prev = r.history.rows[i - 1];
      CHECK(h.bias_min == prev.bias_min);
      CHECK(h.bias_mean == prev.bias_mean);
      CHECK(h.bias_max == prev.bias_max);
    }
  }
  // 16 samples per step, adapt at 64 buffered
  CHECK(adaptations == 30);
  CHECK(r.history.rows[3].adapted);
  CHECK_FALSE(r.history.rows[2].adapted);

  const TrainResult again = train_gba(data, groups, cfg);
  CHECK(test::bitwise_equal(r.state.params.W, again.state.params.W));
  CHECK(test::bitwise_equal(r.state.params.b, again.state.params.b));
  CHECK(test::bitwise_equal(r.state.params.b_pre, again.state.params.b_pre));

  GbaConfig frozen = cfg;
  frozen.gamma_plus = 0.0;
  frozen.gamma_minus = 0.0;
  CHECK(train_gba(data, groups, frozen).state.params.b.isZero(0.0));
}

TEST_CASE("train_gba resume matches an uninterrupted run") {
  const Dataset data = small_dataset(3);
  GbaConfig cfg = small_config(32);
  cfg.buffer_size = 48;
  const NeuronGroups groups = make_groups(32, 2, cfg.htf, cfg.ltf);
  const TrainResult full = train_gba(data, groups, cfg);
  GbaConfig half = cfg;
  half.steps = 50;
  const TrainResult first = train_gba(data, groups, half);
  const TrainResult rest = train_gba(data, groups, cfg, &first.state);
  CHECK(test::bitwise_equal(full.state.params.W, rest.state.params.W));
  CHECK(test::bitwise_equal(full.state.params.b, rest.state.params.b));
  CHECK(test::bitwise_equal(full.state.opt.v.W, rest.state.opt.v.W));
  CHECK(rest.state.step == cfg.steps);
}

TEST_CASE("train_gba failures") {
  Dataset data = small_dataset(4);
  data.X(5, 2) = std::numeric_limits<double>::quiet_NaN();
  data.X.row(6) = data.X.row(5);
  for (Index l = 0; l < data.X.rows(); ++l) data.X.row(l) = data.X.row(5);
  GbaConfig cfg = small_config(16);
  try {
    train_gba(data, make_groups(16, 1, cfg.htf, cfg.ltf), cfg);
    FAIL("expected a training failure");
  } catch (const TrainingFailure& e) {
    CHECK(e.step() == 1);
  }
  CHECK_THROWS_AS(train_gba(small_dataset(4), make_groups(15, 1, 0.1, 0.01), cfg), DimensionError);
}

}  // TEST_SUITE
