#include "saelab/gba_trainer.hpp"

#include <algorithm>
#include <cmath>

#include "saelab/rng.hpp"

namespace saelab {

NeuronGroups make_groups(Index M, int K, double htf, double ltf) {
  require(K >= 1 && K <= M, "make_groups needs 1 <= K <= M");
  require(htf > 0.0 && htf <= 1.0, "make_groups needs htf in (0, 1]");
  if (K > 1) require(ltf > 0.0 && ltf < htf, "make_groups needs 0 < ltf < htf");
  NeuronGroups g;
  g.tafs.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    g.tafs[k] = K == 1 ? htf : htf * std::pow(ltf / htf, static_cast<double>(k) / static_cast<double>(K - 1));
  g.assignments.resize(static_cast<std::size_t>(M));
  for (Index m = 0; m < M; ++m) g.assignments[m] = static_cast<int>(m * K / M);
  return g;
}

BufferStats BufferStats::empty(Index M) { return {Vector::Zero(M), Vector::Zero(M), 0}; }

void buffer_update(BufferStats& s, const Matrix& y) {
  require_dims(y.rows() == s.p_hat.size() && s.r.size() == s.p_hat.size(), "buffer_update: M mismatch");
  const auto L = static_cast<long long>(y.cols());
  if (L == 0) return;
  const double before = static_cast<double>(s.count);
  const double after = static_cast<double>(s.count + L);
  for (Index m = 0; m < y.rows(); ++m) {
    long long fired = 0;
    double hi = s.r(m);
    for (Index l = 0; l < y.cols(); ++l) {
      const double v = y(m, l);
      fired += v > 0.0;
      hi = std::max(hi, v);
    }
    s.p_hat(m) = (before * s.p_hat(m) + static_cast<double>(fired)) / after;
    s.r(m) = std::max(hi, 0.0);
  }
  s.count += L;
}

void GbaConfig::validate(int groups) const {
  require(M >= 1, "GbaConfig: M must be >= 1");
  require(htf > 0.0 && htf <= 1.0, "GbaConfig: htf must lie in (0, 1]");
  if (groups > 1) require(htf > ltf, "GbaConfig: htf must exceed ltf");
  const double lowest = groups > 1 ? ltf : htf;
  require(lowest > epsilon,
          "GbaConfig: the lowest TAF must exceed epsilon, otherwise a neuron could be both over-active and dead");
  require(epsilon > 0.0, "GbaConfig: epsilon must be > 0");
  require(gamma_plus >= 0.0 && gamma_plus < 1.0 && gamma_minus >= 0.0 && gamma_minus < 1.0,
          "GbaConfig: gamma_plus and gamma_minus must lie in [0, 1)");
  require(batch_size >= 1, "GbaConfig: batch_size must be >= 1");
  require(resolved_buffer_size() >= batch_size, "GbaConfig: buffer_size must be >= batch_size");
  require(steps >= 0, "GbaConfig: steps must be >= 0");
  require(clamp_lo <= clamp_hi, "GbaConfig: clamp_lo must be <= clamp_hi");
  require(log_every >= 1, "GbaConfig: log_every must be >= 1");
  hyper.validate();
}

Vector adapt_bias(const Vector& b, const BufferStats& stats, const NeuronGroups& groups, const GbaConfig& cfg) {
  const Index M = b.size();
  require_dims(stats.p_hat.size() == M && groups.M() == M, "adapt_bias: size mismatch");
  std::vector<double> r_sum(groups.tafs.size(), 0.0);
  std::vector<long long> alive(groups.tafs.size(), 0);
  for (Index m = 0; m < M; ++m) {
    const int k = groups.assignments[m];
    r_sum[k] += stats.r(m);
    alive[k] += stats.r(m) > 0.0;
  }
  Vector out = b;
  for (Index m = 0; m < M; ++m) {
    const int k = groups.assignments[m];
    if (stats.p_hat(m) > groups.tafs[k]) {
      out(m) = std::max(b(m) - cfg.gamma_minus * stats.r(m), cfg.clamp_lo);
    } else if (stats.p_hat(m) < cfg.epsilon) {
      const double r_bar = alive[k] > 0 ? r_sum[k] / static_cast<double>(alive[k]) : 0.0;
      out(m) = std::min(b(m) + cfg.gamma_plus * r_bar, cfg.clamp_hi);
    }
    out(m) = std::clamp(out(m), cfg.clamp_lo, cfg.clamp_hi);
  }
  return out;
}

Matrix sample_minibatch(const Matrix& X, Index L, std::uint64_t seed, long long step) {
  require(X.rows() > 0, "sample_minibatch: empty dataset");
  Rng rng = Rng::substream(seed, "minibatch", static_cast<std::uint64_t>(step));
  Matrix batch(L, X.cols());
  for (Index l = 0; l < L; ++l) {
    const auto row = static_cast<Index>(rng.below(static_cast<std::uint64_t>(X.rows())));
    batch.row(l) = X.row(row);
    const double norm = batch.row(l).norm();
    if (norm > 0.0) batch.row(l) /= norm;
  }
  return batch;
}

TrainResult train_gba(const Dataset& data, const NeuronGroups& groups, const GbaConfig& cfg, const TrainState* resume) {
  cfg.validate(groups.K());
  require_dims(groups.M() == cfg.M, "train_gba: groups cover " + std::to_string(groups.M()) + " neurons, config has M = " +
                                        std::to_string(cfg.M));
  require(data.X.rows() > 0, "train_gba: empty dataset");

  TrainResult res;
  TrainState& st = res.state;
  if (resume) {
    st = *resume;
    require_dims(st.params.M() == cfg.M && st.params.d() == data.X.cols(), "train_gba: resume state shape mismatch");
  } else {
    st.params = SaeParams::init(cfg.M, data.X.cols(), cfg.seed);
    st.params.b = st.params.b.cwiseMax(cfg.clamp_lo).cwiseMin(cfg.clamp_hi);
    st.opt = AdamWState::init(st.params, cfg.hyper);
    st.stats = BufferStats::empty(cfg.M);
    st.step = 0;
  }

  const ParamGroups trained{true, true, false, cfg.train_pre_bias};
  const Objective obj = Objective::reconstruction();
  const long long B = cfg.resolved_buffer_size();
  SaeGrads grads = SaeGrads::zeros_like(st.params);
  ForwardCache cache;

  while (st.step < cfg.steps) {
    const long long t = st.step + 1;
    const Matrix batch = sample_minibatch(data.X, cfg.batch_size, cfg.seed, t);
    const double value = loss_and_grad(st.params, batch, cfg.activation, obj, grads, &cache);
    if (!std::isfinite(value)) throw TrainingFailure("train_gba: non-finite loss at step " + std::to_string(t), t);
    adamw_step(st.opt, st.params, grads, trained);
    buffer_update(st.stats, cache.pre);
    bool adapted = false;
    if (st.stats.count >= B) {
      st.params.b = adapt_bias(st.params.b, st.stats, groups, cfg);
      st.stats = BufferStats::empty(cfg.M);
      adapted = true;
    }
    st.step = t;
    if (t % cfg.log_every == 0 || adapted || t == cfg.steps) {
      const double cells = static_cast<double>(cache.pre.size());
      HistoryRow row;
      row.step = t;
      row.loss = value;
      row.act_fraction = static_cast<double>((cache.post.array() != 0.0).count()) / cells;
      row.pre_act_fraction = static_cast<double>((cache.pre.array() > 0.0).count()) / cells;
      row.bias_min = st.params.b.minCoeff();
      row.bias_mean = st.params.b.mean();
      row.bias_max = st.params.b.maxCoeff();
      row.adapted = adapted;
      res.history.rows.push_back(row);
    }
  }
  return res;
}

}  // namespace saelab
