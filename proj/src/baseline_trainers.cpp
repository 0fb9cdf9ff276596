#include "saelab/baseline_trainers.hpp"

#include <cmath>

namespace saelab {

namespace {

TrainResult run(const Dataset& data, const BaselineConfig& cfg, const TrainState* resume, const char* name) {
  cfg.validate();
  require(data.X.rows() > 0, std::string(name) + ": empty dataset");
  TrainResult res;
  TrainState& st = res.state;
  if (resume) {
    st = *resume;
    require_dims(st.params.M() == cfg.M && st.params.d() == data.X.cols(),
                 std::string(name) + ": resume state shape mismatch");
  } else {
    st.params = SaeParams::init(cfg.M, data.X.cols(), cfg.seed);
    st.opt = AdamWState::init(st.params, cfg.hyper);
    st.stats = BufferStats::empty(cfg.M);
  }
  const Objective obj = cfg.objective();
  const ParamGroups trained{true, true, true, cfg.train_pre_bias};
  SaeGrads grads = SaeGrads::zeros_like(st.params);
  ForwardCache cache;
  while (st.step < cfg.steps) {
    const long long t = st.step + 1;
    const Matrix batch = sample_minibatch(data.X, cfg.batch_size, cfg.seed, t);
    const double value = loss_and_grad(st.params, batch, cfg.activation, obj, grads, &cache);
    if (!std::isfinite(value)) throw TrainingFailure(std::string(name) + ": non-finite loss at step " + std::to_string(t), t);
    adamw_step(st.opt, st.params, grads, trained);
    st.step = t;
    if (t % cfg.log_every == 0 || t == cfg.steps) {
      const double cells = static_cast<double>(cache.pre.size());
      HistoryRow row;
      row.step = t;
      row.loss = value;
      row.act_fraction = static_cast<double>((cache.post.array() != 0.0).count()) / cells;
      row.pre_act_fraction = static_cast<double>((cache.pre.array() > 0.0).count()) / cells;
      row.bias_min = st.params.b.minCoeff();
      row.bias_mean = st.params.b.mean();
      row.bias_max = st.params.b.maxCoeff();
      res.history.rows.push_back(row);
    }
  }
  return res;
}

}  // namespace

Objective BaselineConfig::objective() const {
  return kind == Kind::topk ? Objective::topk(k) : Objective::l1(lambda);
}

void BaselineConfig::validate() const {
  require(M >= 1, "BaselineConfig: M must be >= 1");
  if (kind == Kind::topk) require(k >= 1 && k <= M, "BaselineConfig: topk needs K in [1, M]");
  if (kind == Kind::l1) require(std::isfinite(lambda) && lambda >= 0.0, "BaselineConfig: l1 needs lambda >= 0");
  require(batch_size >= 1 && steps >= 0 && log_every >= 1, "BaselineConfig: bad batch_size, steps or log_every");
  hyper.validate();
}

TrainResult train_topk(const Dataset& data, const BaselineConfig& cfg, const TrainState* resume) {
  require(cfg.kind == BaselineConfig::Kind::topk, "train_topk called with a non-topk config");
  return run(data, cfg, resume, "train_topk");
}

TrainResult train_l1(const Dataset& data, const BaselineConfig& cfg, const TrainState* resume) {
  require(cfg.kind == BaselineConfig::Kind::l1, "train_l1 called with a non-l1 config");
  return run(data, cfg, resume, "train_l1");
}

}  // namespace saelab
