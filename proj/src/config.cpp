#include "saelab/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace saelab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

long long to_int(const std::string& v) {
  long long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw std::invalid_argument("expected a nonnegative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  if (v == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (v == "inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SAELAB_INT(key, field)                                                                         \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(to_int(v)); }, \
      [](const ExperimentConfig& c) { return std::to_string(c.field); }}
#define SAELAB_BOOL(key, field)                                                         \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = to_bool(v); }, \
      [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); }}
#define SAELAB_DBL(key, field)                                                          \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.field = to_double(v); }, \
      [](const ExperimentConfig& c) { return fmt(c.field); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      SAELAB_INT("data.n", n),
      SAELAB_INT("data.d", d),
      SAELAB_INT("data.N", N),
      SAELAB_INT("data.s", s),
      Key{"data.mode", [](ExperimentConfig& c, const std::string& v) { c.mode = coeff_mode_from_string(v); },
          [](const ExperimentConfig& c) { return to_string(c.mode); }},
      SAELAB_DBL("data.alpha", alpha),
      SAELAB_DBL("data.mu", mu),
      SAELAB_DBL("data.sigma", sigma),
      SAELAB_DBL("data.rho2_target", rho2_target),
      SAELAB_DBL("data.cross_fraction", cross_fraction),
      Key{"data.normalize_rows", [](ExperimentConfig& c, const std::string& v) { c.normalize_rows = to_bool(v); },
          [](const ExperimentConfig& c) { return std::string(c.normalize_rows ? "true" : "false"); }},
      Key{"data.save_X", [](ExperimentConfig& c, const std::string& v) { c.save_X = to_bool(v); },
          [](const ExperimentConfig& c) { return std::string(c.save_X ? "true" : "false"); }},
      SAELAB_INT("model.M", M),
      Key{"model.activation", [](ExperimentConfig& c, const std::string& v) { c.activation = activation_from_string(v); },
          [](const ExperimentConfig& c) { return to_string(c.activation); }},
      Key{"train.method",
          [](ExperimentConfig& c, const std::string& v) {
            if (v != "gba" && v != "ba" && v != "topk" && v != "l1" && v != "theory")
              throw std::invalid_argument("expected one of gba, ba, topk, l1, theory, got '" + v + "'");
            c.method = v;
          },
          [](const ExperimentConfig& c) { return c.method; }},
      SAELAB_INT("train.K_groups", K_groups),
      SAELAB_DBL("train.htf", htf),
      SAELAB_DBL("train.ltf", ltf),
      SAELAB_DBL("train.gamma_plus", gamma_plus),
      SAELAB_DBL("train.gamma_minus", gamma_minus),
      SAELAB_DBL("train.epsilon", epsilon),
      SAELAB_BOOL("train.train_pre_bias", train_pre_bias),
      SAELAB_INT("train.buffer_size", buffer_size),
      SAELAB_INT("train.batch_size", batch_size),
      SAELAB_INT("train.steps", steps),
      SAELAB_DBL("train.lr", lr),
      SAELAB_DBL("train.weight_decay", weight_decay),
      SAELAB_DBL("train.beta1", beta1),
      SAELAB_DBL("train.beta2", beta2),
      SAELAB_DBL("train.adam_eps", adam_eps),
      SAELAB_INT("train.topk_K", topk_K),
      SAELAB_DBL("train.l1_lambda", l1_lambda),
      SAELAB_DBL("train.theory_b", theory_b),
      Key{"train.theory_eta",
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "default")
              c.theory_eta.reset();
            else
              c.theory_eta = to_double(v);
          },
          [](const ExperimentConfig& c) { return c.theory_eta ? fmt(*c.theory_eta) : std::string("default"); }},
      SAELAB_INT("train.theory_T", theory_T),
      SAELAB_DBL("train.theory_epsilon", theory_epsilon),
      SAELAB_BOOL("train.theory_center", theory_center),
      SAELAB_BOOL("train.theory_all_neurons", theory_all_neurons),
      SAELAB_INT("train.log_every", log_every),
      SAELAB_INT("train.checkpoint_every", checkpoint_every),
      SAELAB_DBL("eval.theta_frac", theta_frac),
      Key{"eval.tau_mode",
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "auto" || v == "manual") {
              c.tau_mode = v;
            } else if (v.rfind("manual(", 0) == 0 && v.back() == ')') {
              c.tau_mode = "manual";
              c.tau = to_double(v.substr(7, v.size() - 8));
            } else {
              throw std::invalid_argument("expected auto, manual or manual(<tau>), got '" + v + "'");
            }
          },
          [](const ExperimentConfig& c) { return c.tau_mode; }},
      SAELAB_DBL("eval.tau", tau),
      SAELAB_INT("eval.valset_size", valset_size),
      SAELAB_INT("eval.consistency_runs", consistency_runs),
      Key{"eval.subset_by",
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "max_activation")
              c.subset.by = SubsetSelector::By::max_activation;
            else if (v == "z_max")
              c.subset.by = SubsetSelector::By::z_max;
            else
              throw std::invalid_argument("expected max_activation or z_max, got '" + v + "'");
          },
          [](const ExperimentConfig& c) { return to_string(c.subset.by); }},
      Key{"eval.subset_alpha", [](ExperimentConfig& c, const std::string& v) { c.subset.alpha = to_double(v); },
          [](const ExperimentConfig& c) { return fmt(c.subset.alpha); }},
      Key{"eval.consistency_taus",
          [](ExperimentConfig& c, const std::string& v) {
            c.consistency_taus.clear();
            for (const auto& item : split_list(v)) c.consistency_taus.push_back(to_double(item));
          },
          [](const ExperimentConfig& c) {
            std::vector<std::string> items;
            for (double t : c.consistency_taus) items.push_back(fmt(t));
            return join(items);
          }},
      Key{"sweep.key", [](ExperimentConfig& c, const std::string& v) { c.sweep_key = v; },
          [](const ExperimentConfig& c) { return c.sweep_key; }},
      Key{"sweep.values", [](ExperimentConfig& c, const std::string& v) { c.sweep_values = split_list(v); },
          [](const ExperimentConfig& c) { return join(c.sweep_values); }},
      Key{"global.seed", [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64(v); },
          [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef SAELAB_INT
#undef SAELAB_DBL
#undef SAELAB_BOOL

const Key* find_key(const std::string& name) {
  for (const Key& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

void set_key(ExperimentConfig& cfg, const std::string& name, const std::string& value, int line) {
  const Key* key = find_key(name);
  if (!key) throw ConfigError(line, "unknown key '" + name + "'");
  try {
    key->set(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(line, name + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(line, name + ": " + e.what());
  }
}

using LineMap = std::map<std::string, int>;

void validate(const ExperimentConfig& c, const LineMap& lines) {
  auto fail = [&](const std::string& key, const std::string& what) {
    const auto it = lines.find(key);
    throw ConfigError(it == lines.end() ? 0 : it->second, key + ": " + what);
  };
  if (c.n < 1) fail("data.n", "required, must be >= 1");
  if (c.d < 1) fail("data.d", "required, must be >= 1");
  if (c.N < 1) fail("data.N", "required, must be >= 1");
  if (c.s < 1) fail("data.s", "required, must be >= 1");
  if (c.mode != CoeffMode::uniform_with_replacement && c.s > c.n) fail("data.s", "must be <= data.n for this mode");
  if (c.mode == CoeffMode::cooccurrence_target && !(c.rho2_target > 0.0 && c.rho2_target <= 1.0))
    fail("data.rho2_target", "cooccurrence_target mode needs a target in (0, 1]");
  if (c.alpha < 0.0 || c.alpha > 1.0) fail("data.alpha", "must lie in [0, 1]");
  if (c.sigma < 0.0) fail("data.sigma", "must be >= 0");
  if (c.cross_fraction < 0.0 || c.cross_fraction > 1.0) fail("data.cross_fraction", "must lie in [0, 1]");
  if (c.M < 0) fail("model.M", "must be >= 0 (0 selects 4 n)");
  const Index M = c.resolved_M();
  const int groups = c.method == "ba" ? 1 : c.K_groups;
  if (c.K_groups < 1 || c.K_groups > M) fail("train.K_groups", "must lie in [1, M]");
  if (!(c.htf > 0.0 && c.htf <= 1.0)) fail("train.htf", "must lie in (0, 1]");
  if (groups > 1 && !(c.ltf < c.htf)) fail("train.ltf", "must be below train.htf");
  if (!(c.epsilon > 0.0)) fail("train.epsilon", "must be > 0");
  if ((groups > 1 ? c.ltf : c.htf) <= c.epsilon)
    fail(groups > 1 ? "train.ltf" : "train.htf",
         "must exceed train.epsilon; otherwise a neuron can be both above its TAF and below the dead threshold, "
         "and the decrease and increase branches are no longer mutually exclusive");
  if (c.gamma_plus < 0.0 || c.gamma_plus >= 1.0) fail("train.gamma_plus", "must lie in [0, 1)");
  if (c.gamma_minus < 0.0 || c.gamma_minus >= 1.0) fail("train.gamma_minus", "must lie in [0, 1)");
  if (c.batch_size < 1) fail("train.batch_size", "must be >= 1");
  if (c.buffer_size != 0 && c.buffer_size < c.batch_size) fail("train.buffer_size", "must be 0 or >= train.batch_size");
  if (c.steps < 0) fail("train.steps", "must be >= 0");
  if (!(c.lr > 0.0)) fail("train.lr", "must be > 0");
  if (c.weight_decay < 0.0) fail("train.weight_decay", "must be >= 0");
  if (c.beta1 < 0.0 || c.beta1 >= 1.0) fail("train.beta1", "must lie in [0, 1)");
  if (c.beta2 < 0.0 || c.beta2 >= 1.0) fail("train.beta2", "must lie in [0, 1)");
  if (!(c.adam_eps > 0.0)) fail("train.adam_eps", "must be > 0");
  if (c.topk_K < 1 || c.topk_K > M) fail("train.topk_K", "must lie in [1, M]");
  if (!(c.l1_lambda >= 0.0) || !std::isfinite(c.l1_lambda)) fail("train.l1_lambda", "must be finite and >= 0");
  if (!(c.theory_b < 0.0)) fail("train.theory_b", "must be < 0");
  if (c.theory_eta && !(*c.theory_eta > 0.0)) fail("train.theory_eta", "must be > 0, inf or default");
  if (c.theory_T < 1) fail("train.theory_T", "must be >= 1");
  if (c.theory_epsilon < 0.0 || c.theory_epsilon >= 1.0) fail("train.theory_epsilon", "must lie in [0, 1)");
  if (c.method == "theory" && c.activation.kind == Activation::Kind::jump_relu)
    fail("model.activation", "theory runs need relu or softplus");
  if (c.log_every < 1) fail("train.log_every", "must be >= 1");
  if (c.checkpoint_every < 0) fail("train.checkpoint_every", "must be >= 0");
  if (c.theta_frac != 0.0 && !(c.theta_frac > 0.0 && c.theta_frac <= 1.0))
    fail("eval.theta_frac", "must be 0 (default) or lie in (0, 1]");
  if (c.tau_mode == "manual" && !(c.tau > 0.0 && c.tau <= 1.0)) fail("eval.tau", "manual tau must lie in (0, 1]");
  if (c.tau_mode == "auto" && c.n < 2) fail("eval.tau_mode", "auto needs n >= 2; use manual(<tau>)");
  if (c.valset_size < 1) fail("eval.valset_size", "must be >= 1");
  if (c.consistency_runs < 1) fail("eval.consistency_runs", "must be >= 1");
  if (!(c.subset.alpha > 0.0 && c.subset.alpha <= 1.0)) fail("eval.subset_alpha", "must lie in (0, 1]");
  if (c.consistency_taus.empty()) fail("eval.consistency_taus", "must list at least one threshold");
  if (!c.sweep_key.empty()) {
    if (!find_key(c.sweep_key) || c.sweep_key.rfind("sweep.", 0) == 0) fail("sweep.key", "'" + c.sweep_key + "' is not a sweepable key");
    if (c.sweep_values.empty()) fail("sweep.values", "must list at least one value");
  }
}

}  // namespace

CoeffGenConfig ExperimentConfig::coeff_config() const {
  CoeffGenConfig g;
  g.N = N;
  g.n = n;
  g.s = s;
  g.mode = mode;
  g.alpha = alpha;
  g.mu = mu;
  g.sigma = sigma;
  g.rho2_target = rho2_target;
  g.cross_fraction = cross_fraction;
  g.normalize_rows = normalize_rows;
  return g;
}

AdamWHyper ExperimentConfig::hyper() const { return {lr, beta1, beta2, adam_eps, weight_decay}; }

GbaConfig ExperimentConfig::gba_config() const {
  GbaConfig g;
  g.M = resolved_M();
  g.htf = htf;
  g.ltf = ltf;
  g.gamma_plus = gamma_plus;
  g.gamma_minus = gamma_minus;
  g.epsilon = epsilon;
  g.train_pre_bias = train_pre_bias;
  g.buffer_size = buffer_size;
  g.batch_size = batch_size;
  g.steps = steps;
  g.hyper = hyper();
  g.activation = activation;
  g.seed = seed;
  g.log_every = log_every;
  return g;
}

BaselineConfig ExperimentConfig::baseline_config() const {
  BaselineConfig b;
  b.kind = method == "l1" ? BaselineConfig::Kind::l1 : BaselineConfig::Kind::topk;
  b.M = resolved_M();
  b.k = topk_K;
  b.lambda = l1_lambda;
  b.batch_size = batch_size;
  b.steps = steps;
  b.train_pre_bias = train_pre_bias;
  b.hyper = hyper();
  b.activation = activation;
  b.seed = seed;
  b.log_every = log_every;
  return b;
}

TheoryConfig ExperimentConfig::theory_config() const {
  TheoryConfig t;
  t.b = theory_b;
  t.eta = theory_eta;
  t.T = theory_T;
  t.activation = activation;
  t.epsilon = theory_epsilon;
  t.center_data = theory_center;
  t.simulate_all = theory_all_neurons;
  t.seed = seed;
  return t;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  LineMap lines;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "train" && section != "eval" && section != "sweep" &&
          section != "global")
        throw ConfigError(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "expected key = value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError(line_no, "key '" + key + "' appears before any section header");
      key = section + "." + key;
    }
    if (lines.count(key)) throw ConfigError(line_no, "duplicate key '" + key + "' (first set on line " + std::to_string(lines[key]) + ")");
    set_key(cfg, key, value, line_no);
    lines[key] = line_no;
  }
  validate(cfg, lines);
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value) {
  set_key(cfg, dotted_key, value, 0);
  validate(cfg, {});
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const Key& k : keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace saelab
