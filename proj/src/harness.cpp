#include "saelab/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>

#include "json.hpp"
#include "saelab/baseline_trainers.hpp"
#include "saelab/identifiability.hpp"
#include "saelab/metrics.hpp"
#include "saelab/rng.hpp"
#include "saelab/sfa1.hpp"
#include "saelab/theory_ba.hpp"

namespace saelab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::trunc), columns_(header.size()) {
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << "\n";
}

CsvWriter& CsvWriter::cell(const std::string& v) {
  out_ << (filled_++ ? "," : "") << v;
  return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }
CsvWriter& CsvWriter::cell(long long v) { return cell(std::to_string(v)); }

void CsvWriter::end_row() {
  if (filled_ != columns_)
    throw Error("CsvWriter: row has " + std::to_string(filled_) + " cells, header has " + std::to_string(columns_));
  out_ << "\n";
  filled_ = 0;
}

DataBundle generate_data(const ExperimentConfig& cfg) {
  DataBundle b;
  b.V = gen_features(cfg.n, cfg.d, derive_seed(cfg.seed, "features"));
  b.H = gen_coefficients(cfg.coeff_config(), derive_seed(cfg.seed, "coefficients"));
  b.data = assemble_dataset(b.H, b.V, false);
  b.data.provenance = "generated: mode=" + to_string(cfg.mode) + " seed=" + std::to_string(cfg.seed);
  return b;
}

Matrix make_valset(const ExperimentConfig& cfg) {
  CoeffGenConfig g = cfg.coeff_config();
  g.N = cfg.valset_size;
  if (g.mode == CoeffMode::cooccurrence_target) g.N = std::max<Index>(g.N, cfg.n);
  const FeatureMatrix V = gen_features(cfg.n, cfg.d, derive_seed(cfg.seed, "features"));
  CoefficientMatrix H;
  try {
    H = gen_coefficients(g, derive_seed(cfg.seed, "valset"));
  } catch (const Error&) {
    // Small held-out sets can make the co-occurrence cap infeasible; fall back
    // to uniform supports, which is what the validation set is for anyway.
    g.mode = CoeffMode::uniform_without_replacement;
    H = gen_coefficients(g, derive_seed(cfg.seed, "valset"));
  }
  Matrix X = assemble_dataset(H, V, false).X;
  for (Index r = 0; r < X.rows(); ++r) {
    const double norm = X.row(r).norm();
    if (norm > 0.0) X.row(r) /= norm;
  }
  return X;
}

void write_history(const fs::path& path, const TrainHistory& h, bool sparsity) {
  std::vector<std::string> header = {"step", "loss", "act_fraction", "bias_min", "bias_mean", "bias_max", "adapted"};
  if (sparsity) {
    header.push_back("pre_act_fraction");
    header.push_back("post_act_fraction");
  }
  CsvWriter csv(path, header);
  for (const HistoryRow& r : h.rows) {
    csv.cell(r.step).cell(r.loss).cell(r.act_fraction).cell(r.bias_min).cell(r.bias_mean).cell(r.bias_max).cell(
        r.adapted ? 1 : 0);
    if (sparsity) csv.cell(r.pre_act_fraction).cell(r.act_fraction);
    csv.end_row();
  }
}

void save_checkpoint(const fs::path& dir, const TrainState& st) {
  fs::create_directories(dir);
  write_array((dir / "W.sfa1").string(), st.params.W);
  write_array((dir / "a.sfa1").string(), st.params.a);
  write_array((dir / "b.sfa1").string(), st.params.b);
  write_array((dir / "b_pre.sfa1").string(), st.params.b_pre);
  const std::pair<const char*, const SaeGrads*> moments[] = {{"m", &st.opt.m}, {"v", &st.opt.v}};
  for (const auto& [tag, g] : moments) {
    const std::string t = tag;
    write_array((dir / (t + "_W.sfa1")).string(), g->W);
    write_array((dir / (t + "_a.sfa1")).string(), g->a);
    write_array((dir / (t + "_b.sfa1")).string(), g->b);
    write_array((dir / (t + "_b_pre.sfa1")).string(), g->b_pre);
  }
  write_array((dir / "p_hat.sfa1").string(), st.stats.p_hat);
  write_array((dir / "r.sfa1").string(), st.stats.r);
  json j;
  j["step"] = st.step;
  j["adam_t"] = st.opt.t;
  j["buffer_count"] = st.stats.count;
  j["files"] = {"W.sfa1", "a.sfa1", "b.sfa1", "b_pre.sfa1", "m_W.sfa1", "m_a.sfa1", "m_b.sfa1", "m_b_pre.sfa1",
                "v_W.sfa1", "v_a.sfa1", "v_b.sfa1", "v_b_pre.sfa1", "p_hat.sfa1", "r.sfa1"};
  std::ofstream(dir / "checkpoint.json") << j.dump(2) << "\n";
}

TrainState load_checkpoint(const fs::path& dir, const AdamWHyper& hyper) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw Error("no checkpoint.json in " + dir.string());
  const json j = json::parse(in);
  TrainState st;
  st.params.W = read_matrix((dir / "W.sfa1").string());
  st.params.a = read_vector((dir / "a.sfa1").string());
  st.params.b = read_vector((dir / "b.sfa1").string());
  st.params.b_pre = read_vector((dir / "b_pre.sfa1").string());
  st.opt.hyper = hyper;
  st.opt.t = j.at("adam_t").get<long long>();
  SaeGrads* moments[] = {&st.opt.m, &st.opt.v};
  const char* tags[] = {"m", "v"};
  for (int i = 0; i < 2; ++i) {
    const std::string t = tags[i];
    moments[i]->W = read_matrix((dir / (t + "_W.sfa1")).string());
    moments[i]->a = read_vector((dir / (t + "_a.sfa1")).string());
    moments[i]->b = read_vector((dir / (t + "_b.sfa1")).string());
    moments[i]->b_pre = read_vector((dir / (t + "_b_pre.sfa1")).string());
  }
  st.stats.p_hat = read_vector((dir / "p_hat.sfa1").string());
  st.stats.r = read_vector((dir / "r.sfa1").string());
  st.stats.count = j.at("buffer_count").get<long long>();
  st.step = j.at("step").get<long long>();
  return st;
}

Stage stage_from_string(const std::string& text) {
  for (Stage s : {Stage::gen, Stage::train, Stage::eval, Stage::sweep, Stage::ident, Stage::theory})
    if (to_string(s) == text) return s;
  throw Error("unknown stage '" + text + "'");
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::gen: return "gen";
    case Stage::train: return "train";
    case Stage::eval: return "eval";
    case Stage::sweep: return "sweep";
    case Stage::ident: return "ident";
    case Stage::theory: return "theory";
  }
  return "unknown";
}

namespace {

struct Outputs {
  fs::path root;
  std::vector<std::string> files;
  json extra = json::object();

  fs::path add(const fs::path& rel) {
    files.push_back(rel.lexically_normal().generic_string());
    fs::create_directories((root / rel).parent_path());
    return root / rel;
  }
};

void write_data_artifacts(const ExperimentConfig& cfg, const DataBundle& b, Outputs& out) {
  write_array(out.add("V.sfa1").string(), b.V.rows);
  write_coefficients(out.add("H_coo.sfa1").string(), b.H);
  if (cfg.save_X) write_array(out.add("X.sfa1").string(), b.data.X);

  const double theta = cfg.theta_frac > 0.0 ? cfg.theta_frac : default_theta_frac(cfg.n);
  const SparsityStats st = sparsity_stats(b.H, theta);
  {
    CsvWriter csv(out.add("features.csv"), {"feature", "occurrences", "cutoff"});
    for (Index i = 0; i < cfg.n; ++i) {
      csv.cell(static_cast<long long>(i)).cell(st.occurrences[i]);
      csv.cell(st.cutoffs[i] ? format_double(*st.cutoffs[i]) : std::string("NA"));
      csv.end_row();
    }
  }
  json data;
  data["N"] = cfg.N;
  data["n"] = cfg.n;
  data["d"] = cfg.d;
  data["nnz"] = b.H.h.nonZeros();
  data["rho1"] = st.rho1;
  data["rho2"] = st.rho2;
  data["theta_frac"] = theta;
  if (cfg.htf < 0.5) {
    const double bias = bias_for_tail(cfg.htf);
    try {
      const ConcentrationReport rep = concentration_coefficient(b.H, bias, cfg.theory_epsilon);
      data["concentration"] = {{"bias", bias},
                               {"h_star", rep.h_star},
                               {"h_star_unsquared", rep.h_star_unsquared},
                               {"hslash_4_star", rep.hslash_4_star},
                               {"hslash_3_star", rep.hslash_3_star},
                               {"hslash_4_1", rep.hslash_4_1},
                               {"double_sum_root", rep.double_sum_root}};
      if (cfg.n >= 2) {
        const TafBounds tb = feasible_taf_bounds(cfg.n, cfg.d, std::max(rep.h_star, 1e-12));
        data["taf_bounds"] = {{"lo", tb.lo}, {"hi", tb.hi}, {"empty", tb.empty()}};
      }
    } catch (const Error& e) {
      data["concentration"] = {{"bias", bias}, {"error", e.what()}};
    }
  }
  out.extra["data"] = data;
}

double resolve_tau(const ExperimentConfig& cfg, const FeatureMatrix& V) {
  return cfg.tau_mode == "manual" ? cfg.tau : tau_align(V);
}

Objective eval_objective(const ExperimentConfig& cfg) {
  return cfg.method == "topk" ? Objective::topk(cfg.topk_K) : Objective::reconstruction();
}

void write_params(const fs::path& dir_rel, const SaeParams& p, Outputs& out) {
  write_array(out.add(dir_rel / "W.sfa1").string(), p.W);
  write_array(out.add(dir_rel / "a.sfa1").string(), p.a);
  write_array(out.add(dir_rel / "b.sfa1").string(), p.b);
  write_array(out.add(dir_rel / "b_pre.sfa1").string(), p.b_pre);
}

SaeParams read_params(const fs::path& dir) {
  SaeParams p;
  p.W = read_matrix((dir / "W.sfa1").string());
  p.a = read_vector((dir / "a.sfa1").string());
  p.b = read_vector((dir / "b.sfa1").string());
  p.b_pre = read_vector((dir / "b_pre.sfa1").string());
  return p;
}

json evaluate(const ExperimentConfig& cfg, const SaeParams& p, const FeatureMatrix& V, const Matrix& valset,
              const fs::path& neurons_rel, Outputs& out) {
  const Objective obj = eval_objective(cfg);
  const auto rows = neuron_eval(p, V, cfg.activation, valset, obj);
  CsvWriter csv(out.add(neurons_rel), {"neuron", "mcs", "max_act", "act_frac", "z_max"});
  for (std::size_t m = 0; m < rows.size(); ++m) {
    csv.cell(static_cast<long long>(m));
    csv.cell(rows[m].mcs ? format_double(*rows[m].mcs) : std::string("NA"));
    csv.cell(rows[m].max_activation).cell(rows[m].activation_fraction).cell(rows[m].z_max);
    csv.end_row();
  }
  const double tau = resolve_tau(cfg, V);
  const ActivationStats s = activation_stats(p, cfg.activation, valset, obj);
  return {{"tau", tau},
          {"frr", frr(p.W, V, tau)},
          {"activation_percentage", s.activation_percentage},
          {"bias_min", p.b.minCoeff()},
          {"bias_max", p.b.maxCoeff()}};
}

TrainResult train_with_checkpoints(const ExperimentConfig& cfg, const Dataset& data, const fs::path& run_rel,
                                   Outputs& out) {
  const bool gba = cfg.method == "gba" || cfg.method == "ba";
  GbaConfig gcfg = cfg.gba_config();
  BaselineConfig bcfg = cfg.baseline_config();
  const NeuronGroups groups = make_groups(gcfg.M, cfg.method == "ba" ? 1 : cfg.K_groups, cfg.htf, cfg.ltf);

  TrainResult total;
  std::optional<TrainState> state;
  long long done = 0;
  while (true) {
    long long next = cfg.steps;
    if (cfg.checkpoint_every > 0) next = std::min(cfg.steps, done + cfg.checkpoint_every);
    gcfg.steps = next;
    bcfg.steps = next;
    const TrainState* resume = state ? &*state : nullptr;
    TrainResult part = gba ? train_gba(data, groups, gcfg, resume)
                           : (cfg.method == "topk" ? train_topk(data, bcfg, resume) : train_l1(data, bcfg, resume));
    total.history.rows.insert(total.history.rows.end(), part.history.rows.begin(), part.history.rows.end());
    state = part.state;
    done = next;
    if (cfg.checkpoint_every > 0) {
      const fs::path rel = run_rel / ("checkpoint_" + std::to_string(done));
      save_checkpoint(out.root / rel, *state);
      for (const auto& e : fs::directory_iterator(out.root / rel))
        out.files.push_back((rel / e.path().filename()).lexically_normal().generic_string());
    }
    if (done >= cfg.steps) break;
  }
  total.state = std::move(*state);
  return total;
}

json run_train(const ExperimentConfig& cfg, Outputs& out) {
  const DataBundle b = generate_data(cfg);
  write_data_artifacts(cfg, b, out);
  const Matrix valset = make_valset(cfg);
  const bool baseline = cfg.method == "topk" || cfg.method == "l1";

  json runs = json::array();
  std::vector<SaeParams> trained;
  for (int r = 0; r < cfg.consistency_runs; ++r) {
    ExperimentConfig rc = cfg;
    rc.seed = cfg.seed + static_cast<std::uint64_t>(r);
    const fs::path rel = cfg.consistency_runs > 1 ? fs::path("run_" + std::to_string(r)) : fs::path(".");
    TrainResult res = train_with_checkpoints(rc, b.data, rel, out);
    write_history(out.add(rel / "history.csv"), res.history, baseline);
    write_params(rel / "params", res.state.params, out);
    json summary = evaluate(cfg, res.state.params, b.V, valset, rel / "neurons.csv", out);
    summary["train_seed"] = rc.seed;
    summary["final_loss"] = res.history.rows.empty() ? 0.0 : res.history.rows.back().loss;
    runs.push_back(summary);
    trained.push_back(std::move(res.state.params));
  }
  {
    CsvWriter csv(out.add("summary.csv"), {"run", "seed", "tau", "frr", "activation_percentage", "final_loss"});
    for (std::size_t r = 0; r < runs.size(); ++r) {
      csv.cell(r).cell(std::to_string(runs[r]["train_seed"].get<std::uint64_t>()));
      csv.cell(runs[r]["tau"].get<double>()).cell(runs[r]["frr"].get<double>());
      csv.cell(runs[r]["activation_percentage"].get<double>()).cell(runs[r]["final_loss"].get<double>());
      csv.end_row();
    }
  }
  if (trained.size() > 1) {
    CsvWriter csv(out.add("consistency.csv"), {"host", "tau", "percentage", "subset", "alpha"});
    for (std::size_t h = 0; h < trained.size(); ++h) {
      std::vector<Matrix> others;
      for (std::size_t j = 0; j < trained.size(); ++j)
        if (j != h) others.push_back(trained[j].W);
      const ConsistencyCurve c = cross_run_consistency(trained[h], others, cfg.consistency_taus, cfg.subset, valset,
                                                       cfg.activation, eval_objective(cfg));
      for (std::size_t t = 0; t < c.taus.size(); ++t) {
        csv.cell(h).cell(c.taus[t]).cell(c.percentage[t]).cell(to_string(cfg.subset.by)).cell(cfg.subset.alpha);
        csv.end_row();
      }
    }
  }
  return runs;
}

json run_theory(const ExperimentConfig& cfg, Outputs& out) {
  const DataBundle b = generate_data(cfg);
  write_data_artifacts(cfg, b, out);
  const TheoryRunReport rep = run_modified_ba(b.H, b.V, cfg.theory_config(), cfg.resolved_M());
  {
    CsvWriter csv(out.add("theory.csv"), {"feature", "step", "alignment"});
    for (Index i = 0; i < rep.alignment.rows(); ++i)
      for (Index t = 0; t < rep.alignment.cols(); ++t) {
        csv.cell(std::to_string(i)).cell(static_cast<long long>(t)).cell(rep.alignment(i, t));
        csv.end_row();
      }
    csv.cell("mean").cell(static_cast<long long>(rep.alignment.cols() - 1)).cell(rep.mean_final());
    csv.end_row();
  }
  {
    CsvWriter csv(out.add("theory_init.csv"),
                  {"feature", "neuron", "alignment", "cond1", "max_cross", "cond2"});
    for (std::size_t i = 0; i < rep.init.matched.size(); ++i) {
      csv.cell(i).cell(static_cast<long long>(rep.init.matched[i])).cell(rep.init.alignment[i]);
      csv.cell(rep.init.cond1[i] ? 1 : 0).cell(rep.init.max_cross[i]).cell(rep.init.cond2[i] ? 1 : 0);
      csv.end_row();
    }
  }
  std::size_t ok = 0;
  for (bool s : rep.success) ok += s;
  return {{"eta", rep.eta},
          {"mean_final_alignment", rep.mean_final()},
          {"success_fraction", static_cast<double>(ok) / static_cast<double>(rep.success.size())},
          {"init_pass_fraction", rep.init.pass_fraction()},
          {"zeta0", rep.init.zeta0},
          {"zeta1", rep.init.zeta1},
          {"degenerate_steps", rep.degenerate_steps},
          {"mean_best_alignment", rep.best_alignment.size() ? json(rep.mean_best()) : json(nullptr)}};
}

json run_ident(const ExperimentConfig& cfg, Outputs& out) {
  const DataBundle b = generate_data(cfg);
  write_data_artifacts(cfg, b, out);
  const RowAverager A = build_row_averager(b.H);
  const Matrix AX = recover_directions(A, b.data.X);
  double min_cos = 1.0;
  for (Index i = 0; i < cfg.n; ++i)
    min_cos = std::min(min_cos, b.V.rows.row(i).dot(AX.row(i)) / (b.V.rows.row(i).norm() * AX.row(i).norm()));
  const IdentReport self = ident_report(b.H, b.V, b.H, b.V);
  const SplitInstance split = feature_split_instance(b.H, b.V, 0.1, derive_seed(cfg.seed, "split"));
  const IdentReport rep = ident_report(b.H, b.V, split.H_alt, split.V_alt);
  CsvWriter csv(out.add("ident.csv"), {"i", "diag", "cos", "K_size"});
  for (Index i = 0; i < cfg.n; ++i) {
    csv.cell(static_cast<long long>(i)).cell(rep.diag(i)).cell(rep.cosines[i]).cell(rep.K[i].size());
    csv.end_row();
  }
  std::ofstream txt(out.add("ident_report.txt"));
  txt << "min_cos_AX " << format_double(min_cos) << "\n"
      << "max_offdiag_AH " << format_double(self.max_offdiag) << "\n"
      << "diag_pass " << (self.diag_pass ? "true" : "false") << "\n"
      << "self_epsilon " << format_double(self.epsilon) << "\n"
      << "split_epsilon " << format_double(rep.epsilon) << "\n"
      << "split_disjoint " << (rep.disjoint ? "true" : "false") << "\n"
      << "split_certified " << (rep.certified ? "true" : "false") << "\n"
      << "split_crossmax " << format_double(rep.crossmax) << "\n"
      << "row_scale_ratio_min " << format_double(rep.row_scale_ratio.minCoeff()) << "\n"
      << "row_scale_ratio_max " << format_double(rep.row_scale_ratio.maxCoeff()) << "\n";
  return {{"min_cos_AX", min_cos},
          {"max_offdiag_AH", self.max_offdiag},
          {"self_epsilon", self.epsilon},
          {"split_epsilon", rep.epsilon},
          {"split_disjoint", rep.disjoint}};
}

json run_eval(const ExperimentConfig& cfg, Outputs& out) {
  const fs::path params_dir = out.root / "params";
  if (!fs::exists(params_dir / "W.sfa1"))
    throw Error("no trained parameters under " + params_dir.string() + "; run the train stage first");
  const DataBundle b = generate_data(cfg);
  const SaeParams p = read_params(params_dir);
  require_dims(p.d() == cfg.d, "stored parameters do not match data.d");
  return evaluate(cfg, p, b.V, make_valset(cfg), "eval_neurons.csv", out);
}

json run_sweep(const ExperimentConfig& cfg, Outputs& out) {
  if (cfg.sweep_key.empty()) throw Error("sweep stage needs sweep.key and sweep.values");
  CsvWriter csv(out.add("sweep.csv"), {"key", "value", "frr", "activation_percentage", "final_loss", "dir"});
  json rows = json::array();
  for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
    ExperimentConfig sub = cfg;
    sub.sweep_key.clear();
    sub.sweep_values.clear();
    apply_override(sub, cfg.sweep_key, cfg.sweep_values[i]);
    const fs::path rel = "sweep_" + std::to_string(i);
    Outputs child{out.root / rel, {}, json::object()};
    fs::create_directories(child.root);
    const json runs = run_train(sub, child);
    for (const auto& f : child.files) out.files.push_back((rel / f).generic_string());
    std::ofstream(child.root / "config.ini") << serialize_config(sub);
    out.files.push_back((rel / "config.ini").generic_string());
    const json& r0 = runs[0];
    csv.cell(cfg.sweep_key).cell(cfg.sweep_values[i]).cell(r0["frr"].get<double>());
    csv.cell(r0["activation_percentage"].get<double>()).cell(r0["final_loss"].get<double>()).cell(rel.string());
    csv.end_row();
    rows.push_back({{"value", cfg.sweep_values[i]}, {"summary", r0}});
  }
  return rows;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, Stage stage, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Outputs out{out_dir, {}, json::object()};
  const auto start = std::chrono::steady_clock::now();
  json results;
  try {
    switch (stage) {
      case Stage::gen: write_data_artifacts(cfg, generate_data(cfg), out); break;
      case Stage::train: results = cfg.method == "theory" ? run_theory(cfg, out) : run_train(cfg, out); break;
      case Stage::eval: results = run_eval(cfg, out); break;
      case Stage::sweep: results = run_sweep(cfg, out); break;
      case Stage::ident: results = run_ident(cfg, out); break;
      case Stage::theory: results = run_theory(cfg, out); break;
    }
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(to_string(stage), e.what());
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::string config_text = serialize_config(cfg);
  std::ofstream(out_dir / "config.ini") << config_text;
  out.files.push_back("config.ini");

  json manifest;
  manifest["software_version"] = kSoftwareVersion;
  manifest["stage"] = to_string(stage);
  manifest["seed"] = cfg.seed;
  manifest["rng"] = std::string(kRngDescription);
  manifest["config"] = config_text;
  manifest["outputs"] = out.files;
  if (!out.extra.empty()) manifest["extra"] = out.extra;
  if (!results.is_null()) manifest["results"] = results;
  manifest["wall_clock_seconds"] = seconds;
  manifest["timestamp"] = utc_now();
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace saelab
