#include "saelab/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>

#include "saelab/rng.hpp"

namespace saelab {

namespace {

using Triplet = Eigen::Triplet<double>;

// Draws k distinct indices from [0, n) by partial Fisher-Yates.
std::vector<Index> sample_distinct(Rng& rng, Index n, int k, std::vector<Index>& scratch) {
  scratch.resize(static_cast<std::size_t>(n));
  std::iota(scratch.begin(), scratch.end(), Index{0});
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const auto pick = static_cast<Index>(j + rng.below(static_cast<std::uint64_t>(n - j)));
    std::swap(scratch[static_cast<std::size_t>(j)], scratch[static_cast<std::size_t>(pick)]);
    out.push_back(scratch[static_cast<std::size_t>(j)]);
  }
  return out;
}

std::vector<Index> permutation(Rng& rng, Index n) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

SparseMatrix from_triplets(Index rows, Index cols, const std::vector<Triplet>& triplets) {
  SparseMatrix h(rows, cols);
  h.setFromTriplets(triplets.begin(), triplets.end());  // duplicates are summed
  h.makeCompressed();
  return h;
}

void normalize_sparse_rows(SparseMatrix& h) {
  for (Index r = 0; r < h.outerSize(); ++r) {
    double sq = 0.0;
    for (SparseMatrix::InnerIterator it(h, r); it; ++it) sq += it.value() * it.value();
    if (sq <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (SparseMatrix::InnerIterator it(h, r); it; ++it) it.valueRef() *= inv;
  }
}

CoefficientMatrix gen_uniform(const CoeffGenConfig& cfg, std::uint64_t seed, bool with_replacement) {
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(cfg.N * cfg.s));
  const double w = 1.0 / std::sqrt(static_cast<double>(cfg.s));
  std::vector<Index> scratch;
  for (Index row = 0; row < cfg.N; ++row) {
    Rng rng = Rng::substream(seed, "coeff_row", static_cast<std::uint64_t>(row));
    if (with_replacement) {
      for (int j = 0; j < cfg.s; ++j)
        triplets.emplace_back(row, static_cast<Index>(rng.below(static_cast<std::uint64_t>(cfg.n))), w);
    } else {
      for (Index col : sample_distinct(rng, cfg.n, cfg.s, scratch)) triplets.emplace_back(row, col, w);
    }
  }
  CoefficientMatrix out{from_triplets(cfg.N, cfg.n, triplets), cfg.s};
  if (cfg.normalize_rows) normalize_sparse_rows(out.h);
  return out;
}

CoefficientMatrix gen_imbalanced(const CoeffGenConfig& cfg, std::uint64_t seed) {
  require(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, "imbalanced mode needs alpha in [0, 1]");
  require(cfg.n >= 2, "imbalanced mode needs n >= 2");
  Rng split_rng = Rng::substream(seed, "coeff_split");
  const std::vector<Index> perm = permutation(split_rng, cfg.n);
  const Index n_high = cfg.n / 2;

  std::vector<Triplet> triplets;
  const double w = 1.0 / std::sqrt(static_cast<double>(cfg.s));
  for (Index row = 0; row < cfg.N; ++row) {
    Rng rng = Rng::substream(seed, "coeff_row", static_cast<std::uint64_t>(row));
    const bool high_only = rng.uniform() < cfg.alpha;
    for (int j = 0; j < cfg.s; ++j) {
      Index col;
      if (high_only)
        col = perm[rng.below(static_cast<std::uint64_t>(n_high))];
      else
        col = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cfg.n)));
      triplets.emplace_back(row, col, w);
    }
  }
  CoefficientMatrix out{from_triplets(cfg.N, cfg.n, triplets), cfg.s};
  if (cfg.normalize_rows) normalize_sparse_rows(out.h);
  return out;
}

CoefficientMatrix gen_perturbed(const CoeffGenConfig& cfg, std::uint64_t seed) {
  require(cfg.s <= cfg.n, "perturbed_tanh mode samples distinct features: s must be <= n");
  require(cfg.sigma >= 0.0, "perturbed_tanh mode needs sigma >= 0");
  const double base = 1.0 / std::sqrt(static_cast<double>(cfg.s));
  const double mu = std::isnan(cfg.mu) ? std::atanh(base) : cfg.mu;

  Rng split_rng = Rng::substream(seed, "coeff_split");
  const std::vector<Index> perm = permutation(split_rng, cfg.n);
  std::vector<char> high_cutoff(static_cast<std::size_t>(cfg.n), 0);
  for (Index k = 0; k < cfg.n / 2; ++k) high_cutoff[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = 1;

  std::vector<Triplet> triplets;
  std::vector<Index> scratch;
  for (Index row = 0; row < cfg.N; ++row) {
    Rng rng = Rng::substream(seed, "coeff_row", static_cast<std::uint64_t>(row));
    for (Index col : sample_distinct(rng, cfg.n, cfg.s, scratch)) {
      double value = base;
      if (high_cutoff[static_cast<std::size_t>(col)]) value = std::abs(std::tanh(rng.normal(mu, cfg.sigma)));
      if (value > 0.0) triplets.emplace_back(row, col, value);
    }
  }
  CoefficientMatrix out{from_triplets(cfg.N, cfg.n, triplets), cfg.s};
  normalize_sparse_rows(out.h);
  return out;
}

// Rows are either single-feature rows or shared-support rows with s distinct
// features drawn from one feature block. Every pair count is capped at
// floor(rho2_target * |D_i|), and the block size / shared fraction are chosen so
// that the expected in-block ratio sits at 80% of the target; fluctuations then
// push the maximum up against the cap.
CoefficientMatrix gen_cooccurrence(const CoeffGenConfig& cfg, std::uint64_t seed) {
  const double target = cfg.rho2_target;
  const Index n = cfg.n;
  const int s = cfg.s;
  require(target > 0.0 && target <= 1.0, "cooccurrence_target needs rho2_target in (0, 1]");
  require(s >= 2, "cooccurrence_target needs s >= 2 (with s = 1 there is no co-occurrence)");
  require(s <= n, "cooccurrence_target needs s <= n");
  require(cfg.cross_fraction >= 0.0 && cfg.cross_fraction <= 1.0, "cross_fraction must lie in [0, 1]");

  // The pair cap is floor(target * occurrence), so aim at 80% of the integer
  // cap rather than of the target itself.
  const double occ_estimate = static_cast<double>(cfg.N) * s / static_cast<double>(n);
  const double cap_estimate = std::floor(target * std::floor(occ_estimate));
  const double desired = 0.8 * std::min(target, cap_estimate / occ_estimate);
  const double uniform_ratio = static_cast<double>(s - 1) / static_cast<double>(n - 1);
  double shared_fraction = 1.0;
  Index block_count = 1;
  if (desired <= 0.0) {
    shared_fraction = 0.0;
  } else if (desired <= uniform_ratio) {
    // ratio(q) = q s (s-1) / ((n-1)(1 + q (s-1))) solved for q.
    const double c = desired * static_cast<double>(n - 1);
    shared_fraction = c / (static_cast<double>(s) * (s - 1) - c * (s - 1));
  } else {
    const double block_size = 1.0 + static_cast<double>(s - 1) / desired;
    block_count = std::max<Index>(1, static_cast<Index>(std::floor(static_cast<double>(n) / block_size)));
    if (n / block_count < s) throw Error("cooccurrence_target: rho2 target infeasible for s (blocks smaller than s)");
  }

  Rng rng = Rng::substream(seed, "coeff_cooccurrence");
  const std::vector<Index> perm = permutation(rng, n);
  // block b holds perm[block_begin[b] .. block_begin[b+1])
  std::vector<Index> block_begin(static_cast<std::size_t>(block_count + 1));
  for (Index b = 0; b <= block_count; ++b) block_begin[static_cast<std::size_t>(b)] = b * n / block_count;
  std::vector<Index> block_of(static_cast<std::size_t>(n));
  for (Index b = 0; b < block_count; ++b)
    for (Index k = block_begin[b]; k < block_begin[b + 1]; ++k) block_of[perm[k]] = b;

  const Index n_planned = static_cast<Index>(std::llround(shared_fraction * static_cast<double>(cfg.N)));
  const Index n_single_planned = cfg.N - n_planned;
  const double planned_occ =
      (static_cast<double>(n_planned) * s + static_cast<double>(n_single_planned)) / static_cast<double>(n);
  const auto cap = static_cast<int>(std::floor(target * std::floor(planned_occ)));
  if (cap < 1)
    throw Error("cooccurrence_target: rho2 target infeasible for (N, n, s): pair cap rounds to zero");

  // Remaining shared-row budget per feature.
  std::vector<double> budget(static_cast<std::size_t>(n), static_cast<double>(n_planned) * s / static_cast<double>(n));
  std::vector<std::vector<int>> pair_count(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
  std::vector<std::vector<Index>> shared_rows;
  shared_rows.reserve(static_cast<std::size_t>(n_planned));

  auto weighted_pick = [&](const std::vector<Index>& pool, const std::vector<char>& taken, bool use_budget) -> Index {
    double total = 0.0;
    for (Index f : pool)
      if (!taken[f]) total += use_budget ? std::max(budget[f], 0.0) + 1e-3 : 1.0;
    double u = rng.uniform() * total;
    Index last = -1;
    for (Index f : pool) {
      if (taken[f]) continue;
      last = f;
      u -= use_budget ? std::max(budget[f], 0.0) + 1e-3 : 1.0;
      if (u < 0.0) return f;
    }
    return last;
  };

  std::vector<Index> all_features(static_cast<std::size_t>(n));
  std::iota(all_features.begin(), all_features.end(), Index{0});
  std::vector<std::vector<Index>> block_pool(static_cast<std::size_t>(block_count));
  for (Index b = 0; b < block_count; ++b)
    block_pool[b].assign(perm.begin() + block_begin[b], perm.begin() + block_begin[b + 1]);

  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  Index unplaced = 0;
  for (Index r = 0; r < n_planned; ++r) {
    const bool cross = rng.uniform() < cfg.cross_fraction;
    std::vector<Index> row;
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      const bool use_budget = attempt < 200;
      const std::vector<Index>* pool = &all_features;
      if (!cross && block_count > 1) {
        // Block chosen by remaining budget mass.
        double total = 0.0;
        std::vector<double> mass(static_cast<std::size_t>(block_count));
        for (Index b = 0; b < block_count; ++b) {
          for (Index f : block_pool[b]) mass[b] += std::max(budget[f], 0.0) + 1e-3;
          total += mass[b];
        }
        double u = rng.uniform() * total;
        Index chosen = block_count - 1;
        for (Index b = 0; b < block_count; ++b) {
          u -= mass[b];
          if (u < 0.0) {
            chosen = b;
            break;
          }
        }
        pool = &block_pool[chosen];
      }
      row.clear();
      for (int j = 0; j < s; ++j) {
        const Index f = weighted_pick(*pool, taken, use_budget);
        taken[f] = 1;
        row.push_back(f);
      }
      for (Index f : row) taken[f] = 0;
      bool ok = true;
      for (std::size_t a = 0; a < row.size() && ok; ++a)
        for (std::size_t c = a + 1; c < row.size(); ++c)
          if (pair_count[row[a]][row[c]] >= cap) {
            ok = false;
            break;
          }
      placed = ok;
    }
    if (!placed) {
      // Saturated pairs: the row becomes a single-feature row instead.
      ++unplaced;
      continue;
    }
    for (std::size_t a = 0; a < row.size(); ++a) {
      budget[row[a]] -= 1.0;
      for (std::size_t c = a + 1; c < row.size(); ++c) {
        ++pair_count[row[a]][row[c]];
        ++pair_count[row[c]][row[a]];
      }
    }
    shared_rows.push_back(std::move(row));
  }

  if (unplaced > n_planned / 20)
    throw Error("cooccurrence_target: rho2 target infeasible for (N, n, s): pair cap exhausted");
  const auto n_shared = static_cast<Index>(shared_rows.size());
  const Index n_single = cfg.N - n_shared;

  // Single-feature rows top every feature up towards the planned occurrence.
  std::vector<double> deficit(static_cast<std::size_t>(n));
  std::vector<double> occ(static_cast<std::size_t>(n), 0.0);
  for (const auto& row : shared_rows)
    for (Index f : row) occ[f] += 1.0;
  std::vector<Index> singles;
  singles.reserve(static_cast<std::size_t>(n_single));
  for (Index r = 0; r < n_single; ++r) {
    Index best = 0;
    double best_gap = -1e300;
    for (Index f = 0; f < n; ++f) {
      const double gap = planned_occ - occ[f];
      if (gap > best_gap) {
        best_gap = gap;
        best = f;
      }
    }
    occ[best] += 1.0;
    singles.push_back(best);
  }

  // Interleave both kinds in a seeded random order.
  std::vector<Index> order = permutation(rng, cfg.N);
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(n_shared * s + n_single));
  const double w_shared = 1.0 / std::sqrt(static_cast<double>(s));
  for (Index k = 0; k < cfg.N; ++k) {
    const Index row = order[k];
    if (k < n_shared) {
      for (Index f : shared_rows[k]) triplets.emplace_back(row, f, w_shared);
    } else {
      triplets.emplace_back(row, singles[k - n_shared], 1.0);
    }
  }
  return CoefficientMatrix{from_triplets(cfg.N, cfg.n, triplets), s};
}

// Column-wise view of H: for each column, its nonzero values.
std::vector<std::vector<double>> column_values(const SparseMatrix& h) {
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(h.cols()));
  for (Index r = 0; r < h.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(h, r); it; ++it)
      if (it.value() != 0.0) cols[static_cast<std::size_t>(it.col())].push_back(it.value());
  return cols;
}

// Sorted distinct values with multiplicities.
struct Histogram {
  std::vector<double> values;
  std::vector<double> counts;
  double total = 0.0;
};

Histogram make_histogram(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  Histogram h;
  for (double x : v) {
    if (!h.values.empty() && h.values.back() == x) {
      h.counts.back() += 1.0;
    } else {
      h.values.push_back(x);
      h.counts.push_back(1.0);
    }
  }
  h.total = static_cast<double>(v.size());
  return h;
}

// Smallest h in [0, 1] (to 1e-10) satisfying a predicate that is monotone in h.
double smallest_satisfying(const std::function<bool(double)>& ok, const char* what) {
  if (ok(0.0)) return 0.0;
  if (!ok(1.0)) throw Error(std::string("concentration_coefficient: bisection bracket failure for ") + what +
                            " (inequality unsatisfiable at h = 1)");
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (ok(mid))
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

// Smallest h with rhs(h) >= lhs, rhs nondecreasing.
double smallest_satisfying(const std::function<double(double)>& rhs, double lhs, const char* what) {
  return smallest_satisfying([&](double h) { return rhs(h) >= lhs - 1e-12 * std::abs(lhs); }, what);
}

// log P(Z >= x), accurate far into the upper tail.
double log_gaussian_tail(double x) {
  if (x < 25.0) return std::log(0.5 * std::erfc(x / std::numbers::sqrt2));
  const double x2 = x * x;
  return -0.5 * x2 - std::log(x * std::sqrt(2.0 * std::numbers::pi)) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

double log_sum_exp(const std::vector<double>& terms) {
  double top = -std::numeric_limits<double>::infinity();
  for (double t : terms) top = std::max(top, t);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  return top + std::log(acc);
}

}  // namespace

std::string to_string(CoeffMode mode) {
  switch (mode) {
    case CoeffMode::uniform_with_replacement: return "uniform_with_replacement";
    case CoeffMode::uniform_without_replacement: return "uniform_without_replacement";
    case CoeffMode::imbalanced: return "imbalanced";
    case CoeffMode::perturbed_tanh: return "perturbed_tanh";
    case CoeffMode::cooccurrence_target: return "cooccurrence_target";
  }
  return "unknown";
}

CoeffMode coeff_mode_from_string(const std::string& text) {
  for (CoeffMode m : {CoeffMode::uniform_with_replacement, CoeffMode::uniform_without_replacement,
                      CoeffMode::imbalanced, CoeffMode::perturbed_tanh, CoeffMode::cooccurrence_target})
    if (to_string(m) == text) return m;
  throw Error("unknown coefficient mode '" + text + "'");
}

FeatureMatrix gen_features(Index n, Index d, std::uint64_t seed) {
  require(n >= 1 && d >= 1, "gen_features needs n >= 1 and d >= 1");
  FeatureMatrix V{Matrix(n, d)};
  for (Index i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, "feature_row", static_cast<std::uint64_t>(i));
    for (Index j = 0; j < d; ++j) V.rows(i, j) = rng.normal();
  }
  return V;
}

CoefficientMatrix gen_coefficients(const CoeffGenConfig& config, std::uint64_t seed) {
  require(config.N >= 1 && config.n >= 1 && config.s >= 1, "gen_coefficients needs N, n, s >= 1");
  switch (config.mode) {
    case CoeffMode::uniform_with_replacement: return gen_uniform(config, seed, true);
    case CoeffMode::uniform_without_replacement:
      require(config.s <= config.n, "uniform_without_replacement needs s <= n");
      return gen_uniform(config, seed, false);
    case CoeffMode::imbalanced: return gen_imbalanced(config, seed);
    case CoeffMode::perturbed_tanh: return gen_perturbed(config, seed);
    case CoeffMode::cooccurrence_target: return gen_cooccurrence(config, seed);
  }
  throw Error("unhandled coefficient mode");
}

Dataset assemble_dataset(const CoefficientMatrix& H, const FeatureMatrix& V, bool normalize_rows) {
  require_dims(H.n() == V.n(), "assemble_dataset: H has " + std::to_string(H.n()) + " columns but V has " +
                                   std::to_string(V.n()) + " rows");
  Dataset data;
  data.X = H.h * V.rows;
  if (normalize_rows) {
    for (Index r = 0; r < data.X.rows(); ++r) {
      const double norm = data.X.row(r).norm();
      if (norm == 0.0) throw Error("assemble_dataset: row " + std::to_string(r) + " is zero and cannot be normalized");
      data.X.row(r) /= norm;
    }
    data.normalized = true;
  }
  return data;
}

double default_theta_frac(Index n) {
  if (n <= 2) return 1.0;
  return std::min(1.0, 1.0 / std::log2(static_cast<double>(n)));
}

SparsityStats sparsity_stats(const CoefficientMatrix& H, double theta_frac) {
  require(theta_frac > 0.0 && theta_frac <= 1.0, "sparsity_stats needs theta_frac in (0, 1]");
  const Index N = H.N();
  const Index n = H.n();
  SparsityStats stats;
  stats.theta_frac = theta_frac;
  stats.occurrences.assign(static_cast<std::size_t>(n), 0);
  stats.cutoffs.assign(static_cast<std::size_t>(n), std::nullopt);

  // Row supports and column -> rows index.
  std::vector<std::vector<Index>> row_support(static_cast<std::size_t>(N));
  std::vector<std::vector<Index>> col_rows(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> col_vals(static_cast<std::size_t>(n));
  for (Index r = 0; r < N; ++r) {
    for (SparseMatrix::InnerIterator it(H.h, r); it; ++it) {
      if (it.value() == 0.0) continue;
      row_support[r].push_back(it.col());
      col_rows[it.col()].push_back(r);
      col_vals[it.col()].push_back(it.value());
    }
  }

  std::vector<std::size_t> co(static_cast<std::size_t>(n), 0);
  std::vector<Index> touched;
  for (Index i = 0; i < n; ++i) {
    const std::size_t occ = col_rows[i].size();
    stats.occurrences[i] = occ;
    if (N > 0) stats.rho1 = std::max(stats.rho1, static_cast<double>(occ) / static_cast<double>(N));
    if (occ == 0) continue;

    touched.clear();
    for (Index r : col_rows[i]) {
      for (Index j : row_support[r]) {
        if (j == i) continue;
        if (co[j] == 0) touched.push_back(j);
        ++co[j];
      }
    }
    for (Index j : touched) {
      stats.rho2 = std::max(stats.rho2, static_cast<double>(co[j]) / static_cast<double>(occ));
      co[j] = 0;
    }

    std::vector<double>& vals = col_vals[i];
    std::sort(vals.begin(), vals.end(), std::greater<>());
    // Largest h with #{H >= h} >= theta |D_i| is the k-th largest value.
    auto k = static_cast<std::size_t>(std::ceil(theta_frac * static_cast<double>(occ) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, occ);
    stats.cutoffs[i] = std::min(1.0, vals[k - 1]);
  }
  return stats;
}

double gaussian_tail(double x) {
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

double bias_for_tail(double p) {
  require(p > 0.0 && p < 0.5, "bias_for_tail needs p in (0, 0.5)");
  // Phi(-b) = p with b < 0; tail is decreasing in -b.
  double lo = 0.0;
  double hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (gaussian_tail(mid) > p)
      lo = mid;
    else
      hi = mid;
  }
  return -0.5 * (lo + hi);
}

double concentration_coefficient_zeta1(Index n, double epsilon) {
  return std::numbers::sqrt2 * (1.0 + epsilon) * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

ConcentrationReport concentration_coefficient(const CoefficientMatrix& H, double b, double epsilon) {
  require(b < 0.0, "concentration_coefficient needs b < 0");
  const auto cols = column_values(H.h);
  std::vector<Histogram> hists;
  for (const auto& c : cols)
    if (!c.empty()) hists.push_back(make_histogram(c));
  require(!hists.empty(), "concentration_coefficient: H has no nonzero column");

  ConcentrationReport rep;
  rep.bias_used = b;
  rep.zeta1 = concentration_coefficient_zeta1(H.n(), epsilon);
  const double zeta1 = rep.zeta1;
  const double abs_b = std::abs(b);

  auto kernel_star = [b](int q, double h) {
    const double qd = static_cast<double>(q);
    return gaussian_tail(-b / std::sqrt((qd - 1.0) / qd * h * h + 1.0 / qd));
  };
  // The zeta1-shifted kernel Phi(-(b + h zeta1) / sqrt(1 - h^2))^4 saturates
  // at 1 well before h = 1, so that inequality is compared through
  // log(1 - kernel) instead.
  auto log_shift_complement = [b, zeta1](double h) {
    const double num = b + h * zeta1;
    const double den2 = 1.0 - h * h;
    const double neg_inf = -std::numeric_limits<double>::infinity();
    if (den2 <= 0.0) {
      if (num > 0.0) return neg_inf;
      return num < 0.0 ? 0.0 : std::log1p(-std::pow(0.5, 4));
    }
    const double log_c = log_gaussian_tail(num / std::sqrt(den2));  // 1 - tail
    const double c = std::exp(log_c);
    if (c < 1e-100) return std::log(4.0) + log_c;
    return std::log(-std::expm1(4.0 * std::log1p(-c)));
  };
  auto max_column_mean = [&](const std::function<double(double)>& f) {
    double best = 0.0;
    for (const auto& hist : hists) {
      double acc = 0.0;
      for (std::size_t k = 0; k < hist.values.size(); ++k) acc += hist.counts[k] * f(hist.values[k]);
      best = std::max(best, acc / hist.total);
    }
    return best;
  };

  for (int q : {4, 3}) {
    auto f = [&](double h) { return kernel_star(q, h); };
    const double lhs = max_column_mean(f);
    const double root = smallest_satisfying(f, lhs, q == 4 ? "hslash_4_star" : "hslash_3_star");
    (q == 4 ? rep.hslash_4_star : rep.hslash_3_star) = root;
  }
  if (!(zeta1 > -b))
    throw Error("concentration_coefficient: bisection bracket failure for hslash_4_1 (needs -b < zeta1)");
  double lhs_log = std::numeric_limits<double>::infinity();  // min over columns of log mean(1 - kernel)
  for (const auto& hist : hists) {
    std::vector<double> terms;
    for (std::size_t k = 0; k < hist.values.size(); ++k)
      terms.push_back(std::log(hist.counts[k]) + log_shift_complement(hist.values[k]));
    lhs_log = std::min(lhs_log, log_sum_exp(terms) - std::log(hist.total));
  }
  rep.hslash_4_1 = smallest_satisfying(
      [&](double h) {
        const double v = log_shift_complement(h);
        if (!std::isfinite(lhs_log)) return v == lhs_log;
        return v <= lhs_log + 1e-12;
      },
      "hslash_4_1");

  auto pair_kernel = [abs_b](double hh) {
    hh = std::min(hh, 1.0);
    return gaussian_tail(abs_b * std::sqrt((1.0 - hh) / (1.0 + hh)));
  };
  double lhs = 0.0;
  for (const auto& hist : hists) {
    double acc = 0.0;
    for (std::size_t a = 0; a < hist.values.size(); ++a)
      for (std::size_t c = 0; c < hist.values.size(); ++c)
        acc += hist.counts[a] * hist.counts[c] * pair_kernel(hist.values[a] * hist.values[c]);
    lhs += acc / (hist.total * hist.total);
  }
  const auto n_eff = static_cast<double>(hists.size());
  rep.double_sum_root =
      smallest_satisfying([&](double h) { return n_eff * pair_kernel(h * h); }, lhs, "the pairwise inequality");

  const double max_hslash = std::max({rep.hslash_4_star, rep.hslash_3_star, rep.hslash_4_1});
  rep.h_star = std::max(max_hslash, rep.double_sum_root);
  rep.h_star_unsquared = std::max(max_hslash * max_hslash, rep.double_sum_root);
  return rep;
}

TafBounds feasible_taf_bounds(Index n, Index d, double h_star) {
  require(n >= 2 && d >= 1, "feasible_taf_bounds needs n >= 2 and d >= 1");
  require(h_star > 0.0 && h_star <= 1.0, "feasible_taf_bounds needs h_star in (0, 1]");
  const double nd = static_cast<double>(n);
  TafBounds bounds;
  bounds.lo = 1.0 / nd;
  bounds.hi = std::min(std::pow(nd, -(1.0 + h_star * h_star) / 2.0), static_cast<double>(d) / nd);
  return bounds;
}

}  // namespace saelab
