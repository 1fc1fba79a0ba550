#pragma once

// Simulation designs and the replicated selection benchmark.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <omp.h>

#include "dcorsel/covariate.hpp"
#include "dcorsel/metrics.hpp"
#include "dcorsel/random.hpp"
#include "dcorsel/selector.hpp"

namespace dcorsel {

enum class ScenarioId { YR1, YR2, YR3, YR4, YR5, FUN_INDEP, FUN_COLLIN, CLASS_CROWN };

inline std::string_view to_string(ScenarioId id) {
  switch (id) {
    case ScenarioId::YR1: return "YR1";
    case ScenarioId::YR2: return "YR2";
    case ScenarioId::YR3: return "YR3";
    case ScenarioId::YR4: return "YR4";
    case ScenarioId::YR5: return "YR5";
    case ScenarioId::FUN_INDEP: return "FUN_INDEP";
    case ScenarioId::FUN_COLLIN: return "FUN_COLLIN";
    case ScenarioId::CLASS_CROWN: return "CLASS_CROWN";
  }
  return "?";
}

inline ScenarioId parse_scenario(std::string_view s) {
  for (auto id : {ScenarioId::YR1, ScenarioId::YR2, ScenarioId::YR3, ScenarioId::YR4, ScenarioId::YR5,
                  ScenarioId::FUN_INDEP, ScenarioId::FUN_COLLIN, ScenarioId::CLASS_CROWN})
    if (to_string(id) == s) return id;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

struct ScenarioSpec {
  ScenarioId id = ScenarioId::YR1;
  std::size_t n_train = 100;
  std::size_t n_test = 100;
  std::size_t replications = 1;
  /// Correlation parameter of the dependent YR designs.
  double theta = 0.6;
  /// Weights of the four signal parts of the functional designs.
  std::array<double, 4> a{1.0, 1.0, 1.0, 1.0};
  /// Number of scalar candidates in the YR designs.
  std::size_t p = 8;
  /// Multiplier of the standard normal noise.
  double sigma = 2.0;
  /// Grid points of the functional covariates.
  std::size_t grid_points = 101;

  static ScenarioSpec defaults(ScenarioId id) {
    ScenarioSpec s;
    s.id = id;
    switch (id) {
      case ScenarioId::YR2: s.sigma = 0.1; break;
      case ScenarioId::YR3: s.sigma = 0.0; break;
      case ScenarioId::FUN_INDEP:
      case ScenarioId::FUN_COLLIN:
        s.n_train = s.n_test = 200;
        s.sigma = 0.25;
        break;
      case ScenarioId::CLASS_CROWN:
        s.n_train = 1000;
        s.n_test = 200;
        s.sigma = 0.0;
        break;
      default: break;
    }
    return s;
  }

  bool is_yr() const noexcept { return id <= ScenarioId::YR5; }
  bool is_functional() const noexcept { return id == ScenarioId::FUN_INDEP || id == ScenarioId::FUN_COLLIN; }

  void validate() const {
    if (!(theta > -1.0 && theta < 1.0)) throw std::invalid_argument("theta must lie in (-1,1)");
    if (replications == 0) throw std::invalid_argument("replications must be at least 1");
    for (double v : a)
      if (!(v > 0.0)) throw std::invalid_argument("coefficients a must be positive");
    if (is_yr() && p < 4) throw std::invalid_argument("YR designs need p >= 4");
    if (n_train < 10 || n_test < 1) throw std::invalid_argument("sample sizes too small");
    if (is_functional() && grid_points < 5) throw std::invalid_argument("grid needs at least 5 points");
    if (sigma < 0.0) throw std::invalid_argument("sigma must be nonnegative");
  }

  /// Candidate names in generation order.
  std::vector<std::string> candidate_names() const {
    std::vector<std::string> out;
    if (is_yr()) {
      for (std::size_t j = 1; j <= p; ++j) out.push_back("Z" + std::to_string(j));
    } else if (is_functional()) {
      const bool col = id == ScenarioId::FUN_COLLIN;
      out = {"X1", "X2", col ? "X3*" : "X3", col ? "X4*" : "X4", "X5",
             "Z1", "Z2", col ? "Z3*" : "Z3", col ? "Z4*" : "Z4", "Z5"};
    } else {
      out = {"X1", "X2"};
      for (int j = 1; j <= 48; ++j) out.push_back("Z" + std::to_string(j));
    }
    return out;
  }

  /// Candidates that enter the generating model.
  std::vector<std::string> relevant() const {
    switch (id) {
      case ScenarioId::YR2: return {"Z1", "Z2", "Z3", "Z4"};
      case ScenarioId::FUN_INDEP:
      case ScenarioId::FUN_COLLIN: return {"X1", "X2", "Z1", "Z2"};
      case ScenarioId::CLASS_CROWN: return {"X1", "X2"};
      default: return {"Z1", "Z2", "Z3"};
    }
  }
};

struct Split {
  Dataset train;
  Dataset test;
};

namespace detail {

inline std::vector<double> draw_normal(std::size_t n, double sd, Rng& rng) {
  std::normal_distribution<double> z(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

inline std::vector<double> draw_uniform(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Rows of N_p(0, sigma) by Cholesky; column-major result, one vector per coordinate.
inline std::vector<std::vector<double>> draw_gaussian(std::size_t n, const Eigen::MatrixXd& cov, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance matrix is not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  const auto p = cov.rows();
  std::normal_distribution<double> z;
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(p), std::vector<double>(n));
  Eigen::VectorXd e(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < p; ++k) e[k] = z(rng);
    const Eigen::VectorXd x = l * e;
    for (Eigen::Index k = 0; k < p; ++k) cols[static_cast<std::size_t>(k)][i] = x[k];
  }
  return cols;
}

inline Dataset yr_sample(const ScenarioSpec& spec, std::size_t n, Rng& rng) {
  const std::size_t p = spec.p;
  std::vector<std::vector<double>> z;
  std::vector<double> y(n);
  switch (spec.id) {
    case ScenarioId::YR1:
      for (std::size_t j = 0; j < p; ++j) z.push_back(draw_normal(n, 1.0, rng));
      break;
    case ScenarioId::YR2:
      z.push_back(draw_normal(n, 1.0, rng));
      z.push_back(draw_normal(n, 2.0, rng));
      z.push_back(draw_uniform(n, -1.5, 1.5, rng));
      for (std::size_t j = 3; j < p; ++j) z.push_back(draw_uniform(n, -1.0, 1.0, rng));
      break;
    case ScenarioId::YR3:
      z.push_back(draw_normal(n, 1.4, rng));
      z.push_back(draw_uniform(n, -1.7, 1.7, rng));
      z.push_back(draw_normal(n, 0.8, rng));
      for (std::size_t j = 3; j < p; ++j) z.push_back(draw_normal(n, 1.0, rng));
      break;
    case ScenarioId::YR4:
    case ScenarioId::YR5: {
      const auto pi = static_cast<Eigen::Index>(p);
      Eigen::MatrixXd cov(pi, pi);
      for (Eigen::Index r = 0; r < pi; ++r)
        for (Eigen::Index c = 0; c < pi; ++c)
          cov(r, c) = r == c ? 1.0
                             : (spec.id == ScenarioId::YR4 ? spec.theta
                                                           : std::pow(spec.theta, static_cast<double>(std::abs(r - c))));
      z = draw_gaussian(n, cov, rng);
      break;
    }
    default: throw std::invalid_argument("not a YR scenario");
  }
  const auto e = draw_normal(n, 1.0, rng);
  for (std::size_t i = 0; i < n; ++i) {
    switch (spec.id) {
      case ScenarioId::YR2:
        y[i] = std::log(4.0 + std::sin(3.0 * z[0][i]) + std::sin(z[1][i]) + z[2][i] * z[2][i] + z[3][i] +
                        spec.sigma * e[i]);
        break;
      case ScenarioId::YR3:
        y[i] = std::abs(z[0][i]) + z[1][i] * z[1][i] + z[2][i] * z[2][i] + spec.sigma * e[i];
        break;
      default: y[i] = z[0][i] + z[1][i] + z[2][i] + spec.sigma * e[i];
    }
  }
  std::vector<Covariate> cands;
  const auto names = spec.candidate_names();
  for (std::size_t j = 0; j < p; ++j) cands.push_back(Covariate::scalar(names[j], std::move(z[j])));
  return Dataset(Covariate::scalar("Y", std::move(y)), std::move(cands));
}

/// Stationary OU paths with dX = -X dt + dW (stationary variance 1/2), sampled exactly on the grid. Row-major.
inline std::vector<double> ou_paths(std::size_t n, const std::vector<double>& grid, Rng& rng) {
  constexpr double stationary_var = 0.5;
  std::normal_distribution<double> z;
  const std::size_t t = grid.size();
  std::vector<double> v(n * t);
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::sqrt(stationary_var) * z(rng);
    v[i * t] = x;
    for (std::size_t k = 1; k < t; ++k) {
      const double rho = std::exp(-(grid[k] - grid[k - 1]));
      x = rho * x + std::sqrt(stationary_var * (1.0 - rho * rho)) * z(rng);
      v[i * t + k] = x;
    }
  }
  return v;
}

inline Dataset functional_sample(const ScenarioSpec& spec, std::size_t n, Rng& rng) {
  const std::size_t t = spec.grid_points;
  std::vector<double> grid(t);
  for (std::size_t k = 0; k < t; ++k) grid[k] = static_cast<double>(k) / static_cast<double>(t - 1);
  const auto w = trapezoid_weights(grid);
  std::vector<std::vector<double>> x;
  for (int j = 0; j < 5; ++j) x.push_back(ou_paths(n, grid, rng));
  std::vector<std::vector<double>> z;
  z.push_back(draw_uniform(n, 0.0, 1.0, rng));
  z.push_back(draw_normal(n, 1.0, rng));
  z.push_back(draw_normal(n, 1.0, rng));
  z.push_back(draw_uniform(n, 0.0, 1.0, rng));
  z.push_back(draw_normal(n, 1.0, rng));
  const auto e = draw_normal(n, 1.0, rng);

  std::vector<double> beta(t);
  for (std::size_t k = 0; k < t; ++k) beta[k] = 2.0 * grid[k] + std::sin(4.0 * std::numbers::pi * grid[k] + 0.1);
  const auto& a = spec.a;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double inner = 0.0, fourth = 0.0;
    for (std::size_t k = 0; k < t; ++k) {
      inner += w[k] * x[0][i * t + k] * beta[k];
      fourth += w[k] * std::pow(x[1][i * t + k], 4);
    }
    y[i] = 10.0 + a[0] * inner + a[1] * std::sqrt(fourth) + 3.0 * a[2] * z[0][i] + a[3] * z[1][i] * z[1][i] +
           spec.sigma * e[i];
  }
  if (spec.id == ScenarioId::FUN_COLLIN) {
    for (std::size_t v = 0; v < n * t; ++v) {
      x[2][v] = 0.95 * x[0][v] + 0.05 * x[2][v];
      x[3][v] = 0.95 * x[1][v] + 0.05 * x[3][v];
    }
    for (std::size_t i = 0; i < n; ++i) {
      z[2][i] = 0.95 * z[0][i] + 0.05 * z[2][i];
      z[3][i] = 0.95 * z[1][i] + 0.05 * z[3][i];
    }
  }
  const auto names = spec.candidate_names();
  std::vector<Covariate> cands;
  for (std::size_t j = 0; j < 5; ++j) cands.push_back(Covariate::functional(names[j], grid, std::move(x[j])));
  for (std::size_t j = 0; j < 5; ++j) cands.push_back(Covariate::scalar(names[5 + j], std::move(z[j])));
  return Dataset(Covariate::scalar("Y", std::move(y)), std::move(cands));
}

inline Dataset crown_sample(const ScenarioSpec& spec, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x1, x2;
  std::vector<std::size_t> label;
  while (x1.size() < n) {
    const double a = u(rng), b = u(rng);
    const double r = std::hypot(a, b);
    if (r < 0.6 || r > 1.0) continue;
    x1.push_back(a);
    x2.push_back(b);
    label.push_back(r > 0.8 ? 1 : 0);
  }
  const auto names = spec.candidate_names();
  std::vector<Covariate> cands;
  cands.push_back(Covariate::scalar(names[0], std::move(x1)));
  cands.push_back(Covariate::scalar(names[1], std::move(x2)));
  for (std::size_t j = 2; j < names.size(); ++j) cands.push_back(Covariate::scalar(names[j], draw_uniform(n, -1, 1, rng)));
  return Dataset(Covariate::categorical("group", std::move(label), {"inner", "outer"}), std::move(cands));
}

}  // namespace detail

inline Split gen_yr(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (!spec.is_yr()) throw std::invalid_argument("gen_yr: not a YR scenario");
  auto train_rng = substream(seed, "train");
  auto test_rng = substream(seed, "test");
  return {detail::yr_sample(spec, spec.n_train, train_rng), detail::yr_sample(spec, spec.n_test, test_rng)};
}

inline Split gen_functional(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (!spec.is_functional()) throw std::invalid_argument("gen_functional: not a functional scenario");
  auto train_rng = substream(seed, "train");
  auto test_rng = substream(seed, "test");
  return {detail::functional_sample(spec, spec.n_train, train_rng),
          detail::functional_sample(spec, spec.n_test, test_rng)};
}

inline Split gen_classification(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.id != ScenarioId::CLASS_CROWN) throw std::invalid_argument("gen_classification: not CLASS_CROWN");
  auto train_rng = substream(seed, "train");
  auto test_rng = substream(seed, "test");
  return {detail::crown_sample(spec, spec.n_train, train_rng), detail::crown_sample(spec, spec.n_test, test_rng)};
}

inline Split generate(const ScenarioSpec& spec, std::uint64_t seed) {
  if (spec.is_yr()) return gen_yr(spec, seed);
  if (spec.is_functional()) return gen_functional(spec, seed);
  return gen_classification(spec, seed);
}

struct ReplicationResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<std::string> selected;
  double rmspe = 0.0;
  double misclassification = 0.0;
};

struct BenchResult {
  ScenarioSpec spec;
  SelectorConfig config;
  std::vector<std::string> candidates;
  /// Selection frequency per candidate, aligned with `candidates`.
  std::vector<double> frequency;
  double mean_rmspe = 0.0;
  double mean_misclassification = 0.0;
  std::size_t failures = 0;
  std::vector<ReplicationResult> replications;

  double frequency_of(std::string_view name) const {
    for (std::size_t j = 0; j < candidates.size(); ++j)
      if (candidates[j] == name) return frequency[j];
    throw std::invalid_argument("unknown candidate '" + std::string(name) + "'");
  }
};

/// Seed of replication r of a benchmark started from `seed`.
inline std::uint64_t replication_seed(std::uint64_t seed, std::size_t r) {
  return substream_seed(seed, "replication", r);
}

/// One replication: generate, select, score on the test set.
inline ReplicationResult run_replication(const ScenarioSpec& spec, SelectorConfig cfg, std::uint64_t rep_seed) {
  ReplicationResult rr;
  rr.seed = rep_seed;
  try {
    const auto split = generate(spec, rep_seed);
    cfg.seed = rep_seed;
    const auto result = run_selection(split.train, cfg);
    rr.selected = result.state.selection_order();
    const auto pred = result.model.predict(split.test);
    const auto truth = split.test.response_values();
    rr.rmspe = rmspe(truth, pred);
    if (split.test.is_classification()) rr.misclassification = misclassification_rate(truth, pred);
    rr.ok = true;
  } catch (const std::exception& e) {
    rr.error = e.what();
  }
  return rr;
}

inline BenchResult run_benchmark(const ScenarioSpec& spec, const SelectorConfig& config) {
  spec.validate();
  config.validate();
  BenchResult out;
  out.spec = spec;
  out.config = config;
  out.candidates = spec.candidate_names();
  const std::size_t b = spec.replications;
  out.replications.resize(b);

  // Replications run in parallel; screening inside a replication then stays single-threaded.
  const int outer = b > 1 ? std::min<int>(static_cast<int>(b), worker_threads()) : 1;
#pragma omp parallel for schedule(dynamic) num_threads(outer) if (outer > 1)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(b); ++r)
    out.replications[static_cast<std::size_t>(r)] =
        run_replication(spec, config, replication_seed(config.seed, static_cast<std::size_t>(r)));

  out.frequency.assign(out.candidates.size(), 0.0);
  std::size_t ok = 0;
  for (const auto& rr : out.replications) {
    if (!rr.ok) {
      ++out.failures;
      continue;
    }
    ++ok;
    out.mean_rmspe += rr.rmspe;
    out.mean_misclassification += rr.misclassification;
    for (const auto& name : rr.selected)
      for (std::size_t j = 0; j < out.candidates.size(); ++j)
        if (out.candidates[j] == name) out.frequency[j] += 1.0;
  }
  if (ok > 0) {
    out.mean_rmspe /= static_cast<double>(ok);
    out.mean_misclassification /= static_cast<double>(ok);
    for (auto& f : out.frequency) f /= static_cast<double>(ok);
  }
  return out;
}

}  // namespace dcorsel
