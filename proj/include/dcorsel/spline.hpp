#pragma once

// Penalized cubic regression splines: a cubic B-spline basis with knots at
// quantiles of the data, an integrated squared second-derivative penalty, a
// weighted sum-to-zero identifiability constraint, and smoothing chosen by
// generalized cross-validation subject to an effective-degrees-of-freedom cap.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace dcorsel {

inline constexpr std::size_t kDefaultSplineBasis = 10;

class BSplineBasis {
 public:
  BSplineBasis() = default;

  /// Cubic basis on [lo, hi] with the given strictly interior knots.
  BSplineBasis(double lo, double hi, std::vector<double> interior) : lo_(lo), hi_(hi) {
    if (!(hi > lo)) throw std::invalid_argument("BSplineBasis: empty range");
    knots_.assign(4, lo);
    knots_.insert(knots_.end(), interior.begin(), interior.end());
    knots_.insert(knots_.end(), 4, hi);
  }

  /// Basis of `size` functions with interior knots at quantiles of the unique values of x.
  static BSplineBasis at_quantiles(std::span<const double> x, std::size_t size) {
    std::vector<double> u(x.begin(), x.end());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    if (u.size() < 4 || size < 4) throw std::invalid_argument("BSplineBasis: need at least 4 distinct values");
    size = std::min(size, u.size());
    const std::size_t n_interior = size - 4;
    std::vector<double> interior;
    for (std::size_t j = 1; j <= n_interior; ++j) {
      const double pos = static_cast<double>(j) / static_cast<double>(n_interior + 1) *
                         static_cast<double>(u.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const double frac = pos - static_cast<double>(lo);
      const double v = (lo + 1 < u.size()) ? u[lo] + frac * (u[lo + 1] - u[lo]) : u[lo];
      interior.push_back(v);
    }
    return BSplineBasis(u.front(), u.back(), std::move(interior));
  }

  std::size_t size() const noexcept { return knots_.size() - 4; }
  double lower() const noexcept { return lo_; }
  double upper() const noexcept { return hi_; }
  const std::vector<double>& knots() const noexcept { return knots_; }

  /// Values (deriv 0), first or second derivatives of every basis function at x in [lo, hi].
  Eigen::VectorXd eval(double x, int deriv = 0) const {
    x = std::clamp(x, lo_, hi_);
    const auto b = basis(4, deriv, x);
    return Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  }

  /// Row of the design matrix; outside [lo, hi] the spline continues linearly.
  Eigen::VectorXd design_row(double x) const {
    if (x < lo_) return eval(lo_) + (x - lo_) * eval(lo_, 1);
    if (x > hi_) return eval(hi_) + (x - hi_) * eval(hi_, 1);
    return eval(x);
  }

  Eigen::MatrixXd design(std::span<const double> x) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < x.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = design_row(x[i]).transpose();
    return m;
  }

  /// P_ij = integral of B_i'' B_j'' over [lo, hi]. B'' is piecewise linear, so
  /// two-point Gauss-Legendre per knot interval is exact.
  Eigen::MatrixXd penalty() const {
    const auto k = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(k, k);
    const double g = 1.0 / std::sqrt(3.0);
    for (std::size_t j = 3; j + 4 < knots_.size(); ++j) {
      const double a = knots_[j], b = knots_[j + 1];
      if (!(b > a)) continue;
      const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
      for (double s : {-g, g}) {
        const auto d2 = eval(mid + s * half, 2);
        p.noalias() += half * d2 * d2.transpose();
      }
    }
    return 0.5 * (p + p.transpose());
  }

 private:
  // Cox-de Boor recursion with derivatives taken through the order-reduction identity.
  std::vector<double> basis(int order, int deriv, double x) const {
    const std::size_t count = knots_.size() - static_cast<std::size_t>(order);
    std::vector<double> out(count, 0.0);
    const auto& t = knots_;
    if (deriv > 0) {
      const auto lower = basis(order - 1, deriv - 1, x);
      for (std::size_t i = 0; i < count; ++i) {
        const double d1 = t[i + order - 1] - t[i];
        const double d2 = t[i + order] - t[i + 1];
        double v = 0.0;
        if (d1 > 0) v += lower[i] / d1;
        if (d2 > 0) v -= lower[i + 1] / d2;
        out[i] = (order - 1) * v;
      }
      return out;
    }
    if (order == 1) {
      // half-open intervals, except the last non-empty one also owns its right end
      std::size_t last = 0;
      for (std::size_t i = 0; i < count; ++i)
        if (t[i + 1] > t[i]) last = i;
      for (std::size_t i = 0; i < count; ++i) {
        if (!(t[i + 1] > t[i])) continue;
        if ((x >= t[i] && x < t[i + 1]) || (i == last && x == t[i + 1])) out[i] = 1.0;
      }
      return out;
    }
    const auto lower = basis(order - 1, 0, x);
    for (std::size_t i = 0; i < count; ++i) {
      const double d1 = t[i + order - 1] - t[i];
      const double d2 = t[i + order] - t[i + 1];
      double v = 0.0;
      if (d1 > 0) v += (x - t[i]) / d1 * lower[i];
      if (d2 > 0) v += (t[i + order] - x) / d2 * lower[i + 1];
      out[i] = v;
    }
    return out;
  }

  double lo_ = 0.0;
  double hi_ = 1.0;
  std::vector<double> knots_;
};

/// A fitted smooth component f(x) = B(x) * coef, centered on its training data.
struct SmoothFunction {
  BSplineBasis basis;
  Eigen::VectorXd coef;
  double edf = 0.0;
  double test_edf = 0.0;
  double lambda = 0.0;

  double operator()(double x) const { return basis.design_row(x).dot(coef); }
};

/// Eigen-decomposed penalized least-squares system for one covariate and one
/// weight vector. Reused across backfitting sweeps while the weights are fixed.
class SmootherSystem {
 public:
  SmootherSystem(const BSplineBasis& basis, const Eigen::MatrixXd& design, const Eigen::MatrixXd& penalty,
                 const Eigen::VectorXd& w)
      : w_(w), design_(design) {
    const Eigen::Index k = design.cols();
    // Weighted sum-to-zero constraint c'beta = 0, absorbed through the null space of c.
    const Eigen::VectorXd c = design.transpose() * w;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
    const Eigen::MatrixXd z = q.rightCols(k - 1);
    const Eigen::MatrixXd xt = design * z;
    Eigen::MatrixXd pt = z.transpose() * penalty * z;
    Eigen::MatrixXd r = xt.transpose() * w.asDiagonal() * xt;
    const Eigen::Index m = r.rows();
    const double ridge = 1e-9 * r.trace() / static_cast<double>(m);
    r.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    if (llt.info() != Eigen::Success) throw std::runtime_error("SmootherSystem: singular design");
    const Eigen::MatrixXd l = llt.matrixL();
    const Eigen::MatrixXd linv = l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(m, m));
    Eigen::MatrixXd mm = linv * pt * linv.transpose();
    mm = 0.5 * (mm + mm.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mm);
    eig_ = es.eigenvalues().cwiseMax(0.0);
    to_coef_ = z * linv.transpose() * es.eigenvectors();
    g_basis_ = design * to_coef_;
    (void)basis;
  }

  Eigen::Index dim() const noexcept { return eig_.size(); }

  double edf(double lambda) const { return (1.0 / (1.0 + lambda * eig_.array())).sum(); }

  struct Result {
    Eigen::VectorXd coef;
    Eigen::VectorXd fitted;
    double edf = 0.0;
    /// tr(2S - S^2), the degrees of freedom used for testing.
    double test_edf = 0.0;
    double lambda = 0.0;
    double gcv = 0.0;
  };

  /// Fits the weighted partial residual r at a given smoothing parameter.
  Result fit_at(const Eigen::VectorXd& r, double lambda) const {
    const Eigen::VectorXd g = g_basis_.transpose() * (w_.array() * r.array()).matrix();
    return evaluate(g, r, lambda, static_cast<double>(r.size()));
  }

  /// Fits the weighted partial residual r, choosing lambda by GCV among values whose edf <= edf_cap.
  Result fit(const Eigen::VectorXd& r, double edf_cap) const {
    const Eigen::VectorXd g = g_basis_.transpose() * (w_.array() * r.array()).matrix();
    const double n = static_cast<double>(r.size());
    const double emax = eig_.maxCoeff();
    double epos = emax;
    for (Eigen::Index i = 0; i < eig_.size(); ++i)
      if (eig_[i] > 1e-10 * emax) epos = std::min(epos, eig_[i]);
    if (!(emax > 0)) return evaluate(g, r, 0.0, n);

    double lo = std::log(1e-6 / emax);
    const double hi = std::log(1e8 / epos);
    if (edf(std::exp(lo)) > edf_cap) {
      double a = lo, b = hi;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (a + b);
        (edf(std::exp(mid)) > edf_cap ? a : b) = mid;
      }
      lo = b;
    }
    auto score = [&](double rho) { return evaluate(g, r, std::exp(rho), n).gcv; };

    constexpr int kGrid = 40;
    std::vector<double> grid(kGrid), vals(kGrid);
    for (int i = 0; i < kGrid; ++i) {
      grid[i] = lo + (hi - lo) * i / (kGrid - 1);
      vals[i] = score(grid[i]);
    }
    const auto best = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    double a = grid[std::max(0, best - 1)], b = grid[std::min(kGrid - 1, best + 1)];
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double c1 = b - phi * (b - a), c2 = a + phi * (b - a);
    double f1 = score(c1), f2 = score(c2);
    for (int it = 0; it < 40; ++it) {
      if (f1 <= f2) {
        b = c2;
        c2 = c1;
        f2 = f1;
        c1 = b - phi * (b - a);
        f1 = score(c1);
      } else {
        a = c1;
        c1 = c2;
        f1 = f2;
        c2 = a + phi * (b - a);
        f2 = score(c2);
      }
    }
    double rho = (f1 <= f2) ? c1 : c2;
    if (vals[best] < std::min(f1, f2)) rho = grid[best];
    return evaluate(g, r, std::exp(rho), n);
  }

 private:
  Result evaluate(const Eigen::VectorXd& g, const Eigen::VectorXd& r, double lambda, double n) const {
    Result out;
    const Eigen::ArrayXd s = 1.0 / (1.0 + lambda * eig_.array());
    const Eigen::VectorXd theta = (s * g.array()).matrix();
    out.coef = to_coef_ * theta;
    // Fitted values come from the coefficients, so they match later evaluation
    // even when tiny weights make the transform ill-conditioned.
    out.fitted = design_ * out.coef;
    out.edf = s.sum();
    out.test_edf = (2.0 * s - s.square()).sum();
    out.lambda = lambda;
    const double rss = (w_.array() * (r - out.fitted).array().square()).sum();
    const double denom = std::max(n - out.edf, 1e-8);
    out.gcv = n * rss / (denom * denom);
    return out;
  }

  Eigen::VectorXd w_;
  Eigen::MatrixXd design_;
  Eigen::VectorXd eig_;
  Eigen::MatrixXd to_coef_;
  Eigen::MatrixXd g_basis_;
};

/// Number of distinct values of x (used to decide whether a smooth is admissible).
inline std::size_t distinct_count(std::span<const double> x) {
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end());
  return static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin());
}

/// Stand-alone smoother: fits y on x with weights w (all ones when empty).
inline SmoothFunction fit_smooth(std::span<const double> x, std::span<const double> y, double edf_cap,
                                 std::span<const double> w = {}, std::size_t basis_size = kDefaultSplineBasis) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_smooth: length mismatch");
  SmoothFunction f;
  f.basis = BSplineBasis::at_quantiles(x, basis_size);
  const Eigen::MatrixXd design = f.basis.design(x);
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::VectorXd wv = w.empty() ? Eigen::VectorXd::Ones(n)
                                 : Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(w.data(), n));
  SmootherSystem sys(f.basis, design, f.basis.penalty(), wv);
  Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  r.array() -= (wv.array() * r.array()).sum() / wv.sum();
  const auto res = sys.fit(r, edf_cap);
  f.coef = res.coef;
  f.edf = res.edf;
  f.test_edf = res.test_edf;
  f.lambda = res.lambda;
  return f;
}

}  // namespace dcorsel
