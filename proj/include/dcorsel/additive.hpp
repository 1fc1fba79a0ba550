#pragma once

// Additive models fitted by backfitting (identity link) or local scoring
// (logit link), nested-model comparison and per-candidate form selection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>

#include "dcorsel/covariate.hpp"
#include "dcorsel/fpca.hpp"
#include "dcorsel/spline.hpp"

namespace dcorsel {

inline constexpr double kDefaultSmoothDf = 8.0;
inline constexpr double kDefaultModelAlpha = 0.05;

enum class TermForm { linear, smooth, dummy_set, fpca_scores };
enum class Link { identity, logit };
enum class Catalog { linear_only, linear_or_smooth };

inline std::string_view to_string(Link l) { return l == Link::identity ? "identity" : "logit"; }
inline std::string_view to_string(Catalog c) {
  return c == Catalog::linear_only ? "linear_only" : "linear_or_smooth";
}
inline Catalog parse_catalog(std::string_view s) {
  if (s == "linear_only") return Catalog::linear_only;
  if (s == "linear_or_smooth") return Catalog::linear_or_smooth;
  throw std::invalid_argument("unknown catalog '" + std::string(s) + "'");
}

struct TermSpec {
  std::string covariate;
  TermForm form = TermForm::linear;
  /// Cap on the effective degrees of freedom of each smooth part.
  double df = kDefaultSmoothDf;
  std::size_t fpca_k = kDefaultFpcaComponents;
  /// For fpca_scores: every score enters as a smooth instead of linearly.
  bool smooth_scores = false;
  /// Fixed smoothing parameter per feature column; missing or NaN entries are chosen by GCV.
  std::vector<double> smoothing;

  static TermSpec linear(std::string name) { return {std::move(name), TermForm::linear}; }
  static TermSpec smooth(std::string name, double df = kDefaultSmoothDf) {
    return {std::move(name), TermForm::smooth, df};
  }
  static TermSpec dummy_set(std::string name) { return {std::move(name), TermForm::dummy_set}; }
  static TermSpec fpca_scores(std::string name, std::size_t k = kDefaultFpcaComponents, bool smooth = false,
                              double df = kDefaultSmoothDf) {
    return {std::move(name), TermForm::fpca_scores, df, k, smooth, {}};
  }

  bool has_smooth_parts() const noexcept {
    return form == TermForm::smooth || (form == TermForm::fpca_scores && smooth_scores);
  }

  std::string describe() const {
    switch (form) {
      case TermForm::linear: return "linear";
      case TermForm::smooth: return "smooth";
      case TermForm::dummy_set: return "dummy_set";
      case TermForm::fpca_scores:
        return "fpca_scores(" + std::to_string(fpca_k) + "," + (smooth_scores ? "smooth" : "linear") + ")";
    }
    return "?";
  }

  friend bool operator==(const TermSpec&, const TermSpec&) = default;
};

/// Turns a covariate into numeric feature columns.
struct FeatureMap {
  CovariateKind kind = CovariateKind::scalar;
  std::vector<std::string> levels;
  std::optional<FpcaBasis> fpca;

  Eigen::MatrixXd operator()(const Covariate& c) const {
    if (c.kind() != kind) throw StructuralError("covariate '" + c.name() + "' changed kind since fitting");
    const auto n = static_cast<Eigen::Index>(c.size());
    switch (kind) {
      case CovariateKind::scalar:
      case CovariateKind::vector: {
        const auto w = static_cast<Eigen::Index>(c.width());
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            c.data().data(), n, w);
      }
      case CovariateKind::categorical: {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(levels.size()) - 1);
        for (Eigen::Index i = 0; i < n; ++i) {
          const auto& label = c.levels()[c.code(static_cast<std::size_t>(i))];
          const auto it = std::find(levels.begin(), levels.end(), label);
          const auto pos = it - levels.begin();
          if (it != levels.end() && pos > 0) m(i, pos - 1) = 1.0;
        }
        return m;
      }
      case CovariateKind::functional: return fpca->project(c);
    }
    return {};
  }
};

struct FittedTerm {
  TermSpec spec;
  FeatureMap features;
  /// Per feature column: weighted training mean and slope (linear columns).
  std::vector<double> centers;
  std::vector<double> slopes;
  std::vector<std::optional<SmoothFunction>> smooths;
  std::vector<bool> dropped_columns;
  double edf = 0.0;
  double test_edf = 0.0;
  bool dropped = false;

  /// Values of this component at the observations of c.
  Eigen::VectorXd contribution(const Covariate& c) const {
    const Eigen::MatrixXd f = features(c);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(f.rows());
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (smooths[ju]) {
        for (Eigen::Index i = 0; i < f.rows(); ++i) out[i] += (*smooths[ju])(f(i, j));
      } else if (slopes[ju] != 0.0) {
        out.array() += slopes[ju] * (f.col(j).array() - centers[ju]);
      }
    }
    return out;
  }
};

struct AdditiveModel {
  Link link = Link::identity;
  double intercept = 0.0;
  std::vector<FittedTerm> terms;
  std::vector<double> response;
  std::vector<double> linear_predictor;
  /// Response scale: identity values or probabilities.
  std::vector<double> fitted;
  std::vector<double> residuals;
  double edf = 1.0;
  /// Degrees of freedom used by compare_models; equals edf for unpenalized fits.
  double test_edf = 1.0;
  double deviance = 0.0;
  double null_deviance = 0.0;
  double deviance_explained = 0.0;
  std::size_t iterations = 0;
  bool converged = true;
  std::vector<std::string> flags;

  std::size_t size() const noexcept { return response.size(); }

  std::vector<TermSpec> specs() const {
    std::vector<TermSpec> s;
    for (const auto& t : terms) s.push_back(t.spec);
    return s;
  }

  bool has_term(std::string_view name) const {
    return std::any_of(terms.begin(), terms.end(), [&](const auto& t) { return t.spec.covariate == name; });
  }

  std::vector<double> predict_link(const Dataset& data) const {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(data.size()), intercept);
    for (const auto& t : terms) eta += t.contribution(data.candidate(t.spec.covariate));
    return {eta.data(), eta.data() + eta.size()};
  }

  /// Predictions on the response scale for new observations of the same covariates.
  std::vector<double> predict(const Dataset& data) const {
    auto eta = predict_link(data);
    if (link == Link::logit)
      for (auto& v : eta) v = 1.0 / (1.0 + std::exp(-v));
    return eta;
  }
};

struct FitOptions {
  double tolerance = 1e-6;
  std::size_t max_sweeps = 50;
  std::size_t max_scoring = 50;
};

namespace detail {

inline constexpr double kProbabilityFloor = 1e-12;

inline double weighted_mean(const Eigen::VectorXd& v, const Eigen::VectorXd& w) {
  return (v.array() * w.array()).sum() / w.sum();
}

inline double sd(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

/// All linear feature columns of a model, fitted jointly by weighted least squares.
/// Columns that are (numerically) in the span of earlier ones are dropped.
class LinearBlock {
 public:
  void add(Eigen::VectorXd column) { raw_.push_back(std::move(column)); }
  std::size_t columns() const noexcept { return raw_.size(); }

  void set_weights(const Eigen::VectorXd& w) {
    const Eigen::Index n = w.size();
    const std::size_t p = raw_.size();
    centers_.assign(p, 0.0);
    kept_.assign(p, false);
    coef_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    sqrt_w_ = w.array().sqrt();
    std::vector<Eigen::VectorXd> basis;
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < p; ++j) {
      centers_[j] = weighted_mean(raw_[j], w);
      Eigen::VectorXd v = sqrt_w_.cwiseProduct((raw_[j].array() - centers_[j]).matrix());
      const double norm0 = v.norm();
      const double scale = sqrt_w_.cwiseProduct(raw_[j]).norm();
      if (!(norm0 > 1e-10 * std::max(scale, 1e-300))) continue;
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : basis) v -= q.dot(v) * q;
      if (v.norm() <= 1e-7 * norm0) continue;
      basis.push_back(v / v.norm());
      kept_[j] = true;
      idx.push_back(j);
    }
    kept_idx_ = idx;
    design_.resize(n, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k)
      design_.col(static_cast<Eigen::Index>(k)) =
          sqrt_w_.cwiseProduct((raw_[idx[k]].array() - centers_[idx[k]]).matrix());
    qr_.compute(design_);
    fit_ = Eigen::VectorXd::Zero(n);
  }

  const Eigen::VectorXd& solve(const Eigen::VectorXd& r) {
    coef_.setZero();
    if (kept_idx_.empty()) {
      fit_.setZero();
      return fit_;
    }
    const Eigen::VectorXd b = qr_.solve(sqrt_w_.cwiseProduct(r));
    fit_.setZero();
    for (std::size_t k = 0; k < kept_idx_.size(); ++k) {
      const auto j = kept_idx_[k];
      coef_[static_cast<Eigen::Index>(j)] = b[static_cast<Eigen::Index>(k)];
      fit_.array() += b[static_cast<Eigen::Index>(k)] * (raw_[j].array() - centers_[j]);
    }
    return fit_;
  }

  const Eigen::VectorXd& fit() const noexcept { return fit_; }
  const Eigen::VectorXd& coefficients() const noexcept { return coef_; }
  const std::vector<double>& centers() const noexcept { return centers_; }

  /// Moves the slopes a fraction 1 - t back toward an earlier solution. The
  /// earlier solution may use other centers; the constant this leaves over is
  /// returned for the intercept.
  double blend(const Eigen::VectorXd& old_coef, const std::vector<double>& old_centers, double t) {
    double shift = 0.0;
    for (std::size_t j = 0; j < raw_.size(); ++j)
      shift += (1.0 - t) * old_coef[static_cast<Eigen::Index>(j)] * (centers_[j] - old_centers[j]);
    coef_ = t * coef_ + (1.0 - t) * old_coef;
    fit_.setZero();
    for (std::size_t j = 0; j < raw_.size(); ++j)
      if (coef_[static_cast<Eigen::Index>(j)] != 0.0)
        fit_.array() += coef_[static_cast<Eigen::Index>(j)] * (raw_[j].array() - centers_[j]);
    return shift;
  }

  bool kept(std::size_t j) const { return kept_[j]; }
  double center(std::size_t j) const { return centers_[j]; }
  double coef(std::size_t j) const { return coef_[static_cast<Eigen::Index>(j)]; }
  std::size_t rank() const noexcept { return kept_idx_.size(); }

 private:
  std::vector<Eigen::VectorXd> raw_;
  std::vector<double> centers_;
  std::vector<bool> kept_;
  std::vector<std::size_t> kept_idx_;
  Eigen::VectorXd coef_;
  Eigen::VectorXd sqrt_w_;
  Eigen::MatrixXd design_;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_;
  Eigen::VectorXd fit_;
};

struct SmoothSlot {
  std::size_t term = 0;
  std::size_t column = 0;
  double cap = 0.0;
  /// NaN when the smoothing parameter is chosen by GCV.
  double lambda = std::numeric_limits<double>::quiet_NaN();
  BSplineBasis basis;
  Eigen::MatrixXd design;
  Eigen::MatrixXd penalty;
  std::unique_ptr<SmootherSystem> system;
  SmootherSystem::Result result;
  Eigen::VectorXd fit;
};

struct ColumnRef {
  std::size_t term = 0;
  std::size_t column = 0;
  bool smooth = false;
  std::size_t slot = 0;
};

/// Gauss-Seidel backfitting over one pooled linear block and the smooth slots.
class Backfitter {
 public:
  Backfitter(LinearBlock linear, std::vector<SmoothSlot> smooths, Eigen::Index n)
      : linear_(std::move(linear)), smooths_(std::move(smooths)) {
    for (auto& s : smooths_) s.fit = Eigen::VectorXd::Zero(n);
  }

  void set_weights(const Eigen::VectorXd& w) {
    w_ = w;
    linear_.set_weights(w);
    for (auto& s : smooths_) s.system = std::make_unique<SmootherSystem>(s.basis, s.design, s.penalty, w);
  }

  /// Fits z; returns the additive predictor without the intercept.
  Eigen::VectorXd run(const Eigen::VectorXd& z, const FitOptions& opt, bool& converged, std::size_t& sweeps) {
    alpha_ = weighted_mean(z, w_);
    const double scale = std::max(sd(z), 1e-300);
    Eigen::VectorXd total = linear_.fit();
    for (const auto& s : smooths_) total += s.fit;
    converged = false;
    for (sweeps = 1; sweeps <= opt.max_sweeps; ++sweeps) {
      const Eigen::VectorXd before = total;
      Eigen::VectorXd r = z.array() - alpha_;
      r -= total;
      r += linear_.fit();
      r -= linear_.solve(r);
      for (auto& s : smooths_) {
        r += s.fit;
        s.result = std::isnan(s.lambda) ? s.system->fit(r, s.cap) : s.system->fit_at(r, s.lambda);
        s.fit = s.result.fitted;
        r -= s.fit;
      }
      // Summed from the components: z - alpha - r cancels badly when tiny
      // working weights make z huge.
      total = linear_.fit();
      for (const auto& s : smooths_) total += s.fit;
      if (smooths_.empty() || (total - before).cwiseAbs().maxCoeff() < opt.tolerance * scale) {
        converged = true;
        break;
      }
    }
    if (sweeps > opt.max_sweeps) sweeps = opt.max_sweeps;
    return total;
  }

  /// Copy of the current components, for step-halving.
  struct Snapshot {
    double alpha = 0.0;
    Eigen::VectorXd linear_coef;
    std::vector<double> linear_centers;
    std::vector<SmootherSystem::Result> results;
  };

  Snapshot snapshot() const {
    Snapshot s{alpha_, linear_.coefficients(), linear_.centers(), {}};
    for (const auto& sm : smooths_) s.results.push_back(sm.result);
    return s;
  }

  /// Halves the step from `old` to the current components; returns the new predictor without the intercept.
  Eigen::VectorXd halve_toward(const Snapshot& old) {
    const double shift = linear_.blend(old.linear_coef, old.linear_centers, 0.5);
    alpha_ = 0.5 * (alpha_ + old.alpha) + shift;
    Eigen::VectorXd total = linear_.fit();
    for (std::size_t k = 0; k < smooths_.size(); ++k) {
      auto& r = smooths_[k].result;
      r.coef = 0.5 * (r.coef + old.results[k].coef);
      r.fitted = 0.5 * (r.fitted + old.results[k].fitted);
      smooths_[k].fit = r.fitted;
      total += r.fitted;
    }
    return total;
  }

  double alpha() const noexcept { return alpha_; }
  const LinearBlock& linear() const noexcept { return linear_; }
  const std::vector<SmoothSlot>& smooths() const noexcept { return smooths_; }

 private:
  LinearBlock linear_;
  std::vector<SmoothSlot> smooths_;
  Eigen::VectorXd w_;
  double alpha_ = 0.0;
};

inline double binomial_deviance(const std::vector<double>& y, const std::vector<double>& mu) {
  double d = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0) d -= 2.0 * y[i] * std::log(mu[i]);
    if (y[i] < 1) d -= 2.0 * (1.0 - y[i]) * std::log(1.0 - mu[i]);
  }
  return d;
}

inline void check_form(const TermSpec& t, const Covariate& c, std::size_t n) {
  const auto bad = [&](const char* why) {
    throw std::invalid_argument("term '" + t.covariate + "': " + why);
  };
  switch (c.kind()) {
    case CovariateKind::scalar:
    case CovariateKind::vector:
      if (t.form != TermForm::linear && t.form != TermForm::smooth) bad("numeric covariates take linear or smooth");
      break;
    case CovariateKind::categorical:
      if (t.form != TermForm::dummy_set) bad("categorical covariates take dummy_set");
      break;
    case CovariateKind::functional:
      if (t.form != TermForm::fpca_scores) bad("functional covariates take fpca_scores");
      if (t.fpca_k == 0) bad("fpca_scores needs k >= 1");
      break;
  }
  if (t.has_smooth_parts() && (t.df < 2.0 || t.df > static_cast<double>(n) / 4.0))
    bad("smooth df must lie in [2, N/4]");
}

inline std::string column_label(const FittedTerm& t, std::size_t j) {
  switch (t.features.kind) {
    case CovariateKind::scalar: return t.spec.covariate;
    case CovariateKind::categorical: return t.spec.covariate + "=" + t.features.levels[j + 1];
    case CovariateKind::functional: return t.spec.covariate + ".pc" + std::to_string(j + 1);
    case CovariateKind::vector: return t.spec.covariate + "[" + std::to_string(j + 1) + "]";
  }
  return t.spec.covariate;
}

}  // namespace detail

/// True when every feature column has enough distinct values for a cubic spline.
inline bool smooth_admissible(const Covariate& c, std::size_t fpca_k = kDefaultFpcaComponents) {
  if (c.kind() == CovariateKind::categorical) return false;
  if (c.size() < 8) return false;
  Eigen::MatrixXd f;
  if (c.kind() == CovariateKind::functional) {
    const auto b = fpca(c, std::min(fpca_k, c.size() - 1));
    f = b.scores;
  } else {
    FeatureMap m;
    m.kind = c.kind();
    f = m(c);
  }
  for (Eigen::Index j = 0; j < f.cols(); ++j) {
    const Eigen::VectorXd col = f.col(j);
    if (distinct_count(std::span<const double>(col.data(), static_cast<std::size_t>(col.size()))) < 4) return false;
  }
  return true;
}

/// Fits the additive model with the given terms to the dataset's response.
inline AdditiveModel fit_additive(const Dataset& data, const std::vector<TermSpec>& terms,
                                  Link link = Link::identity, const FitOptions& opt = {}) {
  const std::size_t n = data.size();
  const auto ni = static_cast<Eigen::Index>(n);
  if (link == Link::logit && !data.is_classification())
    throw std::invalid_argument("fit_additive: logit link needs a binary response");
  if (link == Link::identity && data.is_classification())
    throw std::invalid_argument("fit_additive: identity link needs a numeric response");
  {
    std::unordered_set<std::string> seen;
    for (const auto& t : terms)
      if (!seen.insert(t.covariate).second)
        throw std::invalid_argument("fit_additive: covariate '" + t.covariate + "' appears twice");
  }

  AdditiveModel m;
  m.link = link;
  m.response = data.response_values();
  const Eigen::Map<const Eigen::VectorXd> y(m.response.data(), ni);

  detail::LinearBlock linear;
  std::vector<detail::SmoothSlot> slots;
  std::vector<detail::ColumnRef> refs;
  for (std::size_t ti = 0; ti < terms.size(); ++ti) {
    const auto& spec = terms[ti];
    const Covariate& c = data.candidate(spec.covariate);
    detail::check_form(spec, c, n);
    FittedTerm ft;
    ft.spec = spec;
    ft.features.kind = c.kind();
    if (c.kind() == CovariateKind::categorical) ft.features.levels = c.levels();
    if (c.kind() == CovariateKind::functional) {
      ft.features.fpca = fpca(c, spec.fpca_k);
      if (ft.features.fpca->rank_reduced)
        m.flags.push_back("term '" + spec.covariate + "': only " + std::to_string(ft.features.fpca->components()) +
                          " principal components available");
    }
    const Eigen::MatrixXd f = ft.features(c);
    const auto cols = static_cast<std::size_t>(f.cols());
    ft.centers.assign(cols, 0.0);
    ft.slopes.assign(cols, 0.0);
    ft.smooths.assign(cols, std::nullopt);
    ft.dropped_columns.assign(cols, false);
    for (std::size_t j = 0; j < cols; ++j) {
      const Eigen::VectorXd col = f.col(static_cast<Eigen::Index>(j));
      const std::span<const double> xs(col.data(), n);
      bool smooth = spec.has_smooth_parts();
      if (smooth && distinct_count(xs) < 4) {
        smooth = false;
        m.flags.push_back("term '" + spec.covariate + "': too few distinct values for a smooth, fitted linearly");
      }
      if (smooth) {
        detail::SmoothSlot s;
        s.term = ti;
        s.column = j;
        s.basis = BSplineBasis::at_quantiles(xs, kDefaultSplineBasis);
        s.design = s.basis.design(xs);
        s.penalty = s.basis.penalty();
        s.cap = std::min({spec.df, static_cast<double>(n) / 4.0, static_cast<double>(s.basis.size() - 1)});
        if (j < spec.smoothing.size()) s.lambda = spec.smoothing[j];
        refs.push_back({ti, j, true, slots.size()});
        slots.push_back(std::move(s));
      } else {
        refs.push_back({ti, j, false, linear.columns()});
        linear.add(col);
      }
    }
    m.terms.push_back(std::move(ft));
  }

  detail::Backfitter bf(std::move(linear), std::move(slots), ni);
  Eigen::VectorXd eta;
  if (link == Link::identity) {
    bf.set_weights(Eigen::VectorXd::Ones(ni));
    bool ok = false;
    std::size_t sweeps = 0;
    const Eigen::VectorXd add = bf.run(y, opt, ok, sweeps);
    eta = add.array() + bf.alpha();
    m.converged = ok;
    m.iterations = sweeps;
    if (!ok) m.flags.push_back("backfitting did not converge after " + std::to_string(opt.max_sweeps) + " sweeps");
  } else {
    Eigen::VectorXd mu = (y.array() + 0.5) / 2.0;
    eta = (mu.array() / (1.0 - mu.array())).log();
    double dev_old = std::numeric_limits<double>::infinity();
    m.converged = false;
    auto deviance_at = [&](const Eigen::VectorXd& e) {
      mu = (1.0 / (1.0 + (-e.array()).exp())).max(detail::kProbabilityFloor).min(1.0 - detail::kProbabilityFloor);
      std::vector<double> muv(mu.data(), mu.data() + ni);
      return detail::binomial_deviance(m.response, muv);
    };
    for (m.iterations = 1; m.iterations <= opt.max_scoring; ++m.iterations) {
      const Eigen::VectorXd w = (mu.array() * (1.0 - mu.array())).max(1e-10);
      const Eigen::VectorXd z = eta.array() + (y - mu).array() / w.array();
      // Components of the previous iterate; the first iterate starts from the
      // saturated guess, which has no additive representation.
      const auto previous = bf.snapshot();
      bf.set_weights(w);
      bool ok = false;
      std::size_t sweeps = 0;
      eta = bf.run(z, opt, ok, sweeps);
      eta.array() += bf.alpha();
      double dev = deviance_at(eta);
      // Step-halving keeps near-separated fits from diverging.
      for (int h = 0; m.iterations > 1 && dev > dev_old * (1.0 + 1e-10) && h < 30; ++h) {
        eta = bf.halve_toward(previous);
        eta.array() += bf.alpha();
        dev = deviance_at(eta);
      }
      if (std::abs(dev - dev_old) < 1e-8 * (std::abs(dev) + 0.1)) {
        m.converged = true;
        break;
      }
      dev_old = dev;
    }
    if (m.iterations > opt.max_scoring) m.iterations = opt.max_scoring;
    if (!m.converged)
      m.flags.push_back("local scoring did not converge after " + std::to_string(opt.max_scoring) + " iterations");
  }

  // Unpack the converged components into the fitted terms.
  m.intercept = bf.alpha();
  for (const auto& r : refs) {
    auto& ft = m.terms[r.term];
    if (r.smooth) {
      const auto& s = bf.smooths()[r.slot];
      ft.smooths[r.column] = SmoothFunction{s.basis, s.result.coef, s.result.edf, s.result.test_edf, s.result.lambda};
      ft.edf += s.result.edf;
      ft.test_edf += s.result.test_edf;
    } else {
      ft.centers[r.column] = bf.linear().center(r.slot);
      ft.slopes[r.column] = bf.linear().coef(r.slot);
      ft.dropped_columns[r.column] = !bf.linear().kept(r.slot);
      if (!ft.dropped_columns[r.column]) {
        ft.edf += 1.0;
        ft.test_edf += 1.0;
      }
    }
  }
  for (auto& ft : m.terms) {
    const auto live = std::count(ft.dropped_columns.begin(), ft.dropped_columns.end(), false);
    if (live == 0) {
      ft.dropped = true;
      m.flags.push_back("term '" + ft.spec.covariate + "' dropped: singular linear design");
    } else if (live < static_cast<std::ptrdiff_t>(ft.dropped_columns.size())) {
      for (std::size_t j = 0; j < ft.dropped_columns.size(); ++j)
        if (ft.dropped_columns[j]) m.flags.push_back("column '" + detail::column_label(ft, j) + "' dropped: collinear");
    }
    m.edf += ft.edf;
    m.test_edf += ft.test_edf;
  }

  m.linear_predictor.assign(eta.data(), eta.data() + ni);
  m.fitted.resize(n);
  m.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double f = eta[static_cast<Eigen::Index>(i)];
    if (link == Link::logit)
      f = std::clamp(1.0 / (1.0 + std::exp(-f)), detail::kProbabilityFloor, 1.0 - detail::kProbabilityFloor);
    m.fitted[i] = f;
    m.residuals[i] = m.response[i] - f;
  }
  if (link == Link::identity) {
    const double ybar = y.mean();
    m.deviance = 0.0;
    m.null_deviance = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m.deviance += m.residuals[i] * m.residuals[i];
      m.null_deviance += (m.response[i] - ybar) * (m.response[i] - ybar);
    }
  } else {
    m.deviance = detail::binomial_deviance(m.response, m.fitted);
    const double p = std::clamp(y.mean(), detail::kProbabilityFloor, 1.0 - detail::kProbabilityFloor);
    m.null_deviance = detail::binomial_deviance(m.response, std::vector<double>(n, p));
  }
  m.deviance_explained =
      m.null_deviance > 0 ? std::clamp(1.0 - m.deviance / m.null_deviance, 0.0, 1.0) : 0.0;
  if (terms.empty()) m.deviance_explained = 0.0;
  return m;
}

struct Comparison {
  double statistic = 0.0;
  double p_value = 1.0;
  double df_numerator = 0.0;
  double df_denominator = 0.0;
  bool accept_full = false;
  bool degenerate = false;
};

/// Approximate F test (identity link) or deviance chi-square test (logit link) of nested models.
inline Comparison compare_models(const AdditiveModel& reduced, const AdditiveModel& full,
                                 double alpha = kDefaultModelAlpha) {
  if (reduced.link != full.link) throw std::invalid_argument("compare_models: links differ");
  if (reduced.size() != full.size()) throw std::invalid_argument("compare_models: sample sizes differ");
  for (const auto& t : reduced.terms)
    if (!full.has_term(t.spec.covariate))
      throw std::invalid_argument("compare_models: '" + t.spec.covariate + "' missing from the full model");

  Comparison c;
  const double n = static_cast<double>(full.size());
  c.df_numerator = full.test_edf - reduced.test_edf;
  c.df_denominator = n - full.test_edf;
  if (!(c.df_numerator > 1e-6) || (full.link == Link::identity && !(c.df_denominator > 0))) {
    c.degenerate = true;
    return c;
  }
  const double gain = std::max(reduced.deviance - full.deviance, 0.0);
  if (full.link == Link::identity) {
    const double scale = full.deviance / c.df_denominator;
    if (!(scale > 0)) {
      c.statistic = gain > 0 ? std::numeric_limits<double>::infinity() : 0.0;
      c.p_value = gain > 0 ? 0.0 : 1.0;
    } else {
      c.statistic = (gain / c.df_numerator) / scale;
      boost::math::fisher_f dist(c.df_numerator, c.df_denominator);
      c.p_value = boost::math::cdf(boost::math::complement(dist, c.statistic));
    }
  } else {
    c.statistic = gain;
    boost::math::chi_squared dist(c.df_numerator);
    c.p_value = boost::math::cdf(boost::math::complement(dist, c.statistic));
  }
  c.accept_full = c.p_value <= alpha;
  return c;
}

struct ContributionOptions {
  double alpha_model = kDefaultModelAlpha;
  double smooth_df = kDefaultSmoothDf;
  std::size_t fpca_k = kDefaultFpcaComponents;
  FitOptions fit;
};

struct ContributionChoice {
  AdditiveModel best;
  TermSpec spec;
  bool accepted = false;
  /// Candidate model against the current one.
  Comparison test;
  /// Smooth form against the linear form, when both were fitted.
  std::optional<Comparison> form_test;
};

/// Refits the current model with the candidate appended under each admissible
/// form, keeps the best form and tests it against the current model.
inline ContributionChoice choose_contribution(const Dataset& data, const AdditiveModel& current,
                                              const Covariate& candidate, Catalog catalog,
                                              const ContributionOptions& opt = {}) {
  if (current.has_term(candidate.name()))
    throw std::invalid_argument("choose_contribution: '" + candidate.name() + "' is already in the model");
  // Existing terms keep their forms and their smoothing parameters.
  auto base = current.specs();
  for (std::size_t t = 0; t < base.size(); ++t) {
    const auto& smooths = current.terms[t].smooths;
    base[t].smoothing.assign(smooths.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < smooths.size(); ++j)
      if (smooths[j]) base[t].smoothing[j] = smooths[j]->lambda;
  }
  const double df = std::min(opt.smooth_df, static_cast<double>(data.size()) / 4.0);
  auto with = [&](TermSpec t) {
    auto s = base;
    s.push_back(std::move(t));
    return s;
  };

  TermSpec simple, flexible;
  switch (candidate.kind()) {
    case CovariateKind::categorical: simple = TermSpec::dummy_set(candidate.name()); break;
    case CovariateKind::functional:
      simple = TermSpec::fpca_scores(candidate.name(), opt.fpca_k, false, df);
      flexible = TermSpec::fpca_scores(candidate.name(), opt.fpca_k, true, df);
      break;
    default:
      simple = TermSpec::linear(candidate.name());
      flexible = TermSpec::smooth(candidate.name(), df);
  }
  const bool try_smooth = catalog == Catalog::linear_or_smooth && candidate.kind() != CovariateKind::categorical &&
                          df >= 2.0 && smooth_admissible(candidate, opt.fpca_k);

  ContributionChoice out;
  out.spec = simple;
  out.best = fit_additive(data, with(simple), current.link, opt.fit);
  if (try_smooth) {
    auto alt = fit_additive(data, with(flexible), current.link, opt.fit);
    out.form_test = compare_models(out.best, alt, opt.alpha_model);
    if (out.form_test->accept_full) {
      out.best = std::move(alt);
      out.spec = flexible;
    }
  }
  out.test = compare_models(current, out.best, opt.alpha_model);
  out.accepted = out.test.accept_full;
  if (out.accepted && std::any_of(base.begin(), base.end(), [](const auto& t) { return t.has_smooth_parts(); })) {
    // The accepted model is refitted with every smoothing parameter chosen afresh.
    auto specs = out.best.specs();
    for (auto& t : specs) t.smoothing.clear();
    out.best = fit_additive(data, specs, current.link, opt.fit);
  }
  return out;
}

}  // namespace dcorsel
