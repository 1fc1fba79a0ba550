#pragma once

// Covariates of mixed nature and the datasets built from them.
//
// A covariate is immutable once constructed. Observations are stored row-major:
// one double per observation for scalars, d for vectors, one per grid point for
// functional curves; categorical covariates keep level codes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dcorsel {

/// Malformed input: bad shapes, mismatched grids, missing values, unknown names.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CovariateKind { scalar, vector, categorical, functional };

inline std::string_view to_string(CovariateKind k) {
  switch (k) {
    case CovariateKind::scalar: return "scalar";
    case CovariateKind::vector: return "vector";
    case CovariateKind::categorical: return "categorical";
    case CovariateKind::functional: return "functional";
  }
  return "?";
}

inline CovariateKind parse_kind(std::string_view s) {
  if (s == "scalar") return CovariateKind::scalar;
  if (s == "vector") return CovariateKind::vector;
  if (s == "categorical") return CovariateKind::categorical;
  if (s == "functional") return CovariateKind::functional;
  throw StructuralError("unknown covariate kind '" + std::string(s) + "'");
}

/// Trapezoidal quadrature weights for a strictly increasing grid.
inline std::vector<double> trapezoid_weights(std::span<const double> grid) {
  const std::size_t t = grid.size();
  std::vector<double> w(t, 0.0);
  for (std::size_t i = 0; i + 1 < t; ++i) {
    const double h = grid[i + 1] - grid[i];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

class Covariate {
 public:
  static Covariate scalar(std::string name, std::vector<double> values) {
    Covariate c(std::move(name), CovariateKind::scalar);
    c.width_ = 1;
    c.n_ = values.size();
    c.values_ = std::move(values);
    c.check_finite();
    return c;
  }

  static Covariate vector(std::string name, std::size_t dim, std::vector<double> values) {
    if (dim == 0) throw StructuralError("vector covariate '" + name + "' has dimension 0");
    if (values.size() % dim != 0)
      throw StructuralError("vector covariate '" + name + "': value count is not a multiple of the dimension");
    Covariate c(std::move(name), CovariateKind::vector);
    c.width_ = dim;
    c.n_ = values.size() / dim;
    c.values_ = std::move(values);
    c.check_finite();
    return c;
  }

  static Covariate categorical(std::string name, std::vector<std::size_t> codes,
                               std::vector<std::string> levels) {
    if (levels.size() < 2)
      throw StructuralError("categorical covariate '" + name + "' needs at least 2 levels");
    for (std::size_t code : codes)
      if (code >= levels.size())
        throw StructuralError("categorical covariate '" + name + "' has an invalid level index");
    Covariate c(std::move(name), CovariateKind::categorical);
    c.width_ = 1;
    c.n_ = codes.size();
    c.codes_ = std::move(codes);
    c.levels_ = std::move(levels);
    return c;
  }

  /// Builds a categorical covariate from raw labels; levels are sorted.
  static Covariate categorical_from_labels(std::string name, const std::vector<std::string>& labels) {
    std::vector<std::string> levels(labels.begin(), labels.end());
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::vector<std::size_t> codes;
    codes.reserve(labels.size());
    for (const auto& l : labels)
      codes.push_back(static_cast<std::size_t>(
          std::lower_bound(levels.begin(), levels.end(), l) - levels.begin()));
    return categorical(std::move(name), std::move(codes), std::move(levels));
  }

  /// Curves sampled on a shared grid; `values` is n x grid.size(), row-major.
  static Covariate functional(std::string name, std::vector<double> grid, std::vector<double> values) {
    if (grid.size() < 2)
      throw StructuralError("functional covariate '" + name + "' needs a grid with at least 2 points");
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
      if (!(grid[i + 1] > grid[i]))
        throw StructuralError("functional covariate '" + name + "' grid is not strictly increasing");
    if (values.size() % grid.size() != 0)
      throw StructuralError("functional covariate '" + name + "': curve length does not match the grid");
    Covariate c(std::move(name), CovariateKind::functional);
    c.width_ = grid.size();
    c.n_ = values.size() / grid.size();
    c.weights_ = trapezoid_weights(grid);
    c.grid_ = std::move(grid);
    c.values_ = std::move(values);
    c.check_finite();
    return c;
  }

  const std::string& name() const noexcept { return name_; }
  CovariateKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return n_; }
  /// Doubles per observation (1 for scalar and categorical).
  std::size_t width() const noexcept { return width_; }
  bool is_numeric() const noexcept { return kind_ != CovariateKind::categorical; }

  std::span<const double> data() const noexcept { return values_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * width_, width_);
  }
  double value(std::size_t i) const { return values_[i * width_]; }
  std::size_t code(std::size_t i) const { return codes_[i]; }
  std::span<const std::size_t> codes() const noexcept { return codes_; }
  const std::vector<std::string>& levels() const noexcept { return levels_; }
  const std::vector<double>& grid() const noexcept { return grid_; }
  const std::vector<double>& quadrature_weights() const noexcept { return weights_; }

  Covariate renamed(std::string name) const {
    Covariate c = *this;
    c.name_ = std::move(name);
    return c;
  }

  /// Observations at the given indices, in that order.
  Covariate subset(std::span<const std::size_t> idx) const {
    Covariate c = *this;
    c.n_ = idx.size();
    if (kind_ == CovariateKind::categorical) {
      c.codes_.clear();
      for (auto i : idx) c.codes_.push_back(codes_[i]);
    } else {
      c.values_.clear();
      c.values_.reserve(idx.size() * width_);
      for (auto i : idx) {
        auto r = row(i);
        c.values_.insert(c.values_.end(), r.begin(), r.end());
      }
    }
    return c;
  }

  /// Distance between observations i and j in the covariate's Hilbert metric.
  double distance(std::size_t i, std::size_t j) const {
    switch (kind_) {
      case CovariateKind::scalar: return std::abs(values_[i] - values_[j]);
      case CovariateKind::categorical: return codes_[i] == codes_[j] ? 0.0 : std::sqrt(2.0);
      case CovariateKind::vector: {
        const double* a = values_.data() + i * width_;
        const double* b = values_.data() + j * width_;
        double s = 0.0;
        for (std::size_t k = 0; k < width_; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
        return std::sqrt(s);
      }
      case CovariateKind::functional: {
        const double* a = values_.data() + i * width_;
        const double* b = values_.data() + j * width_;
        double s = 0.0;
        for (std::size_t k = 0; k < width_; ++k) s += weights_[k] * (a[k] - b[k]) * (a[k] - b[k]);
        return std::sqrt(s);
      }
    }
    return 0.0;
  }

 private:
  Covariate(std::string name, CovariateKind kind) : name_(std::move(name)), kind_(kind) {}

  void check_finite() const {
    for (double v : values_)
      if (!std::isfinite(v))
        throw StructuralError("covariate '" + name_ + "' contains missing or non-finite values");
  }

  std::string name_;
  CovariateKind kind_;
  std::size_t n_ = 0;
  std::size_t width_ = 1;
  std::vector<double> values_;
  std::vector<std::size_t> codes_;
  std::vector<std::string> levels_;
  std::vector<double> grid_;
  std::vector<double> weights_;
};

/// Free-function form of Covariate::distance with index checking.
inline double pairwise_distance(const Covariate& c, std::size_t i, std::size_t j) {
  if (i >= c.size() || j >= c.size())
    throw std::out_of_range("pairwise_distance: observation index out of range");
  return c.distance(i, j);
}

/// Distance between observation i of `a` and observation j of `b`; both must
/// share kind and shape (same grid for curves, same dimension for vectors).
inline double cross_distance(const Covariate& a, std::size_t i, const Covariate& b, std::size_t j) {
  if (a.kind() != b.kind() || a.width() != b.width() || a.grid() != b.grid())
    throw StructuralError("cross_distance: covariates '" + a.name() + "' and '" + b.name() +
                          "' have mismatched kinds, dimensions or grids");
  if (a.kind() == CovariateKind::categorical)
    return a.levels()[a.code(i)] == b.levels()[b.code(j)] ? 0.0 : std::sqrt(2.0);
  auto x = a.row(i);
  auto y = b.row(j);
  const auto& w = a.quadrature_weights();
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - y[k];
    s += (w.empty() ? 1.0 : w[k]) * d * d;
  }
  return std::sqrt(s);
}

class Dataset {
 public:
  Dataset(Covariate response, std::vector<Covariate> candidates)
      : response_(std::move(response)), candidates_(std::move(candidates)) {
    const std::size_t n = response_.size();
    if (response_.kind() != CovariateKind::scalar &&
        !(response_.kind() == CovariateKind::categorical && response_.levels().size() == 2))
      throw StructuralError("response '" + response_.name() +
                            "' must be scalar or categorical with exactly 2 levels");
    std::unordered_set<std::string> seen;
    for (const auto& c : candidates_) {
      if (c.size() != n)
        throw StructuralError("covariate '" + c.name() + "' has " + std::to_string(c.size()) +
                              " observations, expected " + std::to_string(n));
      if (!seen.insert(c.name()).second)
        throw StructuralError("duplicate candidate name '" + c.name() + "'");
    }
  }

  const Covariate& response() const noexcept { return response_; }
  const std::vector<Covariate>& candidates() const noexcept { return candidates_; }
  std::size_t size() const noexcept { return response_.size(); }
  bool is_classification() const noexcept { return response_.kind() == CovariateKind::categorical; }

  const Covariate& candidate(std::string_view name) const {
    for (const auto& c : candidates_)
      if (c.name() == name) return c;
    throw StructuralError("unknown covariate '" + std::string(name) + "'");
  }
  bool has_candidate(std::string_view name) const {
    for (const auto& c : candidates_)
      if (c.name() == name) return true;
    return false;
  }

  /// Response as doubles: the value for regression, the level code (0/1) for classification.
  std::vector<double> response_values() const {
    std::vector<double> y(size());
    for (std::size_t i = 0; i < y.size(); ++i)
      y[i] = is_classification() ? static_cast<double>(response_.code(i)) : response_.value(i);
    return y;
  }

 private:
  Covariate response_;
  std::vector<Covariate> candidates_;
};

}  // namespace dcorsel
