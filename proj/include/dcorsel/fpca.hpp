#pragma once

// Functional principal components of curves sampled on a common grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "dcorsel/covariate.hpp"

namespace dcorsel {

inline constexpr std::size_t kDefaultFpcaComponents = 4;

struct FpcaBasis {
  std::vector<double> grid;
  std::vector<double> weights;
  Eigen::VectorXd mean;
  /// Grid points x components, orthonormal under the quadrature inner product.
  Eigen::MatrixXd eigenfunctions;
  Eigen::VectorXd eigenvalues;
  /// Observations x components.
  Eigen::MatrixXd scores;
  std::size_t requested = 0;
  bool rank_reduced = false;
  double total_variance = 0.0;

  std::size_t components() const noexcept { return static_cast<std::size_t>(eigenfunctions.cols()); }

  /// Scores of new curves on this basis.
  Eigen::MatrixXd project(const Covariate& c) const {
    if (c.kind() != CovariateKind::functional || c.grid() != grid)
      throw StructuralError("fpca: '" + c.name() + "' is not on the basis grid");
    const auto n = static_cast<Eigen::Index>(c.size());
    const auto t = static_cast<Eigen::Index>(grid.size());
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(c.data().data(), n, t);
    const Eigen::Map<const Eigen::VectorXd> w(weights.data(), t);
    return (x.rowwise() - mean.transpose()) * w.asDiagonal() * eigenfunctions;
  }

  /// Fraction of total variance left unexplained by the retained components.
  double residual_variance_fraction() const {
    if (!(total_variance > 0)) return 0.0;
    return std::max(0.0, 1.0 - eigenvalues.sum() / total_variance);
  }
};

/// Eigen-decomposition of the quadrature-weighted sample covariance operator.
inline FpcaBasis fpca(const Covariate& c, std::size_t k = kDefaultFpcaComponents) {
  if (c.kind() != CovariateKind::functional) throw StructuralError("fpca: '" + c.name() + "' is not functional");
  if (k == 0) throw std::invalid_argument("fpca: k must be positive");
  if (c.size() <= k) throw std::invalid_argument("fpca: need more curves than components");
  if (c.width() < k) throw std::invalid_argument("fpca: grid shorter than the number of components");

  FpcaBasis b;
  b.grid = c.grid();
  b.weights = c.quadrature_weights();
  b.requested = k;
  const auto n = static_cast<Eigen::Index>(c.size());
  const auto t = static_cast<Eigen::Index>(c.width());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(c.data().data(), n, t);
  b.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - b.mean.transpose();
  const Eigen::ArrayXd sw = Eigen::Map<const Eigen::ArrayXd>(b.weights.data(), t).sqrt();

  // K = W^1/2 C W^1/2 shares its spectrum with the covariance operator.
  const Eigen::MatrixXd xs = xc * sw.matrix().asDiagonal();
  Eigen::MatrixXd kmat = (xs.transpose() * xs) / static_cast<double>(n);
  kmat = 0.5 * (kmat + kmat.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kmat);
  const Eigen::VectorXd vals = es.eigenvalues().reverse().cwiseMax(0.0);
  const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
  b.total_variance = vals.sum();

  const double tol = std::max(1e-12 * vals[0], 1e-300);
  std::size_t rank = 0;
  while (rank < static_cast<std::size_t>(vals.size()) && vals[static_cast<Eigen::Index>(rank)] > tol) ++rank;
  std::size_t keep = k;
  if (rank < k) {
    b.rank_reduced = true;
    keep = std::max<std::size_t>(rank, 1);
  }
  const auto kk = static_cast<Eigen::Index>(keep);
  b.eigenvalues = vals.head(kk);
  if (rank == 0) b.eigenvalues.setZero();
  b.eigenfunctions = (1.0 / sw).matrix().asDiagonal() * vecs.leftCols(kk);
  for (Eigen::Index j = 0; j < kk; ++j) {
    Eigen::Index arg = 0;
    b.eigenfunctions.col(j).cwiseAbs().maxCoeff(&arg);
    if (b.eigenfunctions(arg, j) < 0) b.eigenfunctions.col(j) *= -1.0;
  }
  b.scores = xc * Eigen::Map<const Eigen::VectorXd>(b.weights.data(), t).asDiagonal() * b.eigenfunctions;
  return b;
}

}  // namespace dcorsel
