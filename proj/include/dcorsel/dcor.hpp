#pragma once

// Empirical distance correlation (V-statistic form) between covariates of any
// kind, computed either from materialized double-centered matrices or tile by
// tile in bounded memory, plus the permutation test of independence used to
// screen candidates.
//
// For distance matrices a (of x) and b (of y) with double-centered versions
// A_kl = a_kl - a_k. - a_.l + a_.. and likewise B, the reported quantities are
//   dcov2  = sum A_kl B_kl / N^2
//   dvar_x = sum A_kl^2 / N^2,  dvar_y = sum B_kl^2 / N^2
//   dcor   = dcov2 / sqrt(dvar_x * dvar_y)
// with dcor = 0 when either variable is constant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <omp.h>

#include "dcorsel/covariate.hpp"
#include "dcorsel/memory.hpp"
#include "dcorsel/random.hpp"

namespace dcorsel {

inline constexpr std::size_t kDefaultMemoryBudget = std::size_t{1} << 30;
inline constexpr std::size_t kDefaultPermutations = 499;
inline constexpr double kDefaultAlpha = 0.05;

/// Raised when a materialized computation would exceed the memory budget.
class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(std::size_t needed, std::size_t budget)
      : std::runtime_error(describe(needed, budget)), needed_(needed), budget_(budget) {}
  std::size_t needed() const noexcept { return needed_; }
  std::size_t budget() const noexcept { return budget_; }

 private:
  static std::string describe(std::size_t needed, std::size_t budget) {
    std::ostringstream os;
    os << "direct distance correlation needs " << needed << " bytes for two N x N matrices, "
       << "which exceeds the memory budget of " << budget << " bytes; use blockwise mode";
    return os.str();
  }
  std::size_t needed_;
  std::size_t budget_;
};

inline int worker_threads() noexcept { return std::max(1, omp_get_max_threads()); }

namespace detail {

struct ScalarMetric {
  const double* v;
  double operator()(std::size_t i, std::size_t j) const noexcept { return std::abs(v[i] - v[j]); }
};

struct EuclideanMetric {
  const double* v;
  std::size_t d;
  double operator()(std::size_t i, std::size_t j) const noexcept {
    const double* a = v + i * d;
    const double* b = v + j * d;
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  }
};

struct WeightedL2Metric {
  const double* v;
  const double* w;
  std::size_t t;
  double operator()(std::size_t i, std::size_t j) const noexcept {
    const double* a = v + i * t;
    const double* b = v + j * t;
    double s = 0.0;
    for (std::size_t k = 0; k < t; ++k) s += w[k] * (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  }
};

struct CategoricalMetric {
  const std::size_t* codes;
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return codes[i] == codes[j] ? 0.0 : 1.4142135623730951;
  }
};

/// Calls f with a metric functor specialized for the covariate's kind.
template <class F>
decltype(auto) with_metric(const Covariate& c, F&& f) {
  switch (c.kind()) {
    case CovariateKind::scalar: return f(ScalarMetric{c.data().data()});
    case CovariateKind::vector: return f(EuclideanMetric{c.data().data(), c.width()});
    case CovariateKind::functional:
      return f(WeightedL2Metric{c.data().data(), c.quadrature_weights().data(), c.width()});
    case CovariateKind::categorical: break;
  }
  return f(CategoricalMetric{c.codes().data()});
}

/// Sums accumulated in extended precision so that different tilings agree far
/// beyond the double rounding of individual terms.
struct CrossSums {
  long double ab = 0.0L;
  long double aa = 0.0L;
  long double bb = 0.0L;
};

inline std::size_t block_count(std::size_t n, std::size_t l) { return (n + l - 1) / l; }

}  // namespace detail

/// Row sums and grand sum of a covariate's full pairwise distance matrix.
struct CenteringStats {
  std::vector<double> row_sums;
  double grand_sum = 0.0;
  std::size_t n = 0;

  double row_mean(std::size_t k) const noexcept { return row_sums[k] / static_cast<double>(n); }
  double grand_mean() const noexcept {
    return grand_sum / (static_cast<double>(n) * static_cast<double>(n));
  }
};

struct DCorResult {
  double dcor = 0.0;
  double dcov2 = 0.0;
  double dvar_x = 0.0;
  double dvar_y = 0.0;
  std::optional<double> p_value;
  /// Scratch memory actually held at peak while computing (bytes).
  std::size_t peak_aux_bytes = 0;
  /// 0 for the materialized computation, otherwise the tile edge used.
  std::size_t block_size = 0;
};

/// Tiling of the N x N distance matrices into L x L blocks.
struct BlockPlan {
  std::size_t block_size = 256;

  explicit BlockPlan(std::size_t l = 256) : block_size(l) {
    if (l == 0) throw std::invalid_argument("BlockPlan: block size must be positive");
  }

  /// Number of L x L tile pairs visited by the centered-product pass (upper triangle of blocks).
  std::size_t passes(std::size_t n) const noexcept {
    const std::size_t nb = detail::block_count(n, block_size);
    return nb * (nb + 1) / 2;
  }

  /// Scratch bytes the blockwise computation holds at peak: two tiles per worker,
  /// row sums and row means of both variables, and the per-row-block partial sums.
  std::size_t aux_bytes_estimate(std::size_t n, int threads = 1, bool permuted = false) const noexcept {
    const std::size_t l = std::min(block_size, std::max<std::size_t>(n, 1));
    const std::size_t tiles = 2 * l * l * sizeof(double) * static_cast<std::size_t>(threads);
    const std::size_t rows = 4 * n * sizeof(double) + (permuted ? n * sizeof(std::size_t) : 0);
    const std::size_t partial = detail::block_count(n, l) * sizeof(detail::CrossSums) +
                                l * sizeof(long double) * static_cast<std::size_t>(threads);
    return tiles + rows + partial;
  }

  /// Largest power-of-two tile edge whose scratch fits in `budget` (at least 1).
  static BlockPlan for_budget(std::size_t n, std::size_t budget, int threads = 1) {
    std::size_t l = 1;
    while (l * 2 <= std::max<std::size_t>(n, 1) &&
           BlockPlan(l * 2).aux_bytes_estimate(n, threads) <= budget)
      l *= 2;
    return BlockPlan(l);
  }
};

/// Bytes needed by dcor_direct for two full N x N matrices.
inline std::size_t direct_bytes(std::size_t n) noexcept { return 2 * n * n * sizeof(double); }

/// Row sums of the distance matrix, streamed in L x L tiles (one tile per worker).
inline CenteringStats centering_stats(const Covariate& c, std::size_t block_size = 256,
                                      MemoryTracker* tracker = nullptr) {
  const std::size_t n = c.size();
  if (n < 2) throw std::invalid_argument("centering_stats: need at least 2 observations");
  if (block_size == 0) throw std::invalid_argument("centering_stats: block size must be positive");
  const std::size_t l = std::min(block_size, n);
  const std::size_t nb = detail::block_count(n, l);

  CenteringStats stats;
  stats.n = n;
  stats.row_sums.assign(n, 0.0);
  if (tracker) tracker->acquire(n * sizeof(double));

  detail::with_metric(c, [&](auto metric) {
#pragma omp parallel
    {
      ScratchBuffer<double> tile(l * l, tracker);
      ScratchBuffer<long double> acc(l, tracker);
#pragma omp for schedule(static)
      for (std::size_t bi = 0; bi < nb; ++bi) {
        const std::size_t i0 = bi * l, i1 = std::min(n, i0 + l);
        for (std::size_t k = 0; k < i1 - i0; ++k) acc[k] = 0.0L;
        for (std::size_t bj = 0; bj < nb; ++bj) {
          const std::size_t j0 = bj * l, j1 = std::min(n, j0 + l);
          const std::size_t w = j1 - j0;
          for (std::size_t k = i0; k < i1; ++k) {
            double* out = tile.data() + (k - i0) * w;
            for (std::size_t m = j0; m < j1; ++m) out[m - j0] = metric(k, m);
          }
          for (std::size_t k = 0; k < i1 - i0; ++k) {
            const double* row = tile.data() + k * w;
            double s = 0.0;
            for (std::size_t m = 0; m < w; ++m) s += row[m];
            acc[k] += s;
          }
        }
        for (std::size_t k = i0; k < i1; ++k) stats.row_sums[k] = static_cast<double>(acc[k - i0]);
      }
    }
  });

  long double g = 0.0L;
  for (double r : stats.row_sums) g += r;
  stats.grand_sum = static_cast<double>(g);
  if (tracker) tracker->release(n * sizeof(double));
  return stats;
}

namespace detail {

inline DCorResult finish(const CrossSums& s, std::size_t n) {
  DCorResult r;
  const long double n2 = static_cast<long double>(n) * static_cast<long double>(n);
  r.dcov2 = static_cast<double>(std::max(s.ab, 0.0L) / n2);
  r.dvar_x = static_cast<double>(s.aa / n2);
  r.dvar_y = static_cast<double>(s.bb / n2);
  if (s.aa > 0.0L && s.bb > 0.0L) {
    const long double ratio = s.ab / std::sqrt(s.aa * s.bb);
    r.dcor = static_cast<double>(std::clamp(ratio, 0.0L, 1.0L));
  }
  return r;
}

/// Pass 2 of the blockwise scheme: re-streams L x L tiles of a and b, centers
/// them on the fly from the row sums, and accumulates the three sums. When
/// `perm` is non-empty, y's observations are taken in permuted order.
inline CrossSums blockwise_sums(const Covariate& x, const Covariate& y, const CenteringStats& sx,
                                const CenteringStats& sy, std::size_t block_size,
                                std::span<const std::size_t> perm, MemoryTracker* tracker) {
  const std::size_t n = x.size();
  const std::size_t l = std::min(block_size, n);
  const std::size_t nb = block_count(n, l);
  const bool permuted = !perm.empty();
  const double nd = static_cast<double>(n);
  const double gx = sx.grand_mean();
  const double gy = sy.grand_mean();

  ScratchBuffer<double> mean_x(n, tracker), mean_y(n, tracker);
  for (std::size_t k = 0; k < n; ++k) {
    mean_x[k] = sx.row_sums[k] / nd;
    mean_y[k] = sy.row_sums[permuted ? perm[k] : k] / nd;
  }
  ScratchBuffer<CrossSums> partial(nb, tracker);

  with_metric(x, [&](auto mx) {
    with_metric(y, [&](auto my) {
#pragma omp parallel
      {
        ScratchBuffer<double> ta(l * l, tracker), tb(l * l, tracker);
#pragma omp for schedule(dynamic)
        for (std::size_t bi = 0; bi < nb; ++bi) {
          const std::size_t i0 = bi * l, i1 = std::min(n, i0 + l);
          CrossSums acc;
          for (std::size_t bj = bi; bj < nb; ++bj) {
            const std::size_t j0 = bj * l, j1 = std::min(n, j0 + l);
            const std::size_t w = j1 - j0;
            for (std::size_t k = i0; k < i1; ++k) {
              double* oa = ta.data() + (k - i0) * w;
              double* ob = tb.data() + (k - i0) * w;
              const std::size_t pk = permuted ? perm[k] : k;
              for (std::size_t m = j0; m < j1; ++m) {
                oa[m - j0] = mx(k, m);
                ob[m - j0] = my(pk, permuted ? perm[m] : m);
              }
            }
            CrossSums tile_sums;
            for (std::size_t k = i0; k < i1; ++k) {
              const double* ra = ta.data() + (k - i0) * w;
              const double* rb = tb.data() + (k - i0) * w;
              const double ca = gx - mean_x[k];
              const double cb = gy - mean_y[k];
              double sab = 0.0, saa = 0.0, sbb = 0.0;
              for (std::size_t m = 0; m < w; ++m) {
                const double av = ra[m] + ca - mean_x[j0 + m];
                const double bv = rb[m] + cb - mean_y[j0 + m];
                sab += av * bv;
                saa += av * av;
                sbb += bv * bv;
              }
              tile_sums.ab += sab;
              tile_sums.aa += saa;
              tile_sums.bb += sbb;
            }
            const long double weight = (bj == bi) ? 1.0L : 2.0L;
            acc.ab += weight * tile_sums.ab;
            acc.aa += weight * tile_sums.aa;
            acc.bb += weight * tile_sums.bb;
          }
          partial[bi] = acc;
        }
      }
    });
  });

  CrossSums total;
  for (std::size_t bi = 0; bi < nb; ++bi) {
    total.ab += partial[bi].ab;
    total.aa += partial[bi].aa;
    total.bb += partial[bi].bb;
  }
  return total;
}

inline void check_pair(const Covariate& x, const Covariate& y, std::size_t min_n, const char* who) {
  if (x.size() != y.size())
    throw std::invalid_argument(std::string(who) + ": covariates have different sample sizes");
  if (x.size() < min_n)
    throw std::invalid_argument(std::string(who) + ": need at least " + std::to_string(min_n) +
                                " observations");
}

}  // namespace detail

/// Materializes both double-centered N x N matrices and evaluates the ratio.
/// Throws BudgetExceeded when the two matrices do not fit in `memory_budget`.
inline DCorResult dcor_direct(const Covariate& x, const Covariate& y,
                              std::size_t memory_budget = kDefaultMemoryBudget) {
  detail::check_pair(x, y, 2, "dcor_direct");
  const std::size_t n = x.size();
  if (direct_bytes(n) > memory_budget) throw BudgetExceeded(direct_bytes(n), memory_budget);

  MemoryTracker tracker;
  auto centered = [&](const Covariate& c) {
    ScratchBuffer<double> m(n * n, &tracker);
    detail::with_metric(c, [&](auto metric) {
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = 0; l < n; ++l) m[k * n + l] = metric(k, l);
    });
    std::vector<long double> row(n, 0.0L);
    long double grand = 0.0L;
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t l = 0; l < n; ++l) row[k] += m[k * n + l];
      grand += row[k];
    }
    const long double nd = static_cast<long double>(n);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = 0; l < n; ++l)
        m[k * n + l] = static_cast<double>(m[k * n + l] - row[k] / nd - row[l] / nd + grand / (nd * nd));
    return m;
  };
  const auto a = centered(x);
  const auto b = centered(y);

  detail::CrossSums s;
  for (std::size_t k = 0; k < n; ++k) {
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      const double av = a[k * n + l], bv = b[k * n + l];
      sab += av * bv;
      saa += av * av;
      sbb += bv * bv;
    }
    s.ab += sab;
    s.aa += saa;
    s.bb += sbb;
  }
  DCorResult r = detail::finish(s, n);
  r.peak_aux_bytes = tracker.peak_bytes();
  return r;
}

/// Two-pass tiled computation with O(L^2 + N) scratch memory.
inline DCorResult dcor_blockwise(const Covariate& x, const Covariate& y, const BlockPlan& plan) {
  detail::check_pair(x, y, 2, "dcor_blockwise");
  MemoryTracker tracker;
  const CenteringStats sx = centering_stats(x, plan.block_size, &tracker);
  const CenteringStats sy = centering_stats(y, plan.block_size, &tracker);
  // Both row-sum vectors stay alive through pass 2.
  tracker.acquire(2 * x.size() * sizeof(double));
  const auto sums = detail::blockwise_sums(x, y, sx, sy, plan.block_size, {}, &tracker);
  tracker.release(2 * x.size() * sizeof(double));
  DCorResult r = detail::finish(sums, x.size());
  r.peak_aux_bytes = tracker.peak_bytes();
  r.block_size = std::min(plan.block_size, x.size());
  return r;
}

/// Options shared by the independence test and candidate screening.
struct TestOptions {
  std::size_t n_perm = kDefaultPermutations;
  std::uint64_t seed = 0;
  double alpha = kDefaultAlpha;
  std::size_t memory_budget = kDefaultMemoryBudget;
  /// Tile edge for blockwise fallback; 0 picks one from the budget.
  std::size_t block_size = 0;
};

/// Chooses direct or blockwise computation from the memory budget.
inline DCorResult dcor(const Covariate& x, const Covariate& y, const TestOptions& opt = {}) {
  detail::check_pair(x, y, 2, "dcor");
  const std::size_t n = x.size();
  if (opt.block_size == 0 && direct_bytes(n) <= opt.memory_budget)
    return dcor_direct(x, y, opt.memory_budget);
  const BlockPlan plan = opt.block_size ? BlockPlan(opt.block_size)
                                        : BlockPlan::for_budget(n, opt.memory_budget, worker_threads());
  return dcor_blockwise(x, y, plan);
}

/// Double-centered distance matrix stored as its upper triangle (diagonal
/// included), row by row: (0,0),(0,1)..(0,n-1),(1,1),...
class CenteredDistances {
 public:
  static std::size_t bytes_for(std::size_t n) noexcept { return n * (n + 1) / 2 * sizeof(double); }

  static CenteredDistances compute(const Covariate& c) {
    const std::size_t n = c.size();
    if (n < 2) throw std::invalid_argument("CenteredDistances: need at least 2 observations");
    const CenteringStats st = centering_stats(c, std::min<std::size_t>(n, 256));
    CenteredDistances out;
    out.n_ = n;
    out.packed_.resize(n * (n + 1) / 2);
    const double g = st.grand_mean();
    detail::with_metric(c, [&](auto metric) {
      std::size_t idx = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double ck = g - st.row_mean(k);
        for (std::size_t l = k; l < n; ++l) out.packed_[idx++] = metric(k, l) + ck - st.row_mean(l);
      }
    });
    long double diag = 0.0L, off = 0.0L;
    std::size_t idx = 0;
    for (std::size_t k = 0; k < n; ++k) {
      diag += out.packed_[idx] * out.packed_[idx];
      double s = 0.0;
      for (std::size_t l = k + 1; l < n; ++l) s += out.packed_[idx + l - k] * out.packed_[idx + l - k];
      off += s;
      idx += n - k;
    }
    out.sum_squares_ = diag + 2.0L * off;
    return out;
  }

  std::size_t size() const noexcept { return n_; }
  std::span<const double> packed() const noexcept { return packed_; }
  long double sum_squares() const noexcept { return sum_squares_; }
  bool constant() const noexcept { return !(sum_squares_ > 0.0L); }
  static std::size_t row_offset(std::size_t k, std::size_t n) noexcept { return k * n - k * (k - 1) / 2; }

  /// Full row-major N x N copy.
  std::vector<double> expand() const {
    std::vector<double> full(n_ * n_);
    std::size_t idx = 0;
    for (std::size_t k = 0; k < n_; ++k)
      for (std::size_t l = k; l < n_; ++l, ++idx) {
        full[k * n_ + l] = packed_[idx];
        full[l * n_ + k] = packed_[idx];
      }
    return full;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> packed_;
  long double sum_squares_ = 0.0L;
};

/// sum over all k,l of A_kl B_kl for two packed centered matrices.
inline long double cross_sum(const CenteredDistances& a, const CenteredDistances& b) {
  const std::size_t n = a.size();
  auto pa = a.packed();
  auto pb = b.packed();
  long double diag = 0.0L, off = 0.0L;
  std::size_t idx = 0;
  for (std::size_t k = 0; k < n; ++k) {
    diag += pa[idx] * pb[idx];
    double s = 0.0;
    for (std::size_t l = 1; l < n - k; ++l) s += pa[idx + l] * pb[idx + l];
    off += s;
    idx += n - k;
  }
  return diag + 2.0L * off;
}

namespace detail {

inline double dot(const double* a, const double* b, std::size_t len) noexcept {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= len; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < len; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

/// out[j * P + p] = sum_kl A_j[k,l] * E[perm_p(k), perm_p(l)], with E the full
/// centered matrix of the permuted variable. Candidates share each permutation.
/// The packed triangle is walked in row chunks so every candidate chunk is
/// reused across a batch of gathered permuted chunks while still in cache.
inline std::vector<double> permuted_cross_sums(std::span<const CenteredDistances* const> xs,
                                               std::span<const double> e_full, std::size_t n,
                                               const std::vector<std::vector<std::size_t>>& perms) {
  const std::size_t np = perms.size();
  const std::size_t nc = xs.size();
  std::vector<double> out(nc * np, 0.0);
  constexpr std::size_t kChunk = 8192;
  constexpr std::size_t kBatch = 16;

  std::vector<double> bufs(kBatch * std::max(kChunk, n));
  std::size_t k0 = 0;
  while (k0 < n) {
    std::size_t k1 = k0, len = 0;
    while (k1 < n && (len == 0 || len + (n - k1) <= kChunk)) {
      len += n - k1;
      ++k1;
    }
    const std::size_t off = CenteredDistances::row_offset(k0, n);
    for (std::size_t p0 = 0; p0 < np; p0 += kBatch) {
      const std::size_t p1 = std::min(np, p0 + kBatch);
#pragma omp parallel for schedule(static)
      for (std::size_t p = p0; p < p1; ++p) {
        const auto& pi = perms[p];
        double* buf = bufs.data() + (p - p0) * len;
        std::size_t idx = 0;
        for (std::size_t k = k0; k < k1; ++k) {
          const double* erow = e_full.data() + pi[k] * n;
          buf[idx++] = erow[pi[k]];
          for (std::size_t l = k + 1; l < n; ++l) buf[idx++] = 2.0 * erow[pi[l]];
        }
      }
#pragma omp parallel for schedule(static)
      for (std::size_t j = 0; j < nc; ++j) {
        const double* a = xs[j]->packed().data() + off;
        for (std::size_t p = p0; p < p1; ++p)
          out[j * np + p] += dot(a, bufs.data() + (p - p0) * len, len);
      }
    }
    k0 = k1;
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> make_permutations(std::size_t n, std::size_t count,
                                                               std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> perms;
  perms.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    Rng rng = substream(seed, "permutation", p);
    perms.push_back(random_permutation(n, rng));
  }
  return perms;
}

inline double perm_pvalue(double observed, std::span<const double> stats, double scale) {
  const double tol = 1e-10 * scale;
  std::size_t ge = 0;
  for (double s : stats)
    if (s >= observed - tol) ++ge;
  return static_cast<double>(1 + ge) / static_cast<double>(stats.size() + 1);
}

}  // namespace detail

/// Permutation p-value of x against y over an explicit list of permutations of
/// y's observation indices (y's distance matrix is re-indexed, not recomputed).
inline double permutation_pvalue(const Covariate& x, const Covariate& y,
                                 const std::vector<std::vector<std::size_t>>& perms) {
  detail::check_pair(x, y, 2, "permutation_pvalue");
  const auto a = CenteredDistances::compute(x);
  const auto b = CenteredDistances::compute(y);
  if (a.constant() || b.constant()) return 1.0;
  const std::size_t n = x.size();
  std::vector<std::vector<std::size_t>> all;
  all.reserve(perms.size() + 1);
  all.emplace_back(n);
  std::iota(all[0].begin(), all[0].end(), std::size_t{0});
  all.insert(all.end(), perms.begin(), perms.end());
  const CenteredDistances* xs[] = {&a};
  const auto e = b.expand();
  const auto stats = detail::permuted_cross_sums(xs, e, n, all);
  const double scale = static_cast<double>(std::sqrt(a.sum_squares() * b.sum_squares()));
  return detail::perm_pvalue(stats[0], std::span<const double>(stats).subspan(1), scale);
}

/// Cache of packed centered distance matrices keyed by covariate name, bounded by a byte budget.
class DistanceCache {
 public:
  explicit DistanceCache(std::size_t budget = kDefaultMemoryBudget) : budget_(budget) {}

  /// Cached matrix, computing it if it fits; nullptr when the budget is exhausted.
  std::shared_ptr<const CenteredDistances> get(const Covariate& c) {
    if (auto it = entries_.find(c.name()); it != entries_.end() && it->second->size() == c.size())
      return it->second;
    const std::size_t bytes = CenteredDistances::bytes_for(c.size());
    if (used_ + bytes > budget_) return nullptr;
    auto m = std::make_shared<const CenteredDistances>(CenteredDistances::compute(c));
    used_ += bytes;
    entries_[c.name()] = m;
    return m;
  }

  std::size_t bytes_used() const noexcept { return used_; }
  std::size_t budget() const noexcept { return budget_; }

 private:
  std::size_t budget_;
  std::size_t used_ = 0;
  std::map<std::string, std::shared_ptr<const CenteredDistances>> entries_;
};

/// One screening result: dcor against the target and its permutation p-value.
struct ScreenRow {
  std::string name;
  double dcor = 0.0;
  double p_value = 1.0;
  /// dcor when the independence test rejects at alpha, otherwise 0.
  double filtered = 0.0;
};

/// Tests every candidate against `target` (typically the current residuals).
/// All candidates are tested under the same set of permutations of the target.
/// Output order is the input order.
inline std::vector<ScreenRow> screen_candidates(const Covariate& target,
                                                std::span<const Covariate* const> candidates,
                                                const TestOptions& opt, DistanceCache* cache = nullptr) {
  const std::size_t n = target.size();
  if (n < 4) throw std::invalid_argument("screen_candidates: need at least 4 observations");
  if (opt.n_perm == 0) throw std::invalid_argument("screen_candidates: n_perm must be positive");
  for (const auto* c : candidates)
    if (c->size() != n) throw std::invalid_argument("screen_candidates: sample size mismatch");

  std::vector<ScreenRow> rows(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) rows[j].name = candidates[j]->name();
  if (candidates.empty()) return rows;

  const std::size_t target_bytes = n * n * sizeof(double) + CenteredDistances::bytes_for(n);
  const bool materialize = target_bytes <= opt.memory_budget;
  auto perms = detail::make_permutations(n, opt.n_perm, opt.seed);

  std::vector<std::size_t> fallback;
  if (materialize) {
    const auto b = CenteredDistances::compute(target);
    const auto e = b.expand();
    DistanceCache local(opt.memory_budget - target_bytes);
    DistanceCache& store = cache ? *cache : local;

    std::vector<std::shared_ptr<const CenteredDistances>> held;
    std::vector<const CenteredDistances*> xs;
    std::vector<std::size_t> which;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      auto m = store.get(*candidates[j]);
      if (!m) {
        fallback.push_back(j);
        continue;
      }
      if (m->constant() || b.constant()) continue;  // dcor 0, p 1
      rows[j].dcor = static_cast<double>(
          std::clamp(cross_sum(*m, b) / std::sqrt(m->sum_squares() * b.sum_squares()), 0.0L, 1.0L));
      held.push_back(m);
      xs.push_back(m.get());
      which.push_back(j);
    }
    if (!xs.empty()) {
      std::vector<std::vector<std::size_t>> all;
      all.reserve(perms.size() + 1);
      all.emplace_back(n);
      std::iota(all[0].begin(), all[0].end(), std::size_t{0});
      all.insert(all.end(), std::make_move_iterator(perms.begin()), std::make_move_iterator(perms.end()));
      const auto stats = detail::permuted_cross_sums(xs, e, n, all);
      const std::size_t np = all.size();
      for (std::size_t q = 0; q < xs.size(); ++q) {
        std::span<const double> s(stats.data() + q * np, np);
        const double scale = static_cast<double>(std::sqrt(xs[q]->sum_squares() * b.sum_squares()));
        rows[which[q]].p_value = detail::perm_pvalue(s[0], s.subspan(1), scale);
      }
      perms.assign(all.begin() + 1, all.end());
    }
  } else {
    for (std::size_t j = 0; j < candidates.size(); ++j) fallback.push_back(j);
  }

  if (!fallback.empty()) {
    const std::size_t l = opt.block_size ? opt.block_size
                                         : BlockPlan::for_budget(n, opt.memory_budget, worker_threads()).block_size;
    const CenteringStats sy = centering_stats(target, l);
    for (std::size_t j : fallback) {
      const Covariate& x = *candidates[j];
      const CenteringStats sx = centering_stats(x, l);
      const auto obs = detail::blockwise_sums(x, target, sx, sy, l, {}, nullptr);
      if (!(obs.aa > 0.0L && obs.bb > 0.0L)) continue;
      rows[j].dcor = detail::finish(obs, n).dcor;
      std::vector<double> stats;
      stats.reserve(perms.size());
      for (const auto& p : perms)
        stats.push_back(static_cast<double>(detail::blockwise_sums(x, target, sx, sy, l, p, nullptr).ab));
      rows[j].p_value = detail::perm_pvalue(static_cast<double>(obs.ab), stats,
                                            static_cast<double>(std::sqrt(obs.aa * obs.bb)));
    }
  }

  for (auto& r : rows) r.filtered = (r.p_value <= opt.alpha) ? r.dcor : 0.0;
  return rows;
}

inline std::vector<ScreenRow> screen_candidates(const Covariate& target, const std::vector<Covariate>& candidates,
                                                const TestOptions& opt, DistanceCache* cache = nullptr) {
  std::vector<const Covariate*> ptrs;
  for (const auto& c : candidates) ptrs.push_back(&c);
  return screen_candidates(target, ptrs, opt, cache);
}

/// Permutation test of independence between x and y; permutes y's indices.
inline DCorResult independence_test(const Covariate& x, const Covariate& y, std::size_t n_perm,
                                    std::uint64_t seed, TestOptions opt = {}) {
  detail::check_pair(x, y, 4, "independence_test");
  if (n_perm == 0) throw std::invalid_argument("independence_test: n_perm must be positive");
  opt.n_perm = n_perm;
  opt.seed = seed;
  DCorResult r = dcor(x, y, opt);
  const Covariate* xs[] = {&x};
  const auto rows = screen_candidates(y, xs, opt);
  r.p_value = (r.dcor > 0.0) ? rows[0].p_value : 1.0;
  return r;
}

}  // namespace dcorsel
