#pragma once

// Checks of the optimality conditions for the quadratic partition problem:
// minimize sum_ij d_ij (s_ij - z_ij)^2 over pairs of partitions, where
// s_ij = P(X in Omega_i, Y in Omega'_j). Grid partitions are searched by
// single-cell flips; one-dimensional interval partitions are polished with
// Newton steps and then tested against the first- and second-variation
// identities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nisim/error.hpp"
#include "nisim/gausscore.hpp"
#include "nisim/netsearch.hpp"
#include "nisim/parallel.hpp"
#include "nisim/stability.hpp"

namespace nisim {

/// Weights d_ij > 0 and targets z_ij, row-major m x m.
class QuadraticObjective {
 public:
  QuadraticObjective(std::size_t m, std::vector<double> weights, std::vector<double> targets)
      : m_(m), d_(std::move(weights)), z_(std::move(targets)) {
    if (m_ < 2 || m_ > kMaxOutcomes) throw InvalidArgument("QuadraticObjective: m must be in [2, 6]");
    if (d_.size() != m_ * m_ || z_.size() != m_ * m_) {
      throw DataError("QuadraticObjective: weights and targets must have m*m entries");
    }
    for (double v : d_)
      if (!(v > 0.0) || !std::isfinite(v)) throw DataError("QuadraticObjective: weights must be positive and finite");
    for (double v : z_)
      if (!std::isfinite(v)) throw DataError("QuadraticObjective: targets must be finite");
  }

  std::size_t outcomes() const noexcept { return m_; }
  double weight(std::size_t i, std::size_t j) const { return d_[i * m_ + j]; }
  double target(std::size_t i, std::size_t j) const { return z_[i * m_ + j]; }
  const std::vector<double>& weights() const noexcept { return d_; }
  const std::vector<double>& targets() const noexcept { return z_; }

  /// sum_ij d_ij (s_ij - z_ij)^2 for a raw row-major s.
  double value(std::span<const double> s) const {
    double v = 0.0;
    for (std::size_t e = 0; e < m_ * m_; ++e) v += d_[e] * (s[e] - z_[e]) * (s[e] - z_[e]);
    return v;
  }
  /// d_ij (s_ij - z_ij).
  std::vector<double> residual_weights(std::span<const double> s) const {
    std::vector<double> r(m_ * m_);
    for (std::size_t e = 0; e < m_ * m_; ++e) r[e] = d_[e] * (s[e] - z_[e]);
    return r;
  }

 private:
  std::size_t m_;
  std::vector<double> d_, z_;
};

/// Two labelings of the same grid: cell c lies in Omega_{omega[c]} and in
/// Omega'_{omega_prime[c]}.
class PartitionGrid {
 public:
  PartitionGrid(CellGrid grid, std::size_t m, std::vector<int> omega, std::vector<int> omega_prime)
      : grid_(std::move(grid)), m_(m), omega_(std::move(omega)), prime_(std::move(omega_prime)) {
    if (omega_.size() != grid_.cell_count() || prime_.size() != grid_.cell_count()) {
      throw DataError("PartitionGrid: label count does not match the grid");
    }
    for (const auto* v : {&omega_, &prime_})
      for (int l : *v)
        if (l < 0 || static_cast<std::size_t>(l) >= m_) throw DataError("PartitionGrid: label out of range");
  }

  const CellGrid& grid() const noexcept { return grid_; }
  std::size_t outcomes() const noexcept { return m_; }
  const std::vector<int>& omega() const noexcept { return omega_; }
  const std::vector<int>& omega_prime() const noexcept { return prime_; }
  CellFunction first() const { return CellFunction::from_labels(grid_, m_, omega_); }
  CellFunction second() const { return CellFunction::from_labels(grid_, m_, prime_); }

  friend bool operator==(const PartitionGrid& a, const PartitionGrid& b) {
    return a.grid_ == b.grid_ && a.m_ == b.m_ && a.omega_ == b.omega_ && a.prime_ == b.prime_;
  }

 private:
  CellGrid grid_;
  std::size_t m_;
  std::vector<int> omega_, prime_;
};

namespace detail {

inline std::vector<double> one_hot(std::span<const int> labels, std::size_t m) {
  std::vector<double> v(labels.size() * m, 0.0);
  for (std::size_t c = 0; c < labels.size(); ++c) v[c * m + static_cast<std::size_t>(labels[c])] = 1.0;
  return v;
}

inline std::vector<double> grid_stability(const PartitionGrid& parts, const AxisKernel& kernel) {
  const std::size_t m = parts.outcomes();
  const auto g = one_hot(parts.omega_prime(), m);
  const auto tg = contract_axes(kernel.joint, parts.grid().dimension(), m, g);
  return bilinear(parts.grid().cell_count(), m, one_hot(parts.omega(), m), tg);
}

}  // namespace detail

/// s_ij = P(X in Omega_i, Y in Omega'_j), unclamped.
inline std::vector<double> partition_stability(const PartitionGrid& parts, const Correlation& rho) {
  return detail::grid_stability(parts, axis_kernel(parts.grid(), rho));
}

inline double eval_objective(const PartitionGrid& parts, const Correlation& rho, const QuadraticObjective& obj) {
  if (parts.outcomes() != obj.outcomes()) throw InvalidArgument("eval_objective: m mismatch");
  return obj.value(partition_stability(parts, rho));
}

/// u_ijk = d_ki (s_ki - z_ki) - d_kj (s_kj - z_kj) and
/// u'_ijk = d_ik (s_ik - z_ik) - d_jk (s_jk - z_jk).
class UCoefficients {
 public:
  UCoefficients(std::size_t m, std::vector<double> u, std::vector<double> u_prime)
      : m_(m), u_(std::move(u)), up_(std::move(u_prime)) {}
  std::size_t outcomes() const noexcept { return m_; }
  double u(std::size_t i, std::size_t j, std::size_t k) const { return u_[(i * m_ + j) * m_ + k]; }
  double u_prime(std::size_t i, std::size_t j, std::size_t k) const { return up_[(i * m_ + j) * m_ + k]; }

 private:
  std::size_t m_;
  std::vector<double> u_, up_;
};

inline UCoefficients u_coefficients(std::span<const double> s, const QuadraticObjective& obj) {
  const std::size_t m = obj.outcomes();
  if (s.size() != m * m) throw InvalidArgument("u_coefficients: s must have m*m entries");
  const auto r = obj.residual_weights(s);
  std::vector<double> u(m * m * m), up(m * m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) {
        u[(i * m + j) * m + k] = r[k * m + i] - r[k * m + j];
        up[(i * m + j) * m + k] = r[i * m + k] - r[j * m + k];
      }
  return UCoefficients(m, std::move(u), std::move(up));
}

inline UCoefficients u_coefficients(const DistributionMatrix& s, const QuadraticObjective& obj) {
  return u_coefficients(std::span<const double>(s.entries()), obj);
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck fields of labeled cells

namespace detail {

/// P(rho x + sigma Z in (lo, hi)) for one coordinate.
inline double ou_interval(double lo, double hi, double x, const Correlation& rho) {
  const double r = rho.value();
  const double s = rho.sigma();
  const double a = std::isinf(lo) ? lo : (lo - r * x) / s;
  const double b = std::isinf(hi) ? hi : (hi - r * x) / s;
  // Difference of upper tails is more accurate than of CDFs on the right.
  if (a > 0.0) return normal_cdf_extended(-a) - normal_cdf_extended(-b);
  return normal_cdf_extended(b) - normal_cdf_extended(a);
}

}  // namespace detail

/// T_rho(sum_k w_k 1_{Omega_k})(x) for a labeled grid, exactly: each cell
/// contributes the product over axes of Gaussian interval probabilities.
inline double ou_labeled_field(const CellGrid& grid, std::span<const int> labels, std::span<const double> w,
                               const Correlation& rho, std::span<const double> x) {
  const std::size_t k = grid.dimension();
  const auto e = grid.edges();
  const std::size_t n = grid.axis_cells();
  std::vector<double> p(k * n);
  for (std::size_t d = 0; d < k; ++d)
    for (std::size_t c = 0; c < n; ++c) p[d * n + c] = detail::ou_interval(e[c], e[c + 1], x[d], rho);
  double total = 0.0;
  std::vector<std::size_t> idx(k, 0);
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
    const double wv = w[static_cast<std::size_t>(labels[cell])];
    if (wv != 0.0) {
      double v = wv;
      for (std::size_t d = 0; d < k; ++d) v *= p[d * n + idx[d]];
      total += v;
    }
    for (std::size_t d = k; d-- > 0;) {
      if (++idx[d] < n) break;
      idx[d] = 0;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// First variation on grids

/// Spread of the first-variation field over one detected interface.
struct InterfaceResidual {
  std::size_t i = 0;
  std::size_t j = 0;
  bool primed = false;            ///< false: Sigma_ij of Omega; true: Sigma'_ij of Omega'
  std::optional<double> residual;  ///< max - min of the field; empty when no interface was found
  double mean_value = 0.0;
  std::size_t samples = 0;
};

struct FirstVariationReport {
  std::vector<InterfaceResidual> entries;

  /// Largest residual over nonempty interfaces, if any.
  std::optional<double> max_residual() const {
    std::optional<double> out;
    for (const auto& e : entries)
      if (e.residual) out = std::max(out.value_or(0.0), *e.residual);
    return out;
  }
};

namespace detail {

/// Midpoints of bounded faces separating a cell labeled i from one labeled j,
/// in either order.
inline std::vector<std::vector<double>> interface_points(const CellGrid& grid, std::span<const int> labels,
                                                         int i, int j) {
  const std::size_t k = grid.dimension();
  const std::size_t n = grid.axis_cells();
  const auto e = grid.edges();
  std::vector<std::vector<double>> out;
  for (std::size_t cell = 0; cell < grid.cell_count(); ++cell) {
    const auto idx = grid.unflatten(cell);
    for (std::size_t d = 0; d < k; ++d) {
      if (idx[d] + 1 >= n) continue;
      bool bounded = true;
      for (std::size_t o = 0; o < k; ++o)
        if (o != d && (idx[o] == 0 || idx[o] + 1 == n)) bounded = false;
      if (!bounded) continue;
      auto nb = idx;
      ++nb[d];
      const int a = labels[cell];
      const int b = labels[grid.flatten(nb)];
      if (!((a == i && b == j) || (a == j && b == i))) continue;
      std::vector<double> x(k);
      for (std::size_t o = 0; o < k; ++o) x[o] = o == d ? e[idx[d] + 1] : grid.axis_center(idx[o]);
      out.push_back(std::move(x));
    }
  }
  return out;
}

}  // namespace detail

/// Evaluates T_rho(sum_k u'_ijk 1_{Omega'_k}) on Sigma_ij and
/// T_rho(sum_k u_ijk 1_{Omega_k}) on Sigma'_ij at face midpoints, for every
/// pair i < j, and reports the spread of each.
inline FirstVariationReport first_variation_residual(const PartitionGrid& parts, const Correlation& rho,
                                                     const QuadraticObjective& obj) {
  const std::size_t k = parts.grid().dimension();
  if (k < 1 || k > 2) throw InvalidArgument("first_variation_residual: grid dimension must be 1 or 2");
  const std::size_t m = obj.outcomes();
  if (parts.outcomes() != m) throw InvalidArgument("first_variation_residual: m mismatch");
  const auto s = partition_stability(parts, rho);
  const auto u = u_coefficients(s, obj);
  FirstVariationReport rep;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      for (bool primed : {false, true}) {
        const auto& own = primed ? parts.omega_prime() : parts.omega();
        const auto& other = primed ? parts.omega() : parts.omega_prime();
        std::vector<double> w(m);
        for (std::size_t l = 0; l < m; ++l) w[l] = primed ? u.u(i, j, l) : u.u_prime(i, j, l);
        const auto pts = detail::interface_points(parts.grid(), own, static_cast<int>(i), static_cast<int>(j));
        InterfaceResidual r{i, j, primed, std::nullopt, 0.0, pts.size()};
        if (!pts.empty()) {
          double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
          for (const auto& x : pts) {
            const double v = ou_labeled_field(parts.grid(), other, w, rho, x);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
          }
          r.residual = hi - lo;
          r.mean_value = sum / static_cast<double>(pts.size());
        }
        rep.entries.push_back(r);
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Grid local search

namespace detail {

class PartitionDescent {
 public:
  PartitionDescent(const CellGrid& grid, const AxisKernel& axis, const QuadraticObjective& obj)
      : grid_(grid), axis_(axis), kern_(grid, axis), obj_(obj), m_(obj.outcomes()), n_(grid.cell_count()) {}

  /// Flips cells until no single flip lowers the objective by more than tol.
  void run(std::vector<int>& lf, std::vector<int>& lg, double tol) {
    for (;;) {
      rebuild(lf, lg);
      if (!sweep_until_stable(lf, lg)) {
        // Exhaustive check with freshly built sums.
        rebuild(lf, lg);
        if (best_flip(lf, lg) >= -tol) return;
      }
    }
  }

 private:
  void rebuild(const std::vector<int>& lf, const std::vector<int>& lg) {
    const std::size_t k = grid_.dimension();
    tg_ = contract_axes(axis_.joint, k, m_, one_hot(lg, m_));
    tf_ = contract_axes(axis_.joint, k, m_, one_hot(lf, m_));
    s_ = bilinear(n_, m_, one_hot(lf, m_), tg_);
  }

  double delta(bool f_side, std::size_t cell, int p, int q) const {
    const auto& t = f_side ? tg_ : tf_;
    double dv = 0.0;
    for (std::size_t l = 0; l < m_; ++l) {
      const double w = t[cell * m_ + l];
      if (w == 0.0) continue;
      const std::size_t ep = f_side ? p * m_ + l : l * m_ + p;
      const std::size_t eq = f_side ? q * m_ + l : l * m_ + q;
      const double rp = s_[ep] - obj_.targets()[ep];
      const double rq = s_[eq] - obj_.targets()[eq];
      dv += obj_.weights()[ep] * ((rp - w) * (rp - w) - rp * rp);
      dv += obj_.weights()[eq] * ((rq + w) * (rq + w) - rq * rq);
    }
    return dv;
  }

  double best_flip(const std::vector<int>& lf, const std::vector<int>& lg) const {
    double best = 0.0;
    for (int side = 0; side < 2; ++side) {
      const auto& lab = side == 0 ? lf : lg;
      for (std::size_t c = 0; c < n_; ++c)
        for (int q = 0; q < static_cast<int>(m_); ++q)
          if (q != lab[c]) best = std::min(best, delta(side == 0, c, lab[c], q));
    }
    return best;
  }

  void apply(bool f_side, std::size_t cell, int p, int q, std::vector<int>& lab) {
    auto& t_own = f_side ? tg_ : tf_;
    for (std::size_t l = 0; l < m_; ++l) {
      const double w = t_own[cell * m_ + l];
      const std::size_t ep = f_side ? p * m_ + l : l * m_ + p;
      const std::size_t eq = f_side ? q * m_ + l : l * m_ + q;
      s_[ep] -= w;
      s_[eq] += w;
    }
    // Cells paired with `cell` see one unit of mass move from p to q.
    auto& t_other = f_side ? tf_ : tg_;
    for (std::size_t b = 0; b < n_; ++b) {
      const double w = kern_(cell, b);
      if (w == 0.0) continue;
      t_other[b * m_ + static_cast<std::size_t>(p)] -= w;
      t_other[b * m_ + static_cast<std::size_t>(q)] += w;
    }
    lab[cell] = q;
  }

  /// Returns true if some move was applied.
  bool sweep_until_stable(std::vector<int>& lf, std::vector<int>& lg) {
    bool any = false;
    bool moved = true;
    while (moved) {
      moved = false;
      for (int side = 0; side < 2; ++side) {
        auto& lab = side == 0 ? lf : lg;
        for (std::size_t c = 0; c < n_; ++c) {
          int best_q = lab[c];
          double best = -1e-14;
          for (int q = 0; q < static_cast<int>(m_); ++q) {
            if (q == lab[c]) continue;
            const double dv = delta(side == 0, c, lab[c], q);
            if (dv < best) {
              best = dv;
              best_q = q;
            }
          }
          if (best_q != lab[c]) {
            apply(side == 0, c, lab[c], best_q, lab);
            moved = any = true;
          }
        }
      }
    }
    return any;
  }

  const CellGrid& grid_;
  const AxisKernel& axis_;
  TensorKernel kern_;
  const QuadraticObjective& obj_;
  std::size_t m_, n_;
  std::vector<double> tf_, tg_, s_;
};

}  // namespace detail

/// Tolerance below which a single-cell flip does not count as an improvement.
inline constexpr double kFlipTolerance = 1e-12;

/// Multilevel single-cell-flip descent from `restarts` random starts (seeded
/// by (seed, restart)), coarse grids first. Returns the best local minimum in
/// restart order; no single flip of the result lowers the objective by more
/// than kFlipTolerance.
inline PartitionGrid grid_local_search(const Correlation& rho, const QuadraticObjective& obj, const CellGrid& grid,
                                       std::uint64_t seed, std::size_t restarts = 8, unsigned threads = 1) {
  if (restarts < 1) throw InvalidArgument("grid_local_search: restarts must be >= 1");
  const std::size_t m = obj.outcomes();
  const auto schedule = detail::level_schedule(grid.cells_per_axis());
  std::vector<CellGrid> grids;
  std::vector<AxisKernel> kernels;
  for (std::size_t c : schedule) {
    grids.emplace_back(grid.dimension(), grid.radius(), c);
    kernels.push_back(axis_kernel(grids.back(), rho));
  }
  struct Result {
    std::vector<int> lf, lg;
    double value = std::numeric_limits<double>::infinity();
  };
  const auto results = ordered_map<Result>(restarts, threads, [&](std::size_t r) {
    auto gen = detail::seeded_engine(seed, r);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(m) - 1);
    std::vector<std::uint32_t> f(grids.front().cell_count()), g(grids.front().cell_count());
    for (auto& v : f) v = static_cast<std::uint32_t>(pick(gen));
    for (auto& v : g) v = static_cast<std::uint32_t>(pick(gen));
    std::vector<int> lf, lg;
    for (std::size_t level = 0; level < grids.size(); ++level) {
      if (level > 0) {
        f = detail::prolongate(f, grids[level - 1], grids[level]);
        g = detail::prolongate(g, grids[level - 1], grids[level]);
      }
      lf.assign(f.begin(), f.end());
      lg.assign(g.begin(), g.end());
      detail::PartitionDescent(grids[level], kernels[level], obj).run(lf, lg, kFlipTolerance);
      f.assign(lf.begin(), lf.end());
      g.assign(lg.begin(), lg.end());
    }
    Result res{lf, lg, 0.0};
    res.value = obj.value(detail::grid_stability(PartitionGrid(grids.back(), m, lf, lg), kernels.back()));
    return res;
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < results.size(); ++r)
    if (results[r].value < results[best].value) best = r;
  return PartitionGrid(grids.back(), m, results[best].lf, results[best].lg);
}

/// Largest decrease of the objective achievable by one cell flip (0 if none),
/// recomputed from scratch for every candidate flip.
inline double best_single_flip_gain(const PartitionGrid& parts, const Correlation& rho,
                                    const QuadraticObjective& obj) {
  const AxisKernel kernel = axis_kernel(parts.grid(), rho);
  const double base = obj.value(detail::grid_stability(parts, kernel));
  double gain = 0.0;
  auto lf = parts.omega();
  auto lg = parts.omega_prime();
  for (int side = 0; side < 2; ++side) {
    auto& lab = side == 0 ? lf : lg;
    for (std::size_t c = 0; c < lab.size(); ++c) {
      const int keep = lab[c];
      for (int q = 0; q < static_cast<int>(parts.outcomes()); ++q) {
        if (q == keep) continue;
        lab[c] = q;
        const double v = obj.value(detail::grid_stability(PartitionGrid(parts.grid(), parts.outcomes(), lf, lg), kernel));
        gain = std::max(gain, base - v);
      }
      lab[c] = keep;
    }
  }
  return gain;
}

// ---------------------------------------------------------------------------
// One-dimensional interval partitions

/// Partition of the line into intervals (b_{r-1}, b_r) with b_{-1} = -inf and
/// b_n = +inf; interval r carries labels[r]. Adjacent labels differ.
class IntervalPartition {
 public:
  IntervalPartition(std::vector<double> breaks, std::vector<int> labels)
      : breaks_(std::move(breaks)), labels_(std::move(labels)) {
    if (labels_.size() != breaks_.size() + 1) throw DataError("IntervalPartition: need one more label than breaks");
    for (std::size_t i = 0; i < breaks_.size(); ++i) {
      if (!std::isfinite(breaks_[i])) throw DataError("IntervalPartition: breaks must be finite");
      if (i > 0 && !(breaks_[i] > breaks_[i - 1])) throw DataError("IntervalPartition: breaks must increase");
    }
    for (std::size_t i = 0; i + 1 < labels_.size(); ++i)
      if (labels_[i] == labels_[i + 1]) throw DataError("IntervalPartition: adjacent intervals share a label");
  }

  const std::vector<double>& breaks() const noexcept { return breaks_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  std::size_t intervals() const noexcept { return labels_.size(); }
  double lower(std::size_t r) const {
    return r == 0 ? -std::numeric_limits<double>::infinity() : breaks_[r - 1];
  }
  double upper(std::size_t r) const {
    return r == breaks_.size() ? std::numeric_limits<double>::infinity() : breaks_[r];
  }

  IntervalPartition shifted(double t) const {
    auto b = breaks_;
    for (double& x : b) x += t;
    return IntervalPartition(std::move(b), labels_);
  }

  /// Merges runs of equal labels along a one-dimensional grid.
  static IntervalPartition from_grid(const CellGrid& grid, std::span<const int> labels) {
    if (grid.dimension() != 1) throw InvalidArgument("IntervalPartition::from_grid: grid must be one-dimensional");
    const auto e = grid.edges();
    std::vector<double> b;
    std::vector<int> l{labels[0]};
    for (std::size_t c = 1; c < labels.size(); ++c) {
      if (labels[c] != l.back()) {
        b.push_back(e[c]);
        l.push_back(labels[c]);
      }
    }
    return IntervalPartition(std::move(b), std::move(l));
  }

  friend bool operator==(const IntervalPartition&, const IntervalPartition&) = default;

 private:
  std::vector<double> breaks_;
  std::vector<int> labels_;
};

/// The pair (Omega, Omega') in one dimension.
struct IntervalPair {
  IntervalPartition omega;
  IntervalPartition omega_prime;

  static IntervalPair from_grid(const PartitionGrid& parts) {
    return {IntervalPartition::from_grid(parts.grid(), parts.omega()),
            IntervalPartition::from_grid(parts.grid(), parts.omega_prime())};
  }
};

namespace detail {

/// P(X <= s, Y <= t) for corner arrays, including infinite corners.
inline std::vector<double> interval_stability(const IntervalPartition& a, const IntervalPartition& b, std::size_t m,
                                              const Correlation& rho) {
  const std::size_t na = a.intervals(), nb = b.intervals();
  std::vector<double> ea(na + 1), eb(nb + 1);
  for (std::size_t r = 0; r <= na; ++r) ea[r] = r == na ? a.upper(na - 1) : a.lower(r);
  for (std::size_t r = 0; r <= nb; ++r) eb[r] = r == nb ? b.upper(nb - 1) : b.lower(r);
  std::vector<double> corner((na + 1) * (nb + 1));
  for (std::size_t r = 0; r <= na; ++r)
    for (std::size_t q = 0; q <= nb; ++q) corner[r * (nb + 1) + q] = bvn_orthant(ea[r], eb[q], rho);
  std::vector<double> s(m * m, 0.0);
  for (std::size_t r = 0; r < na; ++r)
    for (std::size_t q = 0; q < nb; ++q) {
      const double v = corner[(r + 1) * (nb + 1) + q + 1] - corner[r * (nb + 1) + q + 1] -
                       corner[(r + 1) * (nb + 1) + q] + corner[r * (nb + 1) + q];
      s[static_cast<std::size_t>(a.labels()[r]) * m + static_cast<std::size_t>(b.labels()[q])] += v;
    }
  return s;
}

}  // namespace detail

/// T_rho(sum_k w_k 1_{Omega_k})(x) for an interval partition.
inline double ou_interval_field(const IntervalPartition& p, std::span<const double> w, const Correlation& rho,
                                double x) {
  double v = 0.0;
  for (std::size_t r = 0; r < p.intervals(); ++r) {
    const double wk = w[static_cast<std::size_t>(p.labels()[r])];
    if (wk != 0.0) v += wk * detail::ou_interval(p.lower(r), p.upper(r), x, rho);
  }
  return v;
}

/// s_ij for interval partitions, unclamped.
inline std::vector<double> partition_stability(const IntervalPair& parts, std::size_t m, const Correlation& rho) {
  return detail::interval_stability(parts.omega, parts.omega_prime, m, rho);
}

inline double eval_objective(const IntervalPair& parts, const Correlation& rho, const QuadraticObjective& obj) {
  return obj.value(partition_stability(parts, obj.outcomes(), rho));
}

/// dF/db for every break of Omega followed by every break of Omega'.
inline std::vector<double> objective_gradient(const IntervalPair& parts, const Correlation& rho,
                                              const QuadraticObjective& obj) {
  const std::size_t m = obj.outcomes();
  const auto s = partition_stability(parts, m, rho);
  const auto r = obj.residual_weights(s);
  std::vector<double> out;
  std::vector<double> w(m);
  for (bool primed : {false, true}) {
    const auto& own = primed ? parts.omega_prime : parts.omega;
    const auto& other = primed ? parts.omega : parts.omega_prime;
    for (std::size_t b = 0; b < own.breaks().size(); ++b) {
      const auto left = static_cast<std::size_t>(own.labels()[b]);
      const auto right = static_cast<std::size_t>(own.labels()[b + 1]);
      // Moving the break right hands mass from `right` to `left`.
      for (std::size_t l = 0; l < m; ++l)
        w[l] = primed ? r[l * m + left] - r[l * m + right] : r[left * m + l] - r[right * m + l];
      const double x = own.breaks()[b];
      out.push_back(2.0 * normal_pdf(x) * ou_interval_field(other, w, rho, x));
    }
  }
  return out;
}

struct RefineResult {
  IntervalPair parts;
  double gradient_norm = 0.0;  ///< max |dF/db| at the returned breaks
  std::size_t iterations = 0;
  std::size_t collapsed = 0;   ///< intervals removed because their width reached zero
  bool converged = false;
};

namespace detail {

/// Builds a partition from possibly unordered breaks, deleting every interval
/// whose width is not positive. Returns the number of deletions.
inline std::size_t collapse_into(std::vector<double> b, std::vector<int> l, IntervalPartition& out) {
  std::size_t removed = 0;
  for (;;) {
    std::size_t bad = 0;
    for (std::size_t r = 1; r < b.size() && bad == 0; ++r)
      if (!(b[r] > b[r - 1])) bad = r;
    if (bad == 0) break;
    // Interval `bad` lies between b[bad-1] and b[bad].
    ++removed;
    if (l[bad - 1] == l[bad + 1]) {
      b.erase(b.begin() + static_cast<std::ptrdiff_t>(bad - 1), b.begin() + static_cast<std::ptrdiff_t>(bad + 1));
      l.erase(l.begin() + static_cast<std::ptrdiff_t>(bad), l.begin() + static_cast<std::ptrdiff_t>(bad + 2));
    } else {
      b[bad - 1] = 0.5 * (b[bad - 1] + b[bad]);
      b.erase(b.begin() + static_cast<std::ptrdiff_t>(bad));
      l.erase(l.begin() + static_cast<std::ptrdiff_t>(bad));
    }
  }
  out = IntervalPartition(std::move(b), std::move(l));
  return removed;
}

}  // namespace detail

/// Minimizes the objective over break positions of both partitions with
/// damped Newton steps (finite-difference Hessian of the analytic gradient).
/// Intervals whose width reaches zero are removed and the iteration continues
/// on the smaller partition.
inline RefineResult refine_interfaces(const IntervalPair& start, const Correlation& rho, const QuadraticObjective& obj,
                                      double tolerance = 1e-12, std::size_t max_iterations = 200) {
  RefineResult res{start, 0.0, 0, 0, false};
  auto to_vector = [](const IntervalPair& p) {
    std::vector<double> x = p.omega.breaks();
    x.insert(x.end(), p.omega_prime.breaks().begin(), p.omega_prime.breaks().end());
    return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())).eval();
  };
  auto grad = [&](const IntervalPair& p) {
    const auto g = objective_gradient(p, rho, obj);
    return Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size())).eval();
  };
  // Partition at x without collapsing; nullopt if breaks are out of order.
  auto exact_at = [&](const IntervalPair& shape, const Eigen::VectorXd& x) -> std::optional<IntervalPair> {
    const std::size_t na = shape.omega.breaks().size();
    std::vector<double> a(x.data(), x.data() + na), b(x.data() + na, x.data() + x.size());
    for (std::size_t i = 1; i < a.size(); ++i)
      if (!(a[i] > a[i - 1])) return std::nullopt;
    for (std::size_t i = 1; i < b.size(); ++i)
      if (!(b[i] > b[i - 1])) return std::nullopt;
    return IntervalPair{IntervalPartition(std::move(a), shape.omega.labels()),
                        IntervalPartition(std::move(b), shape.omega_prime.labels())};
  };

  IntervalPair cur = start;
  double f = eval_objective(cur, rho, obj);
  Eigen::VectorXd g = grad(cur);
  double lambda = 0.0;
  constexpr double h = 1e-6;
  for (; res.iterations < max_iterations; ++res.iterations) {
    const auto n = g.size();
    if (n == 0 || g.lpNorm<Eigen::Infinity>() <= tolerance) break;
    const Eigen::VectorXd x = to_vector(cur);
    Eigen::MatrixXd hess(n, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      // Keep the probe inside the ordering constraints.
      Eigen::VectorXd xp = x, xm = x;
      xp(c) += h;
      xm(c) -= h;
      const auto pp = exact_at(cur, xp), pm = exact_at(cur, xm);
      if (pp && pm) hess.col(c) = (grad(*pp) - grad(*pm)) / (2.0 * h);
      else hess.col(c) = Eigen::VectorXd::Zero(n);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    const double scale = std::max(1e-12, hess.diagonal().cwiseAbs().maxCoeff());

    bool accepted = false;
    for (int attempt = 0; attempt < 80 && !accepted; ++attempt) {
      const Eigen::MatrixXd damped = hess + lambda * scale * Eigen::MatrixXd::Identity(n, n);
      Eigen::LLT<Eigen::MatrixXd> llt(damped);
      if (llt.info() != Eigen::Success) {
        lambda = std::max(2.0 * lambda, 1e-10) * 4.0;
        continue;
      }
      const Eigen::VectorXd step = llt.solve(-g);
      const Eigen::VectorXd xn = x + step;
      const std::size_t na = cur.omega.breaks().size();
      IntervalPartition a = cur.omega, b = cur.omega_prime;
      const std::size_t removed =
          detail::collapse_into(std::vector<double>(xn.data(), xn.data() + na), cur.omega.labels(), a) +
          detail::collapse_into(std::vector<double>(xn.data() + na, xn.data() + n), cur.omega_prime.labels(), b);
      IntervalPair cand{a, b};
      const double fn = eval_objective(cand, rho, obj);
      const Eigen::VectorXd gn = grad(cand);
      const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
      if (fn < f - slack || (fn <= f + slack && removed == 0 && gn.norm() < g.norm())) {
        cur = std::move(cand);
        f = fn;
        g = gn;
        res.collapsed += removed;
        lambda *= 0.25;
        if (lambda < 1e-12) lambda = 0.0;
        accepted = true;
      } else {
        lambda = std::max(2.0 * lambda, 1e-10) * 4.0;
      }
    }
    if (!accepted) break;
  }
  res.parts = cur;
  res.gradient_norm = g.size() == 0 ? 0.0 : g.lpNorm<Eigen::Infinity>();
  res.converged = res.gradient_norm <= tolerance;
  return res;
}

// ---------------------------------------------------------------------------
// Translations

namespace detail {

/// Derivative of T_rho(sum_k w_k 1_{Omega_k}) by a central difference.
inline double ou_field_slope(const IntervalPartition& p, std::span<const double> w, const Correlation& rho, double x) {
  constexpr double h = 1e-4;
  return (ou_interval_field(p, w, rho, x + h) - ou_interval_field(p, w, rho, x - h)) / (2.0 * h);
}

/// Interface points between labels i and j, with the orientation +1 when the
/// i side lies to the left.
inline std::vector<std::pair<double, double>> oriented_interface(const IntervalPartition& p, int i, int j) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t b = 0; b < p.breaks().size(); ++b) {
    const int l = p.labels()[b], r = p.labels()[b + 1];
    if (l == i && r == j) out.emplace_back(p.breaks()[b], 1.0);
    if (l == j && r == i) out.emplace_back(p.breaks()[b], -1.0);
  }
  return out;
}

}  // namespace detail

/// Closed-form second variation of the objective when Omega moves by t v and
/// Omega' by sign(rho) t v, for unit v in one dimension:
///   (1 - 1/|rho|) sum_{i<j} [ sum_{Sigma'_ij} |d/dx T(sum_k u_ijk 1_{Omega_k})| gamma
///                            + sum_{Sigma_ij} |d/dx T(sum_k u'_ijk 1_{Omega'_k})| gamma ]
///   + sum_ij d_ij (A_ij + sign(rho) B_ij)^2,
/// where A_ij = sum_{x in dOmega_i} T1_{Omega'_j}(x) N_i(x) v gamma(x) and B_ij is
/// the same with the roles of the partitions swapped.
inline double translation_second_variation(const IntervalPair& parts, const Correlation& rho,
                                           const QuadraticObjective& obj, double v = 1.0) {
  rho.require_nonzero("translation_second_variation");
  if (std::abs(std::abs(v) - 1.0) > 1e-12) throw InvalidArgument("translation_second_variation: v must be a unit");
  const std::size_t m = obj.outcomes();
  const auto s = partition_stability(parts, m, rho);
  const auto u = u_coefficients(s, obj);
  const double sg = rho.sign();

  double curvature = 0.0;
  std::vector<double> w(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      for (std::size_t k = 0; k < m; ++k) w[k] = u.u(i, j, k);
      for (const auto& [x, o] : detail::oriented_interface(parts.omega_prime, static_cast<int>(i), static_cast<int>(j)))
        curvature += std::abs(detail::ou_field_slope(parts.omega, w, rho, x)) * normal_pdf(x);
      for (std::size_t k = 0; k < m; ++k) w[k] = u.u_prime(i, j, k);
      for (const auto& [x, o] : detail::oriented_interface(parts.omega, static_cast<int>(i), static_cast<int>(j)))
        curvature += std::abs(detail::ou_field_slope(parts.omega_prime, w, rho, x)) * normal_pdf(x);
    }
  double value = (1.0 - 1.0 / std::abs(rho.value())) * curvature * v * v;

  // A_ij and B_ij: first derivatives of s_ij under each translation.
  std::vector<double> a(m * m, 0.0), b(m * m, 0.0), ind(m);
  for (bool primed : {false, true}) {
    const auto& own = primed ? parts.omega_prime : parts.omega;
    const auto& other = primed ? parts.omega : parts.omega_prime;
    auto& acc = primed ? b : a;
    for (std::size_t r = 0; r < own.breaks().size(); ++r) {
      const double x = own.breaks()[r];
      const auto left = static_cast<std::size_t>(own.labels()[r]);
      const auto right = static_cast<std::size_t>(own.labels()[r + 1]);
      for (std::size_t l = 0; l < m; ++l) {
        std::fill(ind.begin(), ind.end(), 0.0);
        ind[l] = 1.0;
        const double t = ou_interval_field(other, ind, rho, x) * v * normal_pdf(x);
        // Exterior normal is +1 at the right end of the left interval.
        const std::size_t el = primed ? l * m + left : left * m + l;
        const std::size_t er = primed ? l * m + right : right * m + l;
        acc[el] += t;
        acc[er] -= t;
      }
    }
  }
  for (std::size_t e = 0; e < m * m; ++e) value += obj.weights()[e] * (a[e] + sg * b[e]) * (a[e] + sg * b[e]);
  return value;
}

/// Half the central second difference of the objective under the same
/// translation, with step h.
inline double translation_second_difference(const IntervalPair& parts, const Correlation& rho,
                                            const QuadraticObjective& obj, double v = 1.0, double h = 1e-3) {
  const double sg = rho.sign();
  auto at = [&](double t) {
    return eval_objective(IntervalPair{parts.omega.shifted(t * v), parts.omega_prime.shifted(sg * t * v)}, rho, obj);
  };
  return 0.5 * (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
}

struct EigenIdentityReport {
  double max_residual = 0.0;   ///< max |S_ij(<v,N>)(x) + <v,N'_ij(x)> (1/rho) |grad T(...)(x)||
  double max_magnitude = 0.0;  ///< max |S_ij(<v,N>)(x)| over the same points
  std::size_t samples = 0;
  double first_variation = 0.0;  ///< max |dF/db| over all breaks
  bool precondition_met = false;
};

/// Compares both sides of the translation identity at every interface point:
///   S_ij(<v,N>)(x) = (1-rho^2)^{-1/2} (2 pi)^{-1/2}
///       sum_k u_ijk sum_{y in dOmega_k} <v, N_k(y)> exp(-(y - rho x)^2 / (2 (1-rho^2)))
/// against -<v, N'_ij(x)> (1/rho) |d/dx T(sum_k u_ijk 1_{Omega_k})(x)| on
/// Sigma'_ij, and the primed analogue (with sign(rho) v) on Sigma_ij.
inline EigenIdentityReport translation_eigen_identity_check(const IntervalPair& parts, const Correlation& rho,
                                                            const QuadraticObjective& obj, double v = 1.0,
                                                            double stationarity_tolerance = 1e-6) {
  rho.require_nonzero("translation_eigen_identity_check");
  const std::size_t m = obj.outcomes();
  const auto s = partition_stability(parts, m, rho);
  const auto u = u_coefficients(s, obj);
  const double r = rho.value();
  const double sig = rho.sigma();
  const double norm = 1.0 / (sig * std::sqrt(2.0 * std::numbers::pi));

  EigenIdentityReport rep;
  const auto g = objective_gradient(parts, rho, obj);
  for (double x : g) rep.first_variation = std::max(rep.first_variation, std::abs(x));
  rep.precondition_met = rep.first_variation <= stationarity_tolerance;

  std::vector<double> w(m);
  for (bool primed : {false, true}) {
    // Field built on `src`, checked on interfaces of `dst`.
    const auto& src = primed ? parts.omega_prime : parts.omega;
    const auto& dst = primed ? parts.omega : parts.omega_prime;
    const double dir = primed ? rho.sign() * v : v;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) {
        for (std::size_t k = 0; k < m; ++k) w[k] = primed ? u.u_prime(i, j, k) : u.u(i, j, k);
        for (const auto& [x, orient] : detail::oriented_interface(dst, static_cast<int>(i), static_cast<int>(j))) {
          double lhs = 0.0;
          for (std::size_t b = 0; b < src.breaks().size(); ++b) {
            const double y = src.breaks()[b];
            const double kern = std::exp(-(y - r * x) * (y - r * x) / (2.0 * sig * sig));
            // y is the right end of interval b and the left end of b + 1.
            lhs += w[static_cast<std::size_t>(src.labels()[b])] * dir * kern;
            lhs -= w[static_cast<std::size_t>(src.labels()[b + 1])] * dir * kern;
          }
          lhs *= norm;
          const double rhs = -dir * orient / r * std::abs(detail::ou_field_slope(src, w, rho, x));
          rep.max_residual = std::max(rep.max_residual, std::abs(lhs - rhs));
          rep.max_magnitude = std::max(rep.max_magnitude, std::abs(lhs));
          ++rep.samples;
        }
      }
  }
  return rep;
}

/// Grid overloads for one-dimensional partitions.
inline double translation_second_variation(const PartitionGrid& parts, const Correlation& rho,
                                           const QuadraticObjective& obj, double v = 1.0) {
  return translation_second_variation(IntervalPair::from_grid(parts), rho, obj, v);
}

inline EigenIdentityReport translation_eigen_identity_check(const PartitionGrid& parts, const Correlation& rho,
                                                            const QuadraticObjective& obj, double v = 1.0,
                                                            double stationarity_tolerance = 1e-6) {
  return translation_eigen_identity_check(IntervalPair::from_grid(parts), rho, obj, v, stationarity_tolerance);
}

}  // namespace nisim
