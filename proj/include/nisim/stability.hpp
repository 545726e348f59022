#pragma once

// Simplex-valued piecewise-constant functions and the bilinear noise
// stability matrix C_rho(f, g)_{ij} = E f_i(X) g_j(Y), computed three ways:
// exact cellwise integration, Monte Carlo, and Hermite-coefficient
// contraction. Also the coefficient metrics, total variation and the m = 2
// Borell interval.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nisim/error.hpp"
#include "nisim/gausscore.hpp"
#include "nisim/parallel.hpp"

namespace nisim {

inline constexpr std::size_t kMaxOutcomes = 6;

inline void warn(const std::string& message) { std::clog << "nisim: warning: " << message << '\n'; }

// ---------------------------------------------------------------------------
// Simplex points

/// A probability vector on m outcomes.
class SimplexPoint {
 public:
  SimplexPoint() = default;
  explicit SimplexPoint(std::vector<double> coords, double tol = 1e-12) : coords_(std::move(coords)) {
    if (coords_.empty()) throw InvalidArgument("SimplexPoint: empty coordinate vector");
    double sum = 0.0;
    for (double c : coords_) {
      if (!std::isfinite(c) || c < 0.0) throw DataError("SimplexPoint: negative or non-finite coordinate");
      sum += c;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw DataError("SimplexPoint: coordinates must sum to 1", "sum=" + std::to_string(sum));
    }
  }

  static SimplexPoint vertex(std::size_t m, std::size_t i) {
    std::vector<double> v(m, 0.0);
    v.at(i) = 1.0;
    return SimplexPoint(std::move(v));
  }
  static SimplexPoint uniform(std::size_t m) { return SimplexPoint(std::vector<double>(m, 1.0 / m), 1e-12); }

  std::size_t size() const noexcept { return coords_.size(); }
  double operator[](std::size_t i) const { return coords_[i]; }
  std::span<const double> coords() const noexcept { return coords_; }

  friend bool operator==(const SimplexPoint&, const SimplexPoint&) = default;

 private:
  std::vector<double> coords_;
};

// ---------------------------------------------------------------------------
// Grid

/// Axis-aligned box grid on R^k: each axis has `cells_per_axis` equal cells on
/// [-R, R] plus two unbounded tail cells. Cells are flattened row-major with
/// the last axis varying fastest.
class CellGrid {
 public:
  CellGrid(std::size_t dimension, double radius, std::size_t cells_per_axis)
      : dimension_(dimension), radius_(radius), cells_(cells_per_axis) {
    if (dimension_ < 1 || dimension_ > 8) throw InvalidArgument("CellGrid: dimension must be in [1, 8]");
    if (!(radius_ > 0.0) || !std::isfinite(radius_)) throw InvalidArgument("CellGrid: radius must be positive");
    if (cells_ < 1) throw InvalidArgument("CellGrid: cells_per_axis must be >= 1");
    const double count = std::pow(static_cast<double>(cells_ + 2), static_cast<double>(dimension_));
    if (count > 5e7) throw InvalidArgument("CellGrid: too many cells");
    cell_count_ = static_cast<std::size_t>(count);
  }

  std::size_t dimension() const noexcept { return dimension_; }
  double radius() const noexcept { return radius_; }
  std::size_t cells_per_axis() const noexcept { return cells_; }
  /// Cells along one axis including the two tails.
  std::size_t axis_cells() const noexcept { return cells_ + 2; }
  std::size_t cell_count() const noexcept { return cell_count_; }
  double width() const noexcept { return 2.0 * radius_ / static_cast<double>(cells_); }

  /// Axis edges -inf, -R, ..., R, +inf (axis_cells() + 1 values).
  std::vector<double> edges() const {
    std::vector<double> e(cells_ + 3);
    e.front() = -std::numeric_limits<double>::infinity();
    e.back() = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= cells_; ++i) e[i + 1] = edge(i);
    return e;
  }
  /// Finite edge number i in [0, cells_per_axis], i.e. -R + i * width.
  double edge(std::size_t i) const {
    return i == cells_ ? radius_ : -radius_ + static_cast<double>(i) * width();
  }

  /// Axis cell containing x; points on an edge belong to the upper cell.
  std::size_t axis_cell(double x) const {
    if (x < -radius_) return 0;
    if (x >= radius_) return cells_ + 1;
    auto i = static_cast<std::size_t>(std::floor((x + radius_) / width()));
    i = std::min(i, cells_ - 1);
    // Guard against rounding in the division.
    if (x < edge(i)) --i;
    else if (i + 1 < cells_ && x >= edge(i + 1)) ++i;
    return i + 1;
  }

  std::size_t cell_of(std::span<const double> x) const {
    if (x.size() != dimension_) throw InvalidArgument("CellGrid::cell_of: dimension mismatch");
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dimension_; ++a) flat = flat * axis_cells() + axis_cell(x[a]);
    return flat;
  }

  std::vector<std::size_t> unflatten(std::size_t flat) const {
    std::vector<std::size_t> idx(dimension_);
    for (std::size_t a = dimension_; a-- > 0;) {
      idx[a] = flat % axis_cells();
      flat /= axis_cells();
    }
    return idx;
  }
  std::size_t flatten(std::span<const std::size_t> idx) const {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dimension_; ++a) flat = flat * axis_cells() + idx[a];
    return flat;
  }

  /// Representative coordinate of an axis cell (tails use R + width/2).
  double axis_center(std::size_t i) const {
    if (i == 0) return -radius_ - 0.5 * width();
    if (i == cells_ + 1) return radius_ + 0.5 * width();
    return -radius_ + (static_cast<double>(i) - 0.5) * width();
  }

  friend bool operator==(const CellGrid& a, const CellGrid& b) {
    return a.dimension_ == b.dimension_ && a.radius_ == b.radius_ && a.cells_ == b.cells_;
  }

 private:
  std::size_t dimension_;
  double radius_;
  std::size_t cells_;
  std::size_t cell_count_ = 0;
};

// ---------------------------------------------------------------------------
// Cell functions

/// Piecewise-constant map R^k -> Delta_m on a CellGrid.
class CellFunction {
 public:
  /// `values` holds cell_count() * m entries, row-major by cell.
  CellFunction(CellGrid grid, std::size_t m, std::vector<double> values)
      : grid_(std::move(grid)), m_(m), values_(std::move(values)) {
    if (m_ < 2 || m_ > kMaxOutcomes) throw InvalidArgument("CellFunction: m must be in [2, 6]");
    if (values_.size() != grid_.cell_count() * m_) {
      throw DataError("CellFunction: expected " + std::to_string(grid_.cell_count() * m_) + " values, got " +
                      std::to_string(values_.size()));
    }
    for (std::size_t c = 0; c < grid_.cell_count(); ++c) {
      double sum = 0.0;
      for (std::size_t i = 0; i < m_; ++i) {
        const double v = values_[c * m_ + i];
        if (!std::isfinite(v) || v < 0.0) throw DataError("CellFunction: cell value outside the simplex");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-12) {
        throw DataError("CellFunction: cell value does not sum to 1", "cell=" + std::to_string(c));
      }
    }
  }

  static CellFunction constant(const CellGrid& grid, const SimplexPoint& v) {
    std::vector<double> vals;
    vals.reserve(grid.cell_count() * v.size());
    for (std::size_t c = 0; c < grid.cell_count(); ++c) vals.insert(vals.end(), v.coords().begin(), v.coords().end());
    return CellFunction(grid, v.size(), std::move(vals));
  }

  /// Vertex-valued function: cell c maps to e_{labels[c]}.
  static CellFunction from_labels(const CellGrid& grid, std::size_t m, std::span<const int> labels) {
    if (labels.size() != grid.cell_count()) throw DataError("CellFunction::from_labels: label count mismatch");
    std::vector<double> vals(grid.cell_count() * m, 0.0);
    for (std::size_t c = 0; c < labels.size(); ++c) {
      if (labels[c] < 0 || static_cast<std::size_t>(labels[c]) >= m) throw DataError("label out of range");
      vals[c * m + static_cast<std::size_t>(labels[c])] = 1.0;
    }
    return CellFunction(grid, m, std::move(vals));
  }

  const CellGrid& grid() const noexcept { return grid_; }
  std::size_t outcomes() const noexcept { return m_; }
  const std::vector<double>& values() const noexcept { return values_; }

  std::span<const double> cell_value(std::size_t cell) const { return {values_.data() + cell * m_, m_}; }
  std::span<const double> operator()(std::span<const double> x) const { return cell_value(grid_.cell_of(x)); }

  friend bool operator==(const CellFunction& a, const CellFunction& b) {
    return a.grid_ == b.grid_ && a.m_ == b.m_ && a.values_ == b.values_;
  }

 private:
  CellGrid grid_;
  std::size_t m_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Distribution matrices

/// An m x m joint distribution; entries row-major.
class DistributionMatrix {
 public:
  DistributionMatrix() = default;

  /// Validates an externally supplied matrix: entries >= -1e-10 (clamped to 0)
  /// and total mass 1 +- 1e-9.
  DistributionMatrix(std::size_t m, std::vector<double> entries) : m_(m), entries_(std::move(entries)) {
    if (m_ < 2 || m_ > kMaxOutcomes) throw DataError("DistributionMatrix: m must be in [2, 6]");
    if (entries_.size() != m_ * m_) throw DataError("DistributionMatrix: expected m*m entries");
    double sum = 0.0;
    for (double& e : entries_) {
      if (!std::isfinite(e) || e < -1e-10) throw DataError("DistributionMatrix: negative or non-finite entry");
      if (e < 0.0) e = 0.0;
      sum += e;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DataError("DistributionMatrix: entries must sum to 1", "sum=" + std::to_string(sum));
    }
  }

  /// Wraps a numerically computed matrix, clamping small negative entries.
  static DistributionMatrix from_computation(std::size_t m, std::vector<double> raw) {
    double worst = 0.0;
    for (double& e : raw) {
      worst = std::min(worst, e);
      if (e < 0.0) e = 0.0;
    }
    if (worst < -1e-6) warn("clamped a negative distribution entry " + std::to_string(worst));
    try {
      return DistributionMatrix(m, std::move(raw));
    } catch (const DataError& e) {
      throw NumericError(std::string("computed distribution is invalid: ") + e.what(), e.context());
    }
  }

  std::size_t size() const noexcept { return m_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * m_ + j]; }
  const std::vector<double>& entries() const noexcept { return entries_; }

  std::vector<double> row_sums() const {
    std::vector<double> r(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      for (std::size_t j = 0; j < m_; ++j) r[i] += (*this)(i, j);
    return r;
  }
  std::vector<double> column_sums() const {
    std::vector<double> c(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      for (std::size_t j = 0; j < m_; ++j) c[j] += (*this)(i, j);
    return c;
  }

  static DistributionMatrix product(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("DistributionMatrix::product: marginal size mismatch");
    std::vector<double> e(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) e[i * b.size() + j] = a[i] * b[j];
    return DistributionMatrix(a.size(), std::move(e));
  }

  friend bool operator==(const DistributionMatrix&, const DistributionMatrix&) = default;

 private:
  std::size_t m_ = 0;
  std::vector<double> entries_;
};

/// Total variation distance, half the entrywise l1 distance.
inline double tv_distance(const DistributionMatrix& p, const DistributionMatrix& q) {
  if (p.size() != q.size()) throw InvalidArgument("tv_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.entries().size(); ++i) s += std::abs(p.entries()[i] - q.entries()[i]);
  return std::min(1.0, 0.5 * s);
}

/// Entrywise l2 distance, the alternative matrix metric.
inline double l2_distance(const DistributionMatrix& p, const DistributionMatrix& q) {
  if (p.size() != q.size()) throw InvalidArgument("l2_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.entries().size(); ++i) {
    const double d = p.entries()[i] - q.entries()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Tensor helpers

/// Applies `mat` (rows x cols) along every axis of a tensor with `k` axes of
/// length cols and a trailing axis of length m. Output has `rows` per axis.
inline std::vector<double> contract_axes(const Eigen::MatrixXd& mat, std::size_t k, std::size_t m,
                                         std::span<const double> in) {
  const auto rows = static_cast<std::size_t>(mat.rows());
  const auto cols = static_cast<std::size_t>(mat.cols());
  std::vector<double> cur(in.begin(), in.end());
  // Layout: (axis_0, ..., axis_{k-1}, m). After processing axis a, axes < a+1
  // have length rows and the rest cols.
  for (std::size_t a = 0; a < k; ++a) {
    std::size_t outer = 1;
    for (std::size_t b = 0; b < a; ++b) outer *= rows;
    std::size_t inner = m;
    for (std::size_t b = a + 1; b < k; ++b) inner *= cols;
    if (cur.size() != outer * cols * inner) throw NumericError("contract_axes: tensor size mismatch");
    std::vector<double> next(outer * rows * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < rows; ++r) {
        double* dst = next.data() + (o * rows + r) * inner;
        for (std::size_t c = 0; c < cols; ++c) {
          const double w = mat(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
          if (w == 0.0) continue;
          const double* src = cur.data() + (o * cols + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += w * src[i];
        }
      }
    }
    cur.swap(next);
  }
  return cur;
}

/// Per-axis joint cell probabilities P(X in I_a, Y in I_b) for one coordinate
/// of a rho-correlated pair, plus the marginal cell masses.
struct AxisKernel {
  Eigen::MatrixXd joint;
  std::vector<double> mass;
};

inline AxisKernel axis_kernel(const CellGrid& grid, const Correlation& rho) {
  const std::vector<double> e = grid.edges();
  const std::size_t n = grid.axis_cells();
  Eigen::MatrixXd corner(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n + 1));
  for (std::size_t i = 0; i <= n; ++i) {
    for (std::size_t j = i; j <= n; ++j) {
      const double v = bvn_orthant(e[i], e[j], rho);
      corner(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      corner(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  AxisKernel k;
  k.joint.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const auto A = static_cast<Eigen::Index>(a);
      const auto B = static_cast<Eigen::Index>(b);
      const double v = corner(A + 1, B + 1) - corner(A, B + 1) - corner(A + 1, B) + corner(A, B);
      k.joint(A, B) = std::max(0.0, v);
    }
  }
  k.mass.resize(n);
  for (std::size_t a = 0; a < n; ++a) {
    k.mass[a] = detail::normal_cdf_extended(e[a + 1]) - detail::normal_cdf_extended(e[a]);
  }
  return k;
}

/// Expected value of each component of f, i.e. its gamma-masses.
inline std::vector<double> component_masses(const CellFunction& f) {
  const CellGrid& grid = f.grid();
  const std::vector<double> e = grid.edges();
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(grid.axis_cells()));
  for (std::size_t a = 0; a < grid.axis_cells(); ++a) {
    row(0, static_cast<Eigen::Index>(a)) = detail::normal_cdf_extended(e[a + 1]) - detail::normal_cdf_extended(e[a]);
  }
  return contract_axes(row, grid.dimension(), f.outcomes(), f.values());
}

namespace detail {

inline void require_compatible(const CellFunction& f, const CellFunction& g, const char* what) {
  if (!(f.grid() == g.grid())) throw InvalidArgument(std::string(what) + ": f and g live on different grids");
  if (f.outcomes() != g.outcomes()) throw InvalidArgument(std::string(what) + ": f and g have different m");
}

inline std::vector<double> bilinear(std::size_t cells, std::size_t m, std::span<const double> f,
                                    std::span<const double> tg) {
  std::vector<double> c(m * m, 0.0);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const double* fr = f.data() + cell * m;
    const double* ur = tg.data() + cell * m;
    for (std::size_t i = 0; i < m; ++i) {
      if (fr[i] == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c[i * m + j] += fr[i] * ur[j];
    }
  }
  return c;
}

}  // namespace detail

/// C_rho(f, g) by exact integration over the product of cells: each pair of
/// cells contributes f(a) g(b)^T times the product over axes of the bivariate
/// rectangle probabilities, which come from Gauss-Legendre bvn_orthant.
inline DistributionMatrix crho_quadrature(const CellFunction& f, const CellFunction& g, const Correlation& rho,
                                          const AxisKernel* cached = nullptr) {
  detail::require_compatible(f, g, "crho_quadrature");
  const AxisKernel local = cached ? AxisKernel{} : axis_kernel(f.grid(), rho);
  const AxisKernel& kern = cached ? *cached : local;
  const std::size_t m = f.outcomes();
  const std::vector<double> tg = contract_axes(kern.joint, f.grid().dimension(), m, g.values());
  return DistributionMatrix::from_computation(m, detail::bilinear(f.grid().cell_count(), m, f.values(), tg));
}

// ---------------------------------------------------------------------------
// Monte Carlo

struct MonteCarloEstimate {
  DistributionMatrix matrix;
  std::vector<double> standard_error;  ///< per entry, row-major

  double max_standard_error() const {
    return standard_error.empty() ? 0.0 : *std::max_element(standard_error.begin(), standard_error.end());
  }
};

inline constexpr std::size_t kMonteCarloShard = 1u << 16;

/// Unbiased sample-mean estimate of C_rho(f, g) from pairs (X, rho X +
/// sqrt(1-rho^2) Z). Samples are drawn in fixed-size shards whose generators
/// are seeded from (seed, shard), so results are identical for any thread count.
inline MonteCarloEstimate crho_montecarlo(const CellFunction& f, const CellFunction& g, const Correlation& rho,
                                          std::size_t n_samples, std::uint64_t seed, unsigned threads = 1) {
  detail::require_compatible(f, g, "crho_montecarlo");
  if (n_samples < 1000) throw InvalidArgument("crho_montecarlo: need at least 1000 samples");
  const std::size_t m = f.outcomes();
  const std::size_t k = f.grid().dimension();
  const std::size_t shards = (n_samples + kMonteCarloShard - 1) / kMonteCarloShard;
  struct Partial {
    std::vector<double> sum, sumsq;
  };
  const double r = rho.value();
  const double s = rho.sigma();
  auto partials = ordered_map<Partial>(shards, threads, [&](std::size_t shard) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(shard), static_cast<std::uint32_t>(shard >> 32)};
    std::mt19937_64 gen(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t begin = shard * kMonteCarloShard;
    const std::size_t end = std::min(n_samples, begin + kMonteCarloShard);
    Partial p{std::vector<double>(m * m, 0.0), std::vector<double>(m * m, 0.0)};
    std::vector<double> x(k), y(k);
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t a = 0; a < k; ++a) {
        x[a] = normal(gen);
        y[a] = r * x[a] + s * normal(gen);
      }
      const auto fx = f(x);
      const auto gy = g(y);
      for (std::size_t a = 0; a < m; ++a) {
        if (fx[a] == 0.0) continue;
        for (std::size_t b = 0; b < m; ++b) {
          const double v = fx[a] * gy[b];
          p.sum[a * m + b] += v;
          p.sumsq[a * m + b] += v * v;
        }
      }
    }
    return p;
  });
  std::vector<double> sum(m * m, 0.0), sumsq(m * m, 0.0);
  for (const auto& p : partials) {
    for (std::size_t e = 0; e < m * m; ++e) {
      sum[e] += p.sum[e];
      sumsq[e] += p.sumsq[e];
    }
  }
  const double n = static_cast<double>(n_samples);
  std::vector<double> mean(m * m), se(m * m);
  for (std::size_t e = 0; e < m * m; ++e) {
    mean[e] = sum[e] / n;
    const double var = std::max(0.0, (sumsq[e] / n - mean[e] * mean[e]) * n / (n - 1.0));
    se[e] = std::sqrt(var / n);
  }
  return {DistributionMatrix::from_computation(m, std::move(mean)), std::move(se)};
}

// ---------------------------------------------------------------------------
// Hermite coefficients

/// Truncated coefficient table H(f)_j = int f h_j dgamma for |j|_1 <= d, one
/// m-vector per multi-index.
class HermiteCoefficients {
 public:
  HermiteCoefficients(std::size_t dimension, int degree_cap, std::size_t m, std::vector<double> table)
      : dimension_(dimension), cap_(degree_cap), m_(m), indices_(multi_indices(dimension, degree_cap)),
        table_(std::move(table)) {
    if (table_.size() != indices_.size() * m_) throw DataError("HermiteCoefficients: table size mismatch");
    for (std::size_t i = 0; i < indices_.size(); ++i) lookup_.emplace(indices_[i], i);
  }

  std::size_t dimension() const noexcept { return dimension_; }
  int degree_cap() const noexcept { return cap_; }
  std::size_t outcomes() const noexcept { return m_; }
  const std::vector<MultiIndex>& indices() const noexcept { return indices_; }
  const std::vector<double>& table() const noexcept { return table_; }

  std::span<const double> coefficient(std::size_t position) const { return {table_.data() + position * m_, m_}; }
  std::span<const double> coefficient(const MultiIndex& j) const {
    auto it = lookup_.find(j);
    if (it == lookup_.end()) throw InvalidArgument("HermiteCoefficients: index outside the table");
    return coefficient(it->second);
  }
  /// The zero-index coefficient, i.e. the mean vector of f.
  std::span<const double> mean() const { return coefficient(0); }

 private:
  std::size_t dimension_;
  int cap_;
  std::size_t m_;
  std::vector<MultiIndex> indices_;
  std::vector<double> table_;
  std::map<MultiIndex, std::size_t> lookup_;
};

namespace detail {

// A(n, a) = int_{I_a} h_n dgamma. For n >= 1 the antiderivative of h_n phi is
// -h_{n-1} phi / sqrt(n).
inline Eigen::MatrixXd cell_hermite_integrals(const CellGrid& grid, int d) {
  const std::vector<double> e = grid.edges();
  const std::size_t n = grid.axis_cells();
  Eigen::MatrixXd a(d + 1, static_cast<Eigen::Index>(n));
  std::vector<std::vector<double>> at_edge(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (std::isfinite(e[i])) at_edge[i] = hermite_table(d, e[i]);
  }
  auto edge_term = [&](std::size_t i, int deg) {
    if (!std::isfinite(e[i])) return 0.0;
    return at_edge[i][static_cast<std::size_t>(deg - 1)] * normal_pdf(e[i]) / std::sqrt(static_cast<double>(deg));
  };
  for (std::size_t c = 0; c < n; ++c) {
    const auto C = static_cast<Eigen::Index>(c);
    a(0, C) = normal_cdf_extended(e[c + 1]) - normal_cdf_extended(e[c]);
    for (int deg = 1; deg <= d; ++deg) a(deg, C) = edge_term(c, deg) - edge_term(c + 1, deg);
  }
  return a;
}

inline std::vector<double> select_total_degree(const std::vector<double>& full, std::size_t k, int d, std::size_t m) {
  const auto indices = multi_indices(k, d);
  std::vector<double> out;
  out.reserve(indices.size() * m);
  const auto side = static_cast<std::size_t>(d + 1);
  for (const auto& j : indices) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < k; ++a) flat = flat * side + static_cast<std::size_t>(j[a]);
    out.insert(out.end(), full.begin() + static_cast<std::ptrdiff_t>(flat * m),
               full.begin() + static_cast<std::ptrdiff_t>((flat + 1) * m));
  }
  return out;
}

}  // namespace detail

/// H(f) for a cell function, with every cell integral in closed form.
inline HermiteCoefficients hermite_coeffs(const CellFunction& f, int d) {
  if (d < 0) throw InvalidArgument("hermite_coeffs: degree cap must be >= 0");
  const std::size_t k = f.grid().dimension();
  if (std::pow(static_cast<double>(d + 1), static_cast<double>(k)) > 1e7) {
    throw InvalidArgument("hermite_coeffs: coefficient budget exceeded");
  }
  const Eigen::MatrixXd a = detail::cell_hermite_integrals(f.grid(), d);
  const auto full = contract_axes(a, k, f.outcomes(), f.values());
  return HermiteCoefficients(k, d, f.outcomes(), detail::select_total_degree(full, k, d, f.outcomes()));
}

/// H(f) for an arbitrary vector-valued f by quadrature; f(x) returns m values.
template <typename F>
HermiteCoefficients hermite_coeffs(F&& f, std::size_t m, int d, const QuadratureRule& rule) {
  const auto indices = multi_indices(rule.dimension, d);
  std::vector<double> table(indices.size() * m, 0.0);
  for (std::size_t p = 0; p < rule.size(); ++p) {
    const auto x = rule.point(p);
    const std::vector<double> v = f(x);
    if (v.size() != m) throw InvalidArgument("hermite_coeffs: function returned the wrong number of components");
    std::vector<std::vector<double>> tables(x.size());
    for (std::size_t a = 0; a < x.size(); ++a) tables[a] = hermite_table(d, x[a]);
    for (std::size_t q = 0; q < indices.size(); ++q) {
      double h = rule.weights[p];
      for (std::size_t a = 0; a < x.size(); ++a) h *= tables[a][static_cast<std::size_t>(indices[q][a])];
      for (std::size_t i = 0; i < m; ++i) table[q * m + i] += h * v[i];
    }
  }
  return HermiteCoefficients(rule.dimension, d, m, std::move(table));
}

namespace detail {
inline void require_same_table(const HermiteCoefficients& a, const HermiteCoefficients& b, const char* what) {
  if (a.dimension() != b.dimension() || a.degree_cap() != b.degree_cap() || a.outcomes() != b.outcomes()) {
    throw InvalidArgument(std::string(what) + ": coefficient tables have different dimension, cap or m");
  }
}
}  // namespace detail

/// C_rho(f, g)_{ij} ~ sum_l rho^{|l|} F_i(l) G_j(l), exact up to the truncation.
inline DistributionMatrix crho_from_coeffs(const HermiteCoefficients& f, const HermiteCoefficients& g,
                                           const Correlation& rho) {
  detail::require_same_table(f, g, "crho_from_coeffs");
  const std::size_t m = f.outcomes();
  std::vector<double> c(m * m, 0.0);
  for (std::size_t q = 0; q < f.indices().size(); ++q) {
    const double w = std::pow(rho.value(), f.indices()[q].degree());
    const auto fi = f.coefficient(q);
    const auto gj = g.coefficient(q);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) c[i * m + j] += w * fi[i] * gj[j];
  }
  return DistributionMatrix::from_computation(m, std::move(c));
}

/// d_rho(f, g) = (sum_j |rho|^{|j|} |F(j) - G(j)|^2)^{1/2}, summing squares over
/// the m components and truncating at the shared cap.
inline double drho_metric(const HermiteCoefficients& f, const HermiteCoefficients& g, const Correlation& rho) {
  detail::require_same_table(f, g, "drho_metric");
  const double ar = std::abs(rho.value());
  double s = 0.0;
  for (std::size_t q = 0; q < f.indices().size(); ++q) {
    const double w = std::pow(ar, f.indices()[q].degree());
    const auto a = f.coefficient(q);
    const auto b = g.coefficient(q);
    for (std::size_t i = 0; i < f.outcomes(); ++i) s += w * (a[i] - b[i]) * (a[i] - b[i]);
  }
  return std::sqrt(s);
}

/// Unweighted l2 distance between coefficient tables.
inline double coefficient_distance(const HermiteCoefficients& f, const HermiteCoefficients& g) {
  detail::require_same_table(f, g, "coefficient_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < f.table().size(); ++i) {
    const double d = f.table()[i] - g.table()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Borell interval for m = 2

struct BorellBounds {
  double c_lo;
  double c_hi;
};

/// The exact range of E f_1(X) g_1(Y) over f, g with E f_1 = a, E g_1 = b,
/// attained by half-lines (aligned for the upper end when rho > 0, opposed for
/// the lower end; the roles swap when rho < 0).
inline BorellBounds borell_bounds(double a, double b, const Correlation& rho) {
  if (!(a > 0.0 && a < 1.0) || !(b > 0.0 && b < 1.0)) {
    throw InvalidArgument("borell_bounds: marginals must lie strictly inside (0, 1)");
  }
  if (rho.value() == 0.0) return {a * b, a * b};
  const double qa = normal_quantile(a);
  const double qb = normal_quantile(b);
  const double aligned = bvn_orthant(qa, qb, rho);
  const double opposed = b - bvn_orthant(-qa, qb, rho);
  BorellBounds out = rho.value() > 0 ? BorellBounds{opposed, aligned} : BorellBounds{aligned, opposed};
  out.c_lo = std::max(out.c_lo, std::max(0.0, a + b - 1.0));
  out.c_hi = std::min(out.c_hi, std::min(a, b));
  return out;
}

}  // namespace nisim
