#pragma once

// Scalar and low-dimensional Gaussian analysis: normal CDF/quantile,
// orthonormal Hermite polynomials, tensor Gauss-Hermite rules, the
// Ornstein-Uhlenbeck operator T_rho, the correlated kernel G and the
// bivariate normal orthant probability.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nisim/error.hpp"

namespace nisim {

/// Correlation parameter of a rho-correlated standard Gaussian pair, |rho| < 1.
class Correlation {
 public:
  explicit Correlation(double rho) : rho_(rho) {
    if (!std::isfinite(rho) || !(std::abs(rho) < 1.0)) {
      throw InvalidArgument("correlation must satisfy |rho| < 1",
                            "rho=" + std::to_string(rho));
    }
  }

  double value() const noexcept { return rho_; }
  /// sqrt(1 - rho^2), the conditional standard deviation of Y given X.
  double sigma() const noexcept { return std::sqrt((1.0 - rho_) * (1.0 + rho_)); }
  double sign() const noexcept { return rho_ > 0 ? 1.0 : (rho_ < 0 ? -1.0 : 0.0); }

  /// Operations that divide by rho call this first.
  void require_nonzero(const char* what) const {
    if (rho_ == 0.0) throw InvalidArgument(std::string(what) + " requires rho != 0");
  }

 private:
  double rho_;
};

inline double normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Phi(x). Rejects NaN and infinities; bvn_orthant handles its own sentinels.
inline double normal_cdf(double x) {
  if (!std::isfinite(x)) throw InvalidArgument("normal_cdf: non-finite argument");
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

namespace detail {

inline double normal_cdf_extended(double x) noexcept {
  if (x == std::numeric_limits<double>::infinity()) return 1.0;
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

// Acklam's rational approximation, relative error ~1e-9 before refinement.
inline double quantile_initial(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

/// Phi^{-1}(p) for 0 < p < 1. The endpoints would need infinite sentinels and
/// are rejected explicitly.
inline double normal_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw InvalidArgument("normal_quantile: probability outside [0,1]", "p=" + std::to_string(p));
  }
  if (p == 0.0 || p == 1.0) {
    throw InvalidArgument("normal_quantile: p in {0,1} maps to an infinite quantile",
                          "p=" + std::to_string(p));
  }
  if (p > 0.5) return -normal_quantile(1.0 - p);
  double x = detail::quantile_initial(p);
  // Halley refinement against the erfc-based CDF.
  for (int it = 0; it < 3; ++it) {
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e / normal_pdf(x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Hermite basis

/// Multi-index j in N^k with degree |j|_1.
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw InvalidArgument("MultiIndex: dimension must be >= 1");
    for (int e : entries_) {
      if (e < 0) throw InvalidArgument("MultiIndex: entries must be nonnegative");
    }
  }

  std::size_t dimension() const noexcept { return entries_.size(); }
  int degree() const noexcept { return std::accumulate(entries_.begin(), entries_.end(), 0); }
  int operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<int>& entries() const noexcept { return entries_; }

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
  friend auto operator<=>(const MultiIndex&, const MultiIndex&) = default;

 private:
  std::vector<int> entries_;
};

/// All multi-indices in dimension k with degree <= d, ordered by degree and
/// then lexicographically (first axis most significant).
inline std::vector<MultiIndex> multi_indices(std::size_t k, int d) {
  if (k == 0) throw InvalidArgument("multi_indices: dimension must be >= 1");
  if (d < 0) throw InvalidArgument("multi_indices: degree cap must be >= 0");
  std::vector<MultiIndex> out;
  std::vector<int> cur(k, 0);
  for (int deg = 0; deg <= d; ++deg) {
    // Compositions of deg into k parts, lexicographically descending on axis 0.
    auto rec = [&](auto&& self, std::size_t axis, int remaining) -> void {
      if (axis + 1 == k) {
        cur[axis] = remaining;
        out.emplace_back(cur);
        return;
      }
      for (int v = remaining; v >= 0; --v) {
        cur[axis] = v;
        self(self, axis + 1, remaining - v);
      }
    };
    rec(rec, 0, deg);
  }
  return out;
}

/// h_0(x), ..., h_d(x) for the probabilists' Hermite polynomials scaled to
/// unit norm in L2(gamma): h_{n+1} = (x h_n - sqrt(n) h_{n-1}) / sqrt(n+1).
inline std::vector<double> hermite_table(int d, double x) {
  std::vector<double> h(static_cast<std::size_t>(std::max(d, 0)) + 1);
  h[0] = 1.0;
  if (d >= 1) h[1] = x;
  for (int n = 1; n < d; ++n) {
    h[n + 1] = (x * h[n] - std::sqrt(static_cast<double>(n)) * h[n - 1]) /
               std::sqrt(static_cast<double>(n + 1));
  }
  return h;
}

inline double hermite_1d(int n, double x) { return hermite_table(n, x)[static_cast<std::size_t>(n)]; }

/// Product of one-dimensional orthonormal Hermite values, h_j(x) = prod h_{j_i}(x_i).
inline double hermite_orthonormal(const MultiIndex& j, std::span<const double> x) {
  if (j.dimension() != x.size()) {
    throw InvalidArgument("hermite_orthonormal: dimension mismatch",
                          "index=" + std::to_string(j.dimension()) +
                              " point=" + std::to_string(x.size()));
  }
  double v = 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) v *= hermite_1d(j[i], x[i]);
  return v;
}

// ---------------------------------------------------------------------------
// Quadrature

/// One-dimensional Gaussian rule: nodes and weights with sum(weights) = mu0.
struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

// Golub-Welsch: eigen-decomposition of the symmetric Jacobi matrix with zero
// diagonal and the given off-diagonal.
inline Rule1D golub_welsch(const std::vector<double>& offdiag, double mu0) {
  const auto n = static_cast<Eigen::Index>(offdiag.size() + 1);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    jac(i, i + 1) = offdiag[static_cast<std::size_t>(i)];
    jac(i + 1, i) = offdiag[static_cast<std::size_t>(i)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  if (es.info() != Eigen::Success) throw NumericError("Golub-Welsch eigensolver failed");
  Rule1D r;
  r.nodes.resize(static_cast<std::size_t>(n));
  r.weights.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    r.nodes[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    r.weights[static_cast<std::size_t>(i)] = mu0 * v0 * v0;
  }
  // Exact symmetry of the node set about zero.
  for (std::size_t i = 0, j = r.nodes.size() - 1; i < j; ++i, --j) {
    const double x = 0.5 * (r.nodes[j] - r.nodes[i]);
    const double w = 0.5 * (r.weights[i] + r.weights[j]);
    r.nodes[i] = -x;
    r.nodes[j] = x;
    r.weights[i] = r.weights[j] = w;
  }
  if (r.nodes.size() % 2 == 1) r.nodes[r.nodes.size() / 2] = 0.0;
  return r;
}

}  // namespace detail

/// q-point Gauss-Hermite rule for the standard normal weight exp(-x^2/2)/sqrt(2 pi).
inline Rule1D gauss_hermite_rule(int q) {
  if (q < 1) throw InvalidArgument("gauss_hermite_rule: order must be >= 1");
  std::vector<double> off;
  for (int i = 1; i < q; ++i) off.push_back(std::sqrt(static_cast<double>(i)));
  Rule1D r = detail::golub_welsch(off, 1.0);
  const double total = std::accumulate(r.weights.begin(), r.weights.end(), 0.0);
  for (double& w : r.weights) w /= total;
  return r;
}

/// q-point Gauss-Legendre rule on [-1, 1].
inline Rule1D gauss_legendre_rule(int q) {
  if (q < 1) throw InvalidArgument("gauss_legendre_rule: order must be >= 1");
  std::vector<double> off;
  for (int i = 1; i < q; ++i) {
    const double di = i;
    off.push_back(di / std::sqrt(4.0 * di * di - 1.0));
  }
  return detail::golub_welsch(off, 2.0);
}

/// Tensor Gauss-Hermite rule integrating against gamma_k.
struct QuadratureRule {
  std::size_t dimension = 0;
  int order = 0;
  std::vector<double> nodes;    ///< size() * dimension, row-major
  std::vector<double> weights;  ///< positive, summing to 1

  std::size_t size() const noexcept { return weights.size(); }
  std::span<const double> point(std::size_t i) const {
    return {nodes.data() + i * dimension, dimension};
  }
};

inline constexpr std::size_t kDefaultNodeBudget = 1'000'000;

inline QuadratureRule quadrature_rule(std::size_t k, int q,
                                      std::size_t node_budget = kDefaultNodeBudget) {
  if (k < 1) throw InvalidArgument("quadrature_rule: dimension must be >= 1");
  if (q < 1) throw InvalidArgument("quadrature_rule: order must be >= 1");
  double count = std::pow(static_cast<double>(q), static_cast<double>(k));
  if (count > static_cast<double>(node_budget)) {
    throw InvalidArgument("quadrature_rule: node budget exceeded",
                          "q^k=" + std::to_string(count) + " budget=" + std::to_string(node_budget));
  }
  const Rule1D r = gauss_hermite_rule(q);
  QuadratureRule out;
  out.dimension = k;
  out.order = q;
  const auto n = static_cast<std::size_t>(count);
  out.nodes.resize(n * k);
  out.weights.resize(n);
  std::vector<std::size_t> idx(k, 0);
  for (std::size_t p = 0; p < n; ++p) {
    double w = 1.0;
    for (std::size_t a = 0; a < k; ++a) {
      out.nodes[p * k + a] = r.nodes[idx[a]];
      w *= r.weights[idx[a]];
    }
    out.weights[p] = w;
    for (std::size_t a = k; a-- > 0;) {
      if (++idx[a] < static_cast<std::size_t>(q)) break;
      idx[a] = 0;
    }
  }
  return out;
}

/// Quadrature estimate of (T_rho f)(x) = E f(rho x + sqrt(1-rho^2) Z).
template <typename F>
double ou_apply(F&& f, const Correlation& rho, std::span<const double> x, const QuadratureRule& rule) {
  if (rule.dimension != x.size()) {
    throw InvalidArgument("ou_apply: rule dimension does not match the point dimension");
  }
  const double r = rho.value();
  const double s = rho.sigma();
  std::vector<double> y(x.size());
  double acc = 0.0;
  for (std::size_t p = 0; p < rule.size(); ++p) {
    const auto z = rule.point(p);
    for (std::size_t a = 0; a < x.size(); ++a) y[a] = r * x[a] + s * z[a];
    acc += rule.weights[p] * f(std::span<const double>(y));
  }
  return acc;
}

/// The joint density G(x, y) of a rho-correlated pair in R^k, evaluated in the
/// gamma(x) * exp(-|y - rho x|^2 / (2(1-rho^2))) form.
inline double gauss_kernel(std::span<const double> x, std::span<const double> y, const Correlation& rho) {
  if (x.size() != y.size()) throw InvalidArgument("gauss_kernel: dimension mismatch");
  const double r = rho.value();
  const double one_minus = (1.0 - r) * (1.0 + r);
  double xx = 0.0;
  double dd = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx += x[i] * x[i];
    const double d = y[i] - r * x[i];
    dd += d * d;
  }
  const double k = static_cast<double>(x.size());
  return std::pow(2.0 * std::numbers::pi * std::sqrt(one_minus), -k) *
         std::exp(-0.5 * xx - dd / (2.0 * one_minus));
}

// ---------------------------------------------------------------------------
// Bivariate orthant probability

namespace detail {

inline const Rule1D& legendre20() {
  static const Rule1D r = gauss_legendre_rule(20);
  return r;
}

// Integral of phi(x) * Phi((t - rho x)/sigma) over [lo, hi] on panels no wider
// than h, with an extra breakpoint where the inner argument crosses zero.
inline double conditional_integral(double lo, double hi, double t, double rho, double sigma) {
  if (!(hi > lo)) return 0.0;
  const Rule1D& gl = legendre20();
  const double h = std::min(0.5, std::max(sigma / std::abs(rho), 1e-4));
  std::vector<double> cuts{lo};
  const double x0 = t / rho;
  if (x0 > lo && x0 < hi) cuts.push_back(x0);
  cuts.push_back(hi);
  double total = 0.0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double a = cuts[c];
    const double b = cuts[c + 1];
    const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / h)));
    const double w = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
      const double mid = a + (p + 0.5) * w;
      double acc = 0.0;
      for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
        const double x = mid + 0.5 * w * gl.nodes[i];
        acc += gl.weights[i] * normal_pdf(x) * normal_cdf_extended((t - rho * x) / sigma);
      }
      total += 0.5 * w * acc;
    }
  }
  return total;
}

}  // namespace detail

/// P(X <= s, Y <= t) for rho-correlated standard Gaussians. Accepts +-infinity
/// for s and t.
inline double bvn_orthant(double s, double t, const Correlation& rho) {
  if (std::isnan(s) || std::isnan(t)) throw InvalidArgument("bvn_orthant: NaN argument");
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (s == -inf || t == -inf) return 0.0;
  if (s == inf) return detail::normal_cdf_extended(t);
  if (t == inf) return detail::normal_cdf_extended(s);
  const double ps = detail::normal_cdf_extended(s);
  const double pt = detail::normal_cdf_extended(t);
  const double r = rho.value();
  if (r == 0.0) return ps * pt;

  // Mass below -8 is < 7e-16; above 8 likewise.
  constexpr double cut = 8.0;
  double v = 0.0;
  if (s > -cut) {
    v = detail::conditional_integral(-cut, std::min(s, cut), t, r, rho.sigma());
  }
  const double lo = std::max(0.0, ps + pt - 1.0);
  const double hi = std::min(ps, pt);
  return std::clamp(v, lo, hi);
}

}  // namespace nisim
