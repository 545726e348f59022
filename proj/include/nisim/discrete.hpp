#pragma once

// Finite sources: joint pmfs, HGR maximal correlation, the reduction
// parameters of the discrete-to-Gaussian argument and an exhaustive decider.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nisim/error.hpp"
#include "nisim/netsearch.hpp"
#include "nisim/parallel.hpp"
#include "nisim/stability.hpp"

namespace nisim {

/// Joint distribution of (X, Y) on {0..p-1} x {0..p'-1}, row-major.
class JointPMF {
 public:
  JointPMF(std::size_t alphabet_x, std::size_t alphabet_y, std::vector<double> mass)
      : px_(alphabet_x), py_(alphabet_y), mass_(std::move(mass)) {
    if (px_ < 1 || py_ < 1) throw DataError("JointPMF: alphabets must be nonempty");
    if (mass_.size() != px_ * py_) {
      throw DataError("JointPMF: mass has the wrong size",
                      "expected=" + std::to_string(px_ * py_) + " got=" + std::to_string(mass_.size()));
    }
    double s = 0.0;
    for (double v : mass_) {
      if (!std::isfinite(v) || v < 0.0) throw DataError("JointPMF: masses must be finite and nonnegative");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-12) throw DataError("JointPMF: masses must sum to 1", "sum=" + std::to_string(s));
  }

  std::size_t alphabet_x() const noexcept { return px_; }
  std::size_t alphabet_y() const noexcept { return py_; }
  const std::vector<double>& mass() const noexcept { return mass_; }
  double operator()(std::size_t x, std::size_t y) const { return mass_[x * py_ + y]; }

  std::vector<double> marginal_x() const {
    std::vector<double> out(px_, 0.0);
    for (std::size_t x = 0; x < px_; ++x)
      for (std::size_t y = 0; y < py_; ++y) out[x] += (*this)(x, y);
    return out;
  }
  std::vector<double> marginal_y() const {
    std::vector<double> out(py_, 0.0);
    for (std::size_t x = 0; x < px_; ++x)
      for (std::size_t y = 0; y < py_; ++y) out[y] += (*this)(x, y);
    return out;
  }

  /// Copy with all-zero rows and columns removed.
  JointPMF normalized() const {
    const auto mx = marginal_x();
    const auto my = marginal_y();
    std::vector<std::size_t> rows, cols;
    for (std::size_t x = 0; x < px_; ++x)
      if (mx[x] > 0.0) rows.push_back(x);
    for (std::size_t y = 0; y < py_; ++y)
      if (my[y] > 0.0) cols.push_back(y);
    std::vector<double> m;
    m.reserve(rows.size() * cols.size());
    for (std::size_t x : rows)
      for (std::size_t y : cols) m.push_back((*this)(x, y));
    return JointPMF(rows.size(), cols.size(), std::move(m));
  }

  /// Law of n i.i.d. copies, with tuples flattened row-major (first sample
  /// most significant).
  JointPMF power(std::size_t n) const {
    if (n < 1) throw InvalidArgument("JointPMF::power: n must be >= 1");
    std::vector<double> cur = mass_;
    std::size_t qx = px_, qy = py_;
    for (std::size_t s = 1; s < n; ++s) {
      std::vector<double> next(qx * px_ * qy * py_);
      for (std::size_t x = 0; x < qx; ++x)
        for (std::size_t a = 0; a < px_; ++a)
          for (std::size_t y = 0; y < qy; ++y)
            for (std::size_t b = 0; b < py_; ++b)
              next[(x * px_ + a) * (qy * py_) + y * py_ + b] = cur[x * qy + y] * (*this)(a, b);
      cur = std::move(next);
      qx *= px_;
      qy *= py_;
    }
    return JointPMF(qx, qy, std::move(cur));
  }

 private:
  std::size_t px_, py_;
  std::vector<double> mass_;
};

/// Second singular value of mass(x, y) / sqrt(P(x) P(y)) after dropping
/// zero-probability symbols; 0 when either marginal is a point mass.
inline double maximal_correlation(const JointPMF& pmf) {
  const JointPMF p = pmf.normalized();
  if (p.alphabet_x() < 2 || p.alphabet_y() < 2) return 0.0;
  const auto mx = p.marginal_x();
  const auto my = p.marginal_y();
  Eigen::MatrixXd q(p.alphabet_x(), p.alphabet_y());
  for (std::size_t x = 0; x < p.alphabet_x(); ++x)
    for (std::size_t y = 0; y < p.alphabet_y(); ++y)
      q(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) = p(x, y) / std::sqrt(mx[x] * my[y]);
  Eigen::VectorXd sv;
  if (std::max(p.alphabet_x(), p.alphabet_y()) > 64) {
    sv = Eigen::BDCSVD<Eigen::MatrixXd>(q).singularValues();
  } else {
    sv = Eigen::JacobiSVD<Eigen::MatrixXd>(q).singularValues();
  }
  return std::clamp(sv(1), 0.0, 1.0);
}

/// Smallest strictly positive atom.
inline double alpha_min(const JointPMF& pmf) {
  double best = std::numeric_limits<double>::infinity();
  for (double v : pmf.mass())
    if (v > 0.0) best = std::min(best, v);
  if (!std::isfinite(best)) throw DataError("alpha_min: pmf has no positive atom");
  return best;
}

/// Parameters of the reduction from a finite source to Gaussians, with
/// natural logarithms inside the formulas and base-10 iterated logs for the
/// tower-sized outputs.
struct ReductionParams {
  double gamma = 0.0;
  double log10_kappa_max = 0.0;
  double log10_n_vars = 0.0;
  /// log10 log10 of the run-time bound; +inf once the tower overflows.
  double log10_log10_runtime = 0.0;
  /// log10 of the previous field; finite for every valid input.
  double log10_log10_log10_runtime = 0.0;
  /// Set when alpha = 1, where log(1/alpha) = 0 collapses the exponents.
  bool degenerate = false;
  std::string log_convention = "natural";
};

inline ReductionParams reduction_params(std::size_t m, std::size_t p, double epsilon, double rho, double alpha) {
  if (m < 2) throw InvalidArgument("reduction_params: m must be >= 2");
  if (p < 1) throw InvalidArgument("reduction_params: p must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("reduction_params: epsilon must lie in (0, 1)");
  if (!(rho >= 0.0)) throw InvalidArgument("reduction_params: rho must be >= 0");
  if (!(rho < 1.0)) throw InvalidArgument("reduction_params: requires maximal correlation rho < 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("reduction_params: alpha must lie in (0, 1]");
  const double md = static_cast<double>(m);
  const double lme = std::log(md / epsilon);
  const double la = std::log(1.0 / alpha);
  const double two_m = std::pow(2.0, md);

  ReductionParams r;
  r.gamma = (1.0 - rho) * epsilon / (100.0 * md * lme);
  const double base = md * lme * la / ((1.0 - rho) * epsilon);
  r.log10_kappa_max = 1800.0 * base * std::log10(epsilon / (100.0 * two_m));
  r.log10_n_vars = 3600.0 * base * std::log10(100.0 * two_m / epsilon);
  r.degenerate = la == 0.0;

  // log10 runtime = m p^N log10(5/eps) with N = 10^log10_n_vars.
  const double head = std::log10(md * std::log10(5.0 / epsilon));
  const double lp = std::log10(static_cast<double>(p));
  if (lp == 0.0) {
    r.log10_log10_runtime = head;
    r.log10_log10_log10_runtime = std::log10(head);
  } else {
    const double tower = std::pow(10.0, r.log10_n_vars) * lp;
    r.log10_log10_runtime = head + tower;
    if (std::isfinite(tower) && tower < 1e15) {
      r.log10_log10_log10_runtime = std::log10(r.log10_log10_runtime);
    } else {
      // log10(head + N lp) = log10 N + log10 lp once N lp dwarfs head.
      r.log10_log10_log10_runtime = r.log10_n_vars + std::log10(lp);
    }
  }
  return r;
}

/// Exact law of (f(X^n), g(Y^n)) over n i.i.d. source draws: F^T P_n G, with
/// f and g tables of m-vectors indexed by flattened tuples.
inline DistributionMatrix induced_distribution(const JointPMF& source, std::size_t n, std::size_t m,
                                               std::span<const double> f, std::span<const double> g) {
  const JointPMF pn = source.power(n);
  if (f.size() != pn.alphabet_x() * m || g.size() != pn.alphabet_y() * m) {
    throw InvalidArgument("induced_distribution: function tables do not match the source alphabet");
  }
  std::vector<double> c(m * m, 0.0);
  for (std::size_t x = 0; x < pn.alphabet_x(); ++x)
    for (std::size_t y = 0; y < pn.alphabet_y(); ++y) {
      const double w = pn(x, y);
      if (w == 0.0) continue;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) c[i * m + j] += w * f[x * m + i] * g[y * m + j];
    }
  return DistributionMatrix::from_computation(m, std::move(c));
}

/// Exhaustive search over pairs of net-valued functions of n source samples.
/// The constant pair at the target's exact marginals is examined first. When
/// the pair count exceeds the budget only that pair is examined and the
/// verdict cannot be NOT-SIMULATABLE-AT-RESOLUTION.
inline Decision decide_discrete(const DistributionMatrix& target, const JointPMF& source, double epsilon,
                                std::size_t n, const SimplexNet& net, std::uint64_t budget, unsigned threads = 1) {
  const std::size_t m = target.size();
  if (net.outcomes() != m) throw InvalidArgument("decide_discrete: net and target have different m");
  if (!(epsilon > 0.0)) throw InvalidArgument("decide_discrete: epsilon must be positive");
  if (n < 1) throw InvalidArgument("decide_discrete: n must be >= 1");
  if (budget < 1) throw InvalidArgument("decide_discrete: budget must be >= 1");
  const JointPMF pn = source.power(n);
  const std::size_t qx = pn.alphabet_x();
  const std::size_t qy = pn.alphabet_y();

  Decision out;
  DiscreteWitness w{qx, qy, m, {}, {}};
  {
    auto a = target.row_sums();
    auto b = target.column_sums();
    const auto prod = DistributionMatrix::product(a, b);
    out.best_distance = tv_distance(prod, target);
    out.candidates_examined = 1;
    for (std::size_t x = 0; x < qx; ++x) w.f.insert(w.f.end(), a.begin(), a.end());
    for (std::size_t y = 0; y < qy; ++y) w.g.insert(w.g.end(), b.begin(), b.end());
  }

  const double nf = std::pow(static_cast<double>(net.size()), static_cast<double>(qx));
  const double ng = std::pow(static_cast<double>(net.size()), static_cast<double>(qy));
  out.mode = "exhaustive";
  if (nf * ng > static_cast<double>(budget)) {
    out.diagnostics = "budget exceeded: " + std::to_string(nf * ng) + " pairs, budget " + std::to_string(budget);
    out.search_complete = false;
  } else {
    const auto count_f = static_cast<std::size_t>(nf);
    const auto count_g = static_cast<std::size_t>(ng);
    auto decode = [&](std::size_t code, std::size_t len) {
      std::vector<double> t(len * m);
      for (std::size_t s = len; s-- > 0;) {
        const auto& p = net[code % net.size()];
        for (std::size_t i = 0; i < m; ++i) t[s * m + i] = p[i];
        code /= net.size();
      }
      return t;
    };
    std::vector<std::vector<double>> gs(count_g);
    for (std::size_t j = 0; j < count_g; ++j) gs[j] = decode(j, qy);
    struct Row {
      double tv = std::numeric_limits<double>::infinity();
      std::size_t g = 0;
    };
    const std::span<const double> t = target.entries();
    const auto rows = ordered_map<Row>(count_f, threads, [&](std::size_t i) {
      const auto f = decode(i, qx);
      // A = F^T P_n, an m x qy block reused for every g.
      std::vector<double> a(m * qy, 0.0);
      for (std::size_t x = 0; x < qx; ++x)
        for (std::size_t y = 0; y < qy; ++y) {
          const double v = pn(x, y);
          if (v == 0.0) continue;
          for (std::size_t k = 0; k < m; ++k) a[k * qy + y] += f[x * m + k] * v;
        }
      Row r;
      std::vector<double> c(m * m);
      for (std::size_t j = 0; j < count_g; ++j) {
        std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t k = 0; k < m; ++k)
          for (std::size_t y = 0; y < qy; ++y) {
            const double av = a[k * qy + y];
            if (av == 0.0) continue;
            for (std::size_t l = 0; l < m; ++l) c[k * m + l] += av * gs[j][y * m + l];
          }
        const double tv = detail::tv_raw(c, t);
        if (tv < r.tv) {
          r.tv = tv;
          r.g = j;
        }
      }
      return r;
    });
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].tv < out.best_distance) {
        out.best_distance = rows[i].tv;
        w.f = decode(i, qx);
        w.g = gs[rows[i].g];
      }
    }
    out.candidates_examined += static_cast<std::uint64_t>(count_f) * count_g;
    out.search_complete = true;
  }

  const double check = tv_distance(induced_distribution(source, n, m, w.f, w.g), target);
  if (std::abs(check - out.best_distance) > 1e-9) {
    throw NumericError("decide_discrete: witness re-evaluation disagrees with the search",
                       "search=" + std::to_string(out.best_distance) + " recheck=" + std::to_string(check));
  }
  out.best_distance = check;
  out.verdict = classify(out.best_distance, epsilon, out.search_complete);
  out.discrete_witness = std::move(w);
  return out;
}

}  // namespace nisim
