#pragma once

// Brute-force decision procedure for Gaussian sources: simplex nets, cell
// function enumeration, greedy separated sets in Hermite-coefficient space and
// the gap decision itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nisim/error.hpp"
#include "nisim/gausscore.hpp"
#include "nisim/parallel.hpp"
#include "nisim/stability.hpp"

namespace nisim {

// ---------------------------------------------------------------------------
// Simplex nets

/// Lattice points v / r with v in N^m, sum v = r, for the smallest r whose
/// covering radius is at most epsilon / 2.
class SimplexNet {
 public:
  SimplexNet(std::size_t m, double epsilon, std::size_t resolution, std::vector<SimplexPoint> points)
      : m_(m), epsilon_(epsilon), resolution_(resolution), points_(std::move(points)) {}

  std::size_t outcomes() const noexcept { return m_; }
  double epsilon() const noexcept { return epsilon_; }
  std::size_t resolution() const noexcept { return resolution_; }
  std::size_t size() const noexcept { return points_.size(); }
  const SimplexPoint& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<SimplexPoint>& points() const noexcept { return points_; }

  /// Worst-case l2 distance from a point of the simplex to the lattice.
  double covering_radius() const { return lattice_covering_radius(m_) / static_cast<double>(resolution_); }

  /// Index of the closest net point in l2 (lowest index on ties).
  std::size_t nearest(std::span<const double> x) const {
    if (x.size() != m_) throw InvalidArgument("SimplexNet::nearest: dimension mismatch");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points_.size(); ++i) {
      double d = 0.0;
      for (std::size_t a = 0; a < m_; ++a) d += (points_[i][a] - x[a]) * (points_[i][a] - x[a]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  /// Covering radius of {v : sum v = 1} in units of the lattice step 1/r.
  static double lattice_covering_radius(std::size_t m) {
    const double a = std::floor(static_cast<double>(m) / 2.0);
    return std::sqrt(a * (static_cast<double>(m) - a) / static_cast<double>(m));
  }

 private:
  std::size_t m_;
  double epsilon_;
  std::size_t resolution_;
  std::vector<SimplexPoint> points_;
};

inline double binomial(std::size_t n, std::size_t k) {
  double v = 1.0;
  for (std::size_t i = 1; i <= k; ++i) v = v * static_cast<double>(n - k + i) / static_cast<double>(i);
  return v;
}

inline constexpr std::size_t kDefaultNetBudget = 200'000;

inline SimplexNet simplex_net(std::size_t m, double epsilon, std::size_t max_points = kDefaultNetBudget) {
  if (m < 2 || m > kMaxOutcomes) throw InvalidArgument("simplex_net: m must be in [2, 6]");
  if (!(epsilon > 0.0 && epsilon < 2.0)) throw InvalidArgument("simplex_net: epsilon must lie in (0, 2)");
  const double rr = std::ceil(2.0 * SimplexNet::lattice_covering_radius(m) / epsilon - 1e-12);
  const auto r = static_cast<std::size_t>(std::max(1.0, rr));
  if (binomial(r + m - 1, m - 1) > static_cast<double>(max_points)) {
    throw InvalidArgument("simplex_net: epsilon too small for the net budget",
                          "points=" + std::to_string(binomial(r + m - 1, m - 1)));
  }
  std::vector<SimplexPoint> pts;
  std::vector<std::size_t> v(m, 0);
  // Lexicographically descending compositions of r, starting at r e_1.
  auto rec = [&](auto&& self, std::size_t pos, std::size_t left) -> void {
    if (pos + 1 == m) {
      v[pos] = left;
      std::vector<double> c(m);
      for (std::size_t i = 0; i < m; ++i) c[i] = static_cast<double>(v[i]) / static_cast<double>(r);
      pts.emplace_back(std::move(c), 1e-12);
      return;
    }
    for (std::size_t x = left + 1; x-- > 0;) {
      v[pos] = x;
      self(self, pos + 1, left - x);
    }
  };
  rec(rec, 0, r);
  return SimplexNet(m, epsilon, r, std::move(pts));
}

// ---------------------------------------------------------------------------
// Enumeration

/// Streams every net-valued cell function on a grid in lexicographic order of
/// the per-cell net indices (last cell fastest), up to a budget.
class CellFunctionEnumerator {
 public:
  CellFunctionEnumerator(CellGrid grid, const SimplexNet& net, std::uint64_t budget)
      : grid_(std::move(grid)), net_(&net), budget_(budget), digits_(grid_.cell_count(), 0) {
    space_ = std::pow(static_cast<double>(net.size()), static_cast<double>(grid_.cell_count()));
  }

  /// Number of functions in the full space (as a double; may be huge).
  double space_size() const noexcept { return space_; }
  std::uint64_t emitted() const noexcept { return emitted_; }
  /// True once emission stopped at the budget with functions left over.
  bool truncated() const noexcept { return truncated_; }

  std::optional<CellFunction> next() {
    if (exhausted_) return std::nullopt;
    if (emitted_ >= budget_) {
      truncated_ = true;
      exhausted_ = true;
      return std::nullopt;
    }
    CellFunction f = build(digits_);
    ++emitted_;
    advance();
    return f;
  }

  /// Net indices of the function that next() will return.
  const std::vector<std::size_t>& current_indices() const noexcept { return digits_; }

  CellFunction build(const std::vector<std::size_t>& idx) const {
    const std::size_t m = net_->outcomes();
    std::vector<double> vals(idx.size() * m);
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto p = (*net_)[idx[c]].coords();
      std::copy(p.begin(), p.end(), vals.begin() + static_cast<std::ptrdiff_t>(c * m));
    }
    return CellFunction(grid_, m, std::move(vals));
  }

 private:
  void advance() {
    for (std::size_t c = digits_.size(); c-- > 0;) {
      if (++digits_[c] < net_->size()) return;
      digits_[c] = 0;
    }
    exhausted_ = true;
  }

  CellGrid grid_;
  const SimplexNet* net_;
  std::uint64_t budget_;
  std::vector<std::size_t> digits_;
  double space_ = 0.0;
  std::uint64_t emitted_ = 0;
  bool truncated_ = false;
  bool exhausted_ = false;
};

// ---------------------------------------------------------------------------
// Separated sets

struct SeparatedEntry {
  CellFunction function;
  HermiteCoefficients coefficients;
};

/// Default cap ceil(log(eps/2) / log|rho|).
inline int default_degree_cap(double epsilon, const Correlation& rho) {
  rho.require_nonzero("default_degree_cap");
  const double v = std::log(epsilon / 2.0) / std::log(std::abs(rho.value()));
  return std::max(1, static_cast<int>(std::ceil(v - 1e-12)));
}

/// Greedy maximal separated subset of a stream in emission order: a candidate
/// is kept when its truncated coefficient table is at distance >= epsilon (l2)
/// from every kept table. `next` returns std::nullopt at the end of the stream.
template <typename Next>
std::vector<SeparatedEntry> separated_set_from(Next&& next, int d, double epsilon) {
  if (d < 0) throw InvalidArgument("separated_set: degree cap must be >= 0");
  if (!(epsilon >= 0.0)) throw InvalidArgument("separated_set: separation must be >= 0");
  std::vector<SeparatedEntry> kept;
  while (auto f = next()) {
    HermiteCoefficients h = hermite_coeffs(*f, d);
    bool separated = true;
    for (const auto& k : kept) {
      if (coefficient_distance(h, k.coefficients) < epsilon) {
        separated = false;
        break;
      }
    }
    if (separated) kept.push_back({std::move(*f), std::move(h)});
  }
  return kept;
}

inline std::vector<SeparatedEntry> separated_set(CellFunctionEnumerator& stream, const Correlation& rho, int d,
                                                 double epsilon) {
  if (d <= 0) d = default_degree_cap(epsilon, rho);
  return separated_set_from([&] { return stream.next(); }, d, epsilon);
}

inline std::vector<SeparatedEntry> separated_set(const std::vector<CellFunction>& stream, const Correlation& rho,
                                                 int d, double epsilon) {
  if (d <= 0) d = default_degree_cap(epsilon, rho);
  std::size_t i = 0;
  return separated_set_from(
      [&]() -> std::optional<CellFunction> {
        if (i >= stream.size()) return std::nullopt;
        return stream[i++];
      },
      d, epsilon);
}

// ---------------------------------------------------------------------------
// Decisions

enum class Verdict { simulatable, not_simulatable_at_resolution, indeterminate };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::simulatable: return "SIMULATABLE";
    case Verdict::not_simulatable_at_resolution: return "NOT-SIMULATABLE-AT-RESOLUTION";
    case Verdict::indeterminate: return "INDETERMINATE";
  }
  return "INDETERMINATE";
}

inline Verdict parse_verdict(const std::string& s) {
  if (s == "SIMULATABLE") return Verdict::simulatable;
  if (s == "NOT-SIMULATABLE-AT-RESOLUTION") return Verdict::not_simulatable_at_resolution;
  if (s == "INDETERMINATE") return Verdict::indeterminate;
  throw DataError("unknown verdict '" + s + "'");
}

/// Classifies a best distance with the eps / 10 eps gap.
inline Verdict classify(double best, double closeness, bool complete) {
  if (best <= closeness) return Verdict::simulatable;
  if (best > 10.0 * closeness && complete) return Verdict::not_simulatable_at_resolution;
  return Verdict::indeterminate;
}

/// Witness for a finite source: f over {0..domain_x-1}, g over
/// {0..domain_y-1}, each a row-major table of m-vectors.
struct DiscreteWitness {
  std::size_t domain_x = 0;
  std::size_t domain_y = 0;
  std::size_t outcomes = 0;
  std::vector<double> f;
  std::vector<double> g;
};

struct Decision {
  Verdict verdict = Verdict::indeterminate;
  double best_distance = std::numeric_limits<double>::infinity();
  std::optional<std::pair<CellFunction, CellFunction>> witness;
  std::optional<DiscreteWitness> discrete_witness;
  std::uint64_t candidates_examined = 0;
  bool search_complete = false;
  std::string mode;          ///< "exhaustive" or "local"
  std::string diagnostics;   ///< free-form note, empty when nothing to report
};

struct SearchConfig {
  double epsilon = 0.1;
  std::optional<std::size_t> domain_dimension;  ///< default m^2 - 1
  double grid_radius = 4.0;
  std::size_t cells_per_axis = 2;
  std::optional<int> degree_cap;        ///< default ceil(log(eps/2)/log|rho|)
  std::optional<double> net_epsilon;    ///< simplex_net parameter; default eps (an eps/2-net)
  std::optional<double> separation;     ///< separated-set radius; default eps
  std::optional<double> closeness;      ///< SIMULATABLE threshold; default eps
  std::uint64_t budget = 2'000'000;     ///< candidate pairs examined
  std::uint64_t seed = 0;
  std::size_t restarts = 8;
  unsigned threads = 1;                 ///< 0 selects the default thread count
};

/// SearchConfig with every default filled in for a given m and rho.
struct ResolvedSearch {
  double epsilon;
  std::size_t domain_dimension;
  double grid_radius;
  std::size_t cells_per_axis;
  int degree_cap;
  double net_epsilon;
  double separation;
  double closeness;
  std::uint64_t budget;
  std::uint64_t seed;
  std::size_t restarts;
};

inline ResolvedSearch resolve(const SearchConfig& c, std::size_t m, const Correlation& rho) {
  if (!(c.epsilon > 0.0) || !(c.epsilon < std::abs(rho.value()))) {
    throw InvalidArgument("epsilon must satisfy 0<ε<|ρ|",
                          "epsilon=" + std::to_string(c.epsilon) + " rho=" + std::to_string(rho.value()));
  }
  if (c.budget < 1) throw InvalidArgument("budget must be >= 1");
  if (c.restarts < 1) throw InvalidArgument("restarts must be >= 1");
  ResolvedSearch r{};
  r.epsilon = c.epsilon;
  r.domain_dimension = c.domain_dimension.value_or(m * m - 1);
  if (r.domain_dimension < 1) throw InvalidArgument("domain dimension must be >= 1");
  r.grid_radius = c.grid_radius;
  r.cells_per_axis = c.cells_per_axis;
  r.degree_cap = c.degree_cap.value_or(default_degree_cap(c.epsilon, rho));
  if (r.degree_cap < 1) throw InvalidArgument("degree cap must be >= 1");
  r.net_epsilon = c.net_epsilon.value_or(c.epsilon);
  r.separation = c.separation.value_or(c.epsilon);
  r.closeness = c.closeness.value_or(c.epsilon);
  if (r.separation < 0.0 || !(r.closeness > 0.0)) throw InvalidArgument("separation and closeness must be positive");
  r.budget = c.budget;
  r.seed = c.seed;
  r.restarts = c.restarts;
  return r;
}

namespace detail {

inline double tv_raw(std::span<const double> c, std::span<const double> t) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += std::abs(c[i] - t[i]);
  return 0.5 * s;
}

inline double frob_raw(std::span<const double> c, std::span<const double> t) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += (c[i] - t[i]) * (c[i] - t[i]);
  return s;
}

/// Product over axes of the per-axis joint cell probabilities, K(a, b).
class TensorKernel {
 public:
  TensorKernel(const CellGrid& grid, const AxisKernel& axis) : axis_(&axis), k_(grid.dimension()) {
    coords_.resize(grid.cell_count() * k_);
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
      const auto idx = grid.unflatten(c);
      std::copy(idx.begin(), idx.end(), coords_.begin() + static_cast<std::ptrdiff_t>(c * k_));
    }
  }
  double operator()(std::size_t a, std::size_t b) const {
    double v = 1.0;
    for (std::size_t d = 0; d < k_; ++d) {
      v *= axis_->joint(static_cast<Eigen::Index>(coords_[a * k_ + d]), static_cast<Eigen::Index>(coords_[b * k_ + d]));
    }
    return v;
  }

 private:
  const AxisKernel* axis_;
  std::size_t k_;
  std::vector<std::size_t> coords_;
};

/// Maps net indices on a grid with c cells per axis to the grid with 2c.
inline std::vector<std::uint32_t> prolongate(const std::vector<std::uint32_t>& coarse, const CellGrid& from,
                                             const CellGrid& to) {
  const std::size_t cf = from.cells_per_axis();
  if (to.cells_per_axis() != 2 * cf) throw NumericError("prolongate: grids are not nested");
  std::vector<std::uint32_t> out(to.cell_count());
  std::vector<std::size_t> ci(from.dimension());
  for (std::size_t c = 0; c < to.cell_count(); ++c) {
    const auto idx = to.unflatten(c);
    for (std::size_t d = 0; d < idx.size(); ++d) {
      const std::size_t i = idx[d];
      ci[d] = i == 0 ? 0 : (i == 2 * cf + 1 ? cf + 1 : (i - 1) / 2 + 1);
    }
    out[c] = coarse[from.flatten(ci)];
  }
  return out;
}

/// Cell counts visited by the multilevel search: successive halvings of c down
/// to 2 (or an odd count), coarsest first.
inline std::vector<std::size_t> level_schedule(std::size_t c) {
  std::vector<std::size_t> levels{c};
  while (levels.back() % 2 == 0 && levels.back() / 2 >= 2) levels.push_back(levels.back() / 2);
  std::reverse(levels.begin(), levels.end());
  return levels;
}

struct LocalResult {
  double best_tv = std::numeric_limits<double>::infinity();
  std::size_t best_level = 0;
  std::vector<std::uint32_t> best_f, best_g;
  std::uint64_t examined = 0;
};

// Coordinate descent on |C - target|_F^2 over net-valued cell functions, with
// incremental updates of C, P f and P g. Every evaluated move counts as an
// examined candidate and is scored in total variation.
class LocalSearch {
 public:
  LocalSearch(const SimplexNet& net, std::span<const double> target, std::uint64_t budget)
      : net_(net), target_(target.begin(), target.end()), m_(net.outcomes()), budget_(budget) {}

  LocalResult run(const std::vector<CellGrid>& grids, const std::vector<AxisKernel>& kernels,
                  std::vector<std::uint32_t> fi, std::vector<std::uint32_t> gi) {
    LocalResult res;
    for (std::size_t level = 0; level < grids.size(); ++level) {
      if (level > 0) {
        fi = prolongate(fi, grids[level - 1], grids[level]);
        gi = prolongate(gi, grids[level - 1], grids[level]);
      }
      descend(grids[level], kernels[level], level, fi, gi, res);
      if (res.examined >= budget_) break;
    }
    return res;
  }

 private:
  std::vector<double> values(const std::vector<std::uint32_t>& idx) const {
    std::vector<double> v(idx.size() * m_);
    for (std::size_t c = 0; c < idx.size(); ++c)
      for (std::size_t i = 0; i < m_; ++i) v[c * m_ + i] = net_[idx[c]][i];
    return v;
  }

  void consider(std::span<const double> c, std::size_t level, const std::vector<std::uint32_t>& fi,
                const std::vector<std::uint32_t>& gi, LocalResult& res, bool f_move, std::size_t cell,
                std::uint32_t q) {
    ++res.examined;
    const double tv = tv_raw(c, target_);
    if (tv < res.best_tv) {
      res.best_tv = tv;
      res.best_level = level;
      res.best_f = fi;
      res.best_g = gi;
      if (f_move) res.best_f[cell] = q;
      else if (cell != npos) res.best_g[cell] = q;
    }
  }

  void descend(const CellGrid& grid, const AxisKernel& axis, std::size_t level, std::vector<std::uint32_t>& fi,
               std::vector<std::uint32_t>& gi, LocalResult& res) {
    const std::size_t n = grid.cell_count();
    const std::size_t k = grid.dimension();
    const TensorKernel kern(grid, axis);
    std::vector<double> F = values(fi), G = values(gi);
    std::vector<double> TF = contract_axes(axis.joint, k, m_, F);
    std::vector<double> TG = contract_axes(axis.joint, k, m_, G);
    std::vector<double> C = bilinear(n, m_, F, TG);
    consider(C, level, fi, gi, res, false, npos, 0);
    double obj = frob_raw(C, target_);
    std::vector<double> trial(m_ * m_), delta(m_);

    bool improved = true;
    while (improved && res.examined < budget_) {
      improved = false;
      for (int side = 0; side < 2 && res.examined < budget_; ++side) {
        const bool is_f = side == 0;
        auto& idx = is_f ? fi : gi;
        const auto& other_t = is_f ? TG : TF;
        for (std::size_t a = 0; a < n && res.examined < budget_; ++a) {
          const std::uint32_t p = idx[a];
          std::uint32_t best_q = p;
          double best_obj = obj;
          const double* u = other_t.data() + a * m_;
          for (std::uint32_t q = 0; q < net_.size() && res.examined < budget_; ++q) {
            if (q == p) continue;
            for (std::size_t i = 0; i < m_; ++i) delta[i] = net_[q][i] - net_[p][i];
            for (std::size_t i = 0; i < m_; ++i)
              for (std::size_t j = 0; j < m_; ++j)
                trial[i * m_ + j] = C[i * m_ + j] + (is_f ? delta[i] * u[j] : u[i] * delta[j]);
            consider(trial, level, fi, gi, res, is_f, a, q);
            const double o = frob_raw(trial, target_);
            if (o < best_obj - 1e-15) {
              best_obj = o;
              best_q = q;
            }
          }
          if (best_q == p) continue;
          // Apply the move.
          for (std::size_t i = 0; i < m_; ++i) delta[i] = net_[best_q][i] - net_[p][i];
          for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < m_; ++j) C[i * m_ + j] += is_f ? delta[i] * u[j] : u[i] * delta[j];
          auto& own = is_f ? F : G;
          auto& own_t = is_f ? TF : TG;
          for (std::size_t i = 0; i < m_; ++i) own[a * m_ + i] += delta[i];
          for (std::size_t b = 0; b < n; ++b) {
            const double w = kern(b, a);
            if (w == 0.0) continue;
            for (std::size_t i = 0; i < m_; ++i) own_t[b * m_ + i] += w * delta[i];
          }
          idx[a] = best_q;
          obj = best_obj;
          improved = true;
        }
      }
    }
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  const SimplexNet& net_;
  std::vector<double> target_;
  std::size_t m_;
  std::uint64_t budget_;
};

inline std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Decides whether `target` is within the closeness threshold of C_rho(f, g)
/// for some pair of net-valued cell functions on the configured grid.
///
/// The constant pair at the target's exact marginals is always examined first.
/// When |net|^(2 * cells) fits the budget the search is exhaustive over a
/// greedy separated set; otherwise a seeded multilevel coordinate descent runs
/// on successively doubled grids and the search counts as incomplete.
inline Decision decide_gaussian(const DistributionMatrix& target, const Correlation& rho, const SearchConfig& config) {
  const std::size_t m = target.size();
  const ResolvedSearch rs = resolve(config, m, rho);
  const CellGrid grid(rs.domain_dimension, rs.grid_radius, rs.cells_per_axis);
  const SimplexNet net = simplex_net(m, rs.net_epsilon);
  const std::span<const double> t = target.entries();

  Decision out;
  const auto rows = target.row_sums();
  const auto cols = target.column_sums();
  std::optional<std::pair<CellFunction, CellFunction>> best_pair;
  {
    std::vector<double> a = rows, b = cols;
    auto fix = [](std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      for (double& x : v) x /= s;
      double head = 0.0;
      for (std::size_t i = 0; i + 1 < v.size(); ++i) head += v[i];
      v.back() = std::max(0.0, 1.0 - head);
    };
    fix(a);
    fix(b);
    const auto prod = DistributionMatrix::product(a, b);
    out.best_distance = tv_distance(prod, target);
    out.candidates_examined = 1;
    best_pair.emplace(CellFunction::constant(grid, SimplexPoint(a, 1e-12)),
                      CellFunction::constant(grid, SimplexPoint(b, 1e-12)));
  }

  const double pairs = std::pow(static_cast<double>(net.size()), 2.0 * static_cast<double>(grid.cell_count()));
  const AxisKernel kernel = axis_kernel(grid, rho);
  const unsigned threads = config.threads;

  if (pairs <= static_cast<double>(rs.budget)) {
    out.mode = "exhaustive";
    CellFunctionEnumerator stream(grid, net, rs.budget);
    const auto kept = separated_set_from([&] { return stream.next(); }, rs.degree_cap, rs.separation);
    std::vector<std::vector<double>> tg(kept.size());
    for (std::size_t j = 0; j < kept.size(); ++j) {
      tg[j] = contract_axes(kernel.joint, grid.dimension(), m, kept[j].function.values());
    }
    struct Row {
      double tv = std::numeric_limits<double>::infinity();
      std::size_t g = 0;
    };
    const auto results = ordered_map<Row>(kept.size(), threads, [&](std::size_t i) {
      Row r;
      for (std::size_t j = 0; j < kept.size(); ++j) {
        const auto c = detail::bilinear(grid.cell_count(), m, kept[i].function.values(), tg[j]);
        const double tv = detail::tv_raw(c, t);
        if (tv < r.tv) {
          r.tv = tv;
          r.g = j;
        }
      }
      return r;
    });
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i].tv < out.best_distance) {
        out.best_distance = results[i].tv;
        best_pair.emplace(kept[i].function, kept[results[i].g].function);
      }
    }
    out.candidates_examined += static_cast<std::uint64_t>(kept.size()) * kept.size();
    out.search_complete = true;
  } else {
    out.mode = "local";
    const auto schedule = detail::level_schedule(rs.cells_per_axis);
    std::vector<CellGrid> grids;
    std::vector<AxisKernel> kernels;
    for (std::size_t c : schedule) {
      grids.emplace_back(rs.domain_dimension, rs.grid_radius, c);
      kernels.push_back(c == rs.cells_per_axis ? kernel : axis_kernel(grids.back(), rho));
    }
    const std::uint64_t per_restart = std::max<std::uint64_t>(1, rs.budget / rs.restarts);
    const std::size_t f0 = net.nearest(rows);
    const std::size_t g0 = net.nearest(cols);
    const auto results = ordered_map<detail::LocalResult>(rs.restarts, threads, [&](std::size_t r) {
      const std::size_t cells = grids.front().cell_count();
      std::vector<std::uint32_t> fi(cells, static_cast<std::uint32_t>(f0)), gi(cells, static_cast<std::uint32_t>(g0));
      if (r > 0) {
        auto gen = detail::seeded_engine(rs.seed, r);
        std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(net.size() - 1));
        for (auto& v : fi) v = pick(gen);
        for (auto& v : gi) v = pick(gen);
      }
      detail::LocalSearch search(net, t, per_restart);
      return search.run(grids, kernels, std::move(fi), std::move(gi));
    });
    for (const auto& r : results) {
      out.candidates_examined += r.examined;
      if (r.best_tv < out.best_distance) {
        out.best_distance = r.best_tv;
        auto fi = r.best_f, gi = r.best_g;
        for (std::size_t l = r.best_level; l + 1 < grids.size(); ++l) {
          fi = detail::prolongate(fi, grids[l], grids[l + 1]);
          gi = detail::prolongate(gi, grids[l], grids[l + 1]);
        }
        std::vector<std::size_t> fs(fi.begin(), fi.end()), gs(gi.begin(), gi.end());
        CellFunctionEnumerator builder(grid, net, 0);
        best_pair.emplace(builder.build(fs), builder.build(gs));
      }
    }
    out.search_complete = false;
  }

  // Independent re-evaluation of the witness with a freshly built kernel.
  const double check = tv_distance(crho_quadrature(best_pair->first, best_pair->second, rho), target);
  if (std::abs(check - out.best_distance) > 1e-9) {
    throw NumericError("decide_gaussian: witness re-evaluation disagrees with the search",
                       "search=" + std::to_string(out.best_distance) + " recheck=" + std::to_string(check));
  }
  out.best_distance = check;
  out.verdict = classify(out.best_distance, rs.closeness, out.search_complete);
  out.witness = std::move(best_pair);
  return out;
}

}  // namespace nisim
