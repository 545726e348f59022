#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "nisim/stability.hpp"
#include "oracles.hpp"

using namespace nisim;

namespace {

// C_rho for one-dimensional cell functions summed rectangle by rectangle with
// the Simpson orthant oracle.
std::vector<double> crho_oracle_1d(const CellFunction& f, const CellFunction& g, double rho) {
  const auto e = f.grid().edges();
  const std::size_t n = f.grid().axis_cells();
  const std::size_t m = f.outcomes();
  auto corner = [&](std::size_t i, std::size_t j) {
    if (std::isinf(e[i]) && e[i] < 0) return 0.0;
    if (std::isinf(e[j]) && e[j] < 0) return 0.0;
    if (std::isinf(e[i])) return std::isinf(e[j]) ? 1.0 : oracle::normal_cdf(e[j]);
    return oracle::bvn_simpson(e[i], e[j], rho);
  };
  std::vector<std::vector<double>> c(n + 1, std::vector<double>(n + 1));
  for (std::size_t i = 0; i <= n; ++i)
    for (std::size_t j = 0; j <= n; ++j) c[i][j] = corner(i, j);
  std::vector<double> out(m * m, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double p = c[a + 1][b + 1] - c[a][b + 1] - c[a + 1][b] + c[a][b];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] += p * f.cell_value(a)[i] * g.cell_value(b)[j];
    }
  }
  return out;
}

double sum(const DistributionMatrix& d) {
  double s = 0.0;
  for (double e : d.entries()) s += e;
  return s;
}

}  // namespace

TEST(SimplexPointType, Validates) {
  EXPECT_NO_THROW(SimplexPoint({0.25, 0.75}));
  EXPECT_THROW(SimplexPoint({0.5, 0.6}), DataError);
  EXPECT_THROW(SimplexPoint({-0.1, 1.1}), DataError);
  EXPECT_EQ(SimplexPoint::vertex(3, 1)[1], 1.0);
}

TEST(CellGridType, CellLookupAndTies) {
  const CellGrid grid(1, 4.0, 8);
  EXPECT_EQ(grid.axis_cells(), 10u);
  EXPECT_EQ(grid.axis_cell(-100.0), 0u);
  EXPECT_EQ(grid.axis_cell(-4.0), 1u);  // boundary goes to the larger cell
  EXPECT_EQ(grid.axis_cell(-3.0), 2u);
  EXPECT_EQ(grid.axis_cell(-3.0000001), 1u);
  EXPECT_EQ(grid.axis_cell(0.0), 5u);
  EXPECT_EQ(grid.axis_cell(3.9999), 8u);
  EXPECT_EQ(grid.axis_cell(4.0), 9u);
  const auto e = grid.edges();
  EXPECT_EQ(e.size(), 11u);
  EXPECT_TRUE(std::isinf(e.front()));
  EXPECT_DOUBLE_EQ(e[5], 0.0);

  const CellGrid g2(2, 4.0, 4);
  const double x[] = {-5.0, 1.0};
  const auto flat = g2.cell_of(x);
  EXPECT_EQ(flat, 0u * 6 + 3u);
  const auto idx = g2.unflatten(flat);
  EXPECT_EQ(g2.flatten(idx), flat);
}

TEST(CellFunctionType, ValidatesAndEvaluates) {
  const CellGrid grid(1, 4.0, 2);
  EXPECT_THROW(CellFunction(grid, 2, std::vector<double>(7, 0.5)), DataError);
  EXPECT_THROW(CellFunction(grid, 2, std::vector<double>(8, 0.4)), DataError);
  const int labels[] = {0, 1, 1, 0};
  const auto f = CellFunction::from_labels(grid, 2, labels);
  const double x[] = {0.0};
  EXPECT_EQ(f(x)[1], 1.0);
  const double far[] = {9.0};
  EXPECT_EQ(f(far)[0], 1.0);
}

TEST(DistributionMatrixType, Validation) {
  EXPECT_NO_THROW(DistributionMatrix(2, {0.25, 0.25, 0.25, 0.25}));
  EXPECT_THROW(DistributionMatrix(2, {0.25, 0.25, 0.25, 0.3}), DataError);
  EXPECT_THROW(DistributionMatrix(2, {0.5, -0.1, 0.3, 0.3}), DataError);
  const DistributionMatrix clamped(2, {0.5 + 1e-11, -1e-11, 0.25, 0.25});
  EXPECT_EQ(clamped(0, 1), 0.0);
}

TEST(TotalVariation, Examples) {
  const DistributionMatrix p(2, {0.5, 0, 0, 0.5});
  const DistributionMatrix q(2, {0.25, 0.25, 0.25, 0.25});
  const DistributionMatrix r(2, {0, 0.5, 0.5, 0});
  EXPECT_EQ(tv_distance(p, p), 0.0);
  EXPECT_NEAR(tv_distance(p, q), 0.5, 1e-15);
  EXPECT_NEAR(tv_distance(p, r), 1.0, 1e-15);
  EXPECT_EQ(tv_distance(p, q), tv_distance(q, p));
  const DistributionMatrix p3(3, std::vector<double>(9, 1.0 / 9));
  EXPECT_THROW(tv_distance(p, p3), InvalidArgument);
}

TEST(CrhoQuadrature, ConstantFunctions) {
  const CellGrid grid(2, 4.0, 3);
  const Correlation rho(0.7);
  const auto e1 = CellFunction::constant(grid, SimplexPoint::vertex(3, 0));
  const auto c = crho_quadrature(e1, e1, rho);
  EXPECT_NEAR(c(0, 0), 1.0, 1e-12);
  for (std::size_t i = 1; i < 9; ++i) EXPECT_NEAR(c.entries()[i], 0.0, 1e-15);

  const auto u = CellFunction::constant(grid, SimplexPoint::uniform(3));
  const auto cu = crho_quadrature(u, u, rho);
  for (double e : cu.entries()) EXPECT_NEAR(e, 1.0 / 9.0, 1e-12);
}

TEST(CrhoQuadrature, ZeroCorrelationIsOuterProduct) {
  std::mt19937_64 gen(1);
  const CellGrid grid(2, 4.0, 4);
  const auto f = fixtures::random_cell_function(grid, 3, gen);
  const auto g = fixtures::random_cell_function(grid, 3, gen);
  const auto c = crho_quadrature(f, g, Correlation(0.0));
  const auto a = component_masses(f);
  const auto b = component_masses(g);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(c(i, j), a[i] * b[j], 1e-9);
}

TEST(CrhoQuadrature, MatchesRectangleOracle) {
  std::mt19937_64 gen(2);
  for (double r : {-0.8, -0.3, 0.45, 0.9}) {
    const CellGrid grid(1, 4.0, 6);
    const auto f = fixtures::random_cell_function(grid, 3, gen);
    const auto g = fixtures::random_cell_function(grid, 3, gen);
    const auto c = crho_quadrature(f, g, Correlation(r));
    const auto o = crho_oracle_1d(f, g, r);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(c.entries()[i], o[i], 1e-9);
  }
}

TEST(CrhoQuadrature, MarginalsIndependentOfRho) {
  std::mt19937_64 gen(3);
  const CellGrid grid(2, 4.0, 5);
  const auto f = fixtures::random_cell_function(grid, 3, gen);
  const auto g = fixtures::random_cell_function(grid, 3, gen);
  const auto a = component_masses(f);
  const auto b = component_masses(g);
  for (int t = 1; t <= 9; ++t) {
    const auto c = crho_quadrature(f, g, Correlation(0.1 * t));
    const auto rows = c.row_sums();
    const auto cols = c.column_sums();
    EXPECT_NEAR(sum(c), 1.0, 1e-9);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(rows[i], a[i], 1e-8);
      EXPECT_NEAR(cols[i], b[i], 1e-8);
    }
  }
}

TEST(CrhoQuadrature, RejectsMismatch) {
  const CellGrid g1(1, 4.0, 4), g2(1, 4.0, 6);
  const auto f = CellFunction::constant(g1, SimplexPoint::uniform(2));
  const auto g = CellFunction::constant(g2, SimplexPoint::uniform(2));
  EXPECT_THROW(crho_quadrature(f, g, Correlation(0.5)), InvalidArgument);
}

TEST(CrhoMonteCarlo, ConstantHasZeroVariance) {
  const CellGrid grid(1, 4.0, 4);
  const auto e1 = CellFunction::constant(grid, SimplexPoint::vertex(2, 0));
  const auto est = crho_montecarlo(e1, e1, Correlation(0.5), 5000, 1);
  EXPECT_EQ(est.matrix(0, 0), 1.0);
  EXPECT_EQ(est.max_standard_error(), 0.0);
}

TEST(CrhoMonteCarlo, AgreesWithQuadrature) {
  const CellGrid grid(1, 4.0, 16);
  const auto f = fixtures::threshold_function(grid, 7);
  const auto g = fixtures::threshold_function(grid, 11);
  const Correlation rho(0.5);
  const auto q = crho_quadrature(f, g, rho);
  const auto mc = crho_montecarlo(f, g, rho, 1'000'000, 42, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LE(std::abs(q.entries()[i] - mc.matrix.entries()[i]), 4.0 * mc.standard_error[i] + 1e-12);
  }
}

TEST(CrhoMonteCarlo, DeterministicAcrossThreads) {
  std::mt19937_64 gen(4);
  const CellGrid grid(2, 4.0, 3);
  const auto f = fixtures::random_cell_function(grid, 3, gen);
  const auto g = fixtures::random_cell_function(grid, 3, gen);
  const auto a = crho_montecarlo(f, g, Correlation(-0.4), 200'000, 9, 1);
  const auto b = crho_montecarlo(f, g, Correlation(-0.4), 200'000, 9, 4);
  const auto c = crho_montecarlo(f, g, Correlation(-0.4), 200'000, 10, 4);
  EXPECT_EQ(a.matrix.entries(), b.matrix.entries());
  EXPECT_EQ(a.standard_error, b.standard_error);
  EXPECT_NE(a.matrix.entries(), c.matrix.entries());
  EXPECT_THROW(crho_montecarlo(f, g, Correlation(0.1), 999, 1), InvalidArgument);
}

TEST(HermiteCoefficientTable, ConstantFunction) {
  const CellGrid grid(2, 4.0, 4);
  const auto f = CellFunction::constant(grid, SimplexPoint({0.2, 0.3, 0.5}));
  const auto h = hermite_coeffs(f, 5);
  EXPECT_NEAR(h.mean()[0], 0.2, 1e-10);
  EXPECT_NEAR(h.mean()[2], 0.5, 1e-10);
  for (std::size_t q = 1; q < h.indices().size(); ++q)
    for (double v : h.coefficient(q)) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(HermiteCoefficientTable, HalfLineIndicator) {
  const CellGrid grid(1, 4.0, 8);
  std::vector<int> labels(grid.cell_count());
  for (std::size_t c = 0; c < labels.size(); ++c) labels[c] = c >= 5 ? 0 : 1;  // e_1 on [0, inf)
  const auto f = CellFunction::from_labels(grid, 2, labels);
  const auto h = hermite_coeffs(f, 6);
  EXPECT_NEAR(h.mean()[0], 0.5, 1e-12);
  EXPECT_NEAR(h.coefficient(MultiIndex({1}))[0], 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-12);
  for (int n = 0; n <= 6; ++n) {
    const double ref = oracle::gaussian_simpson([n](double x) { return x >= 0 ? hermite_1d(n, x) : 0.0; }, 0.0, 12.0);
    EXPECT_NEAR(h.coefficient(MultiIndex({n}))[0], ref, 1e-9) << n;
  }
}

TEST(HermiteCoefficientTable, EvenFunctionHasNoOddTerms) {
  std::mt19937_64 gen(5);
  const CellGrid grid(1, 4.0, 6);
  const std::size_t n = grid.cell_count();
  std::vector<double> vals(n * 2);
  for (std::size_t c = 0; c < (n + 1) / 2; ++c) {
    const auto v = fixtures::random_simplex(2, gen);
    for (std::size_t i = 0; i < 2; ++i) vals[c * 2 + i] = vals[(n - 1 - c) * 2 + i] = v[i];
  }
  const auto h = hermite_coeffs(CellFunction(grid, 2, vals), 9);
  for (std::size_t q = 0; q < h.indices().size(); ++q) {
    if (h.indices()[q].degree() % 2 == 1)
      for (double v : h.coefficient(q)) EXPECT_NEAR(v, 0.0, 1e-10);
  }
}

TEST(HermiteCoefficientTable, QuadratureOverloadOnPolynomial) {
  const auto rule = quadrature_rule(2, 6);
  auto f = [](std::span<const double> x) { return std::vector<double>{x[0] * x[1], 1.0 + x[0] * x[0]}; };
  const auto h = hermite_coeffs(f, 2, 4, rule);
  EXPECT_NEAR(h.coefficient(MultiIndex({1, 1}))[0], 1.0, 1e-12);
  EXPECT_NEAR(h.coefficient(MultiIndex({2, 0}))[1], std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(h.mean()[1], 2.0, 1e-12);
}

TEST(CoefficientContraction, MatchesQuadrature) {
  const CellGrid grid(1, 4.0, 16);
  const Correlation rho(0.5);
  for (auto [s, t] : {std::pair{5u, 9u}, {8u, 8u}, {3u, 12u}}) {
    const auto f = fixtures::threshold_function(grid, s);
    const auto g = fixtures::threshold_function(grid, t);
    const auto c = crho_from_coeffs(hermite_coeffs(f, 12), hermite_coeffs(g, 12), rho);
    const auto q = crho_quadrature(f, g, rho);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(c.entries()[i], q.entries()[i], 1e-3);
  }
}

TEST(CoefficientContraction, ZeroCorrelationAndMismatch) {
  std::mt19937_64 gen(6);
  const CellGrid grid(2, 4.0, 3);
  const auto f = hermite_coeffs(fixtures::random_cell_function(grid, 2, gen), 4);
  const auto g = hermite_coeffs(fixtures::random_cell_function(grid, 2, gen), 4);
  const auto c = crho_from_coeffs(f, g, Correlation(0.0));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(c(i, j), f.mean()[i] * g.mean()[j], 1e-14);
  const auto g3 = hermite_coeffs(fixtures::random_cell_function(grid, 2, gen), 3);
  EXPECT_THROW(crho_from_coeffs(f, g3, Correlation(0.2)), InvalidArgument);
  EXPECT_THROW(Correlation(1.0), InvalidArgument);
}

TEST(DrhoMetric, Properties) {
  std::mt19937_64 gen(7);
  const CellGrid grid(1, 4.0, 6);
  std::vector<HermiteCoefficients> tabs;
  for (int i = 0; i < 6; ++i) tabs.push_back(hermite_coeffs(fixtures::random_cell_function(grid, 3, gen), 8));
  const Correlation lo(0.3), hi(0.7);
  for (const auto& a : tabs) {
    EXPECT_EQ(drho_metric(a, a, hi), 0.0);
    for (const auto& b : tabs) {
      EXPECT_NEAR(drho_metric(a, b, hi), drho_metric(b, a, hi), 1e-15);
      EXPECT_LE(drho_metric(a, b, lo), drho_metric(a, b, hi) + 1e-15);
      for (const auto& c : tabs) EXPECT_LE(drho_metric(a, c, hi), drho_metric(a, b, hi) + drho_metric(b, c, hi) + 1e-14);
    }
  }
  const auto v = hermite_coeffs(CellFunction::constant(grid, SimplexPoint({0.2, 0.3, 0.5})), 8);
  const auto w = hermite_coeffs(CellFunction::constant(grid, SimplexPoint({0.5, 0.5, 0.0})), 8);
  EXPECT_NEAR(drho_metric(v, w, hi), std::sqrt(0.09 + 0.04 + 0.25), 1e-10);
}

TEST(BorellInterval, ClosedFormsAndLimits) {
  const auto b0 = borell_bounds(0.3, 0.6, Correlation(0.0));
  EXPECT_NEAR(b0.c_lo, 0.18, 1e-15);
  EXPECT_NEAR(b0.c_hi, 0.18, 1e-15);
  const auto b = borell_bounds(0.5, 0.5, Correlation(0.5));
  EXPECT_NEAR(b.c_hi, 1.0 / 3.0, 1e-10);
  EXPECT_NEAR(b.c_lo, 1.0 / 6.0, 1e-10);
  const auto near = borell_bounds(0.3, 0.6, Correlation(0.9999));
  EXPECT_NEAR(near.c_hi, 0.3, 1e-2);
  EXPECT_THROW(borell_bounds(0.0, 0.5, Correlation(0.5)), InvalidArgument);
  EXPECT_THROW(borell_bounds(0.5, 1.0, Correlation(0.5)), InvalidArgument);
}

TEST(BorellInterval, MonteCarloOracle) {
  const double q = 0.0;  // Phi^{-1}(1/2)
  const auto mc = oracle::bvn_montecarlo(q, q, 0.5, 10'000'000, 123);
  const auto b = borell_bounds(0.5, 0.5, Correlation(0.5));
  EXPECT_NEAR(b.c_hi, mc.both_below, 5e-4);
  EXPECT_NEAR(b.c_lo, mc.x_above_y_below, 5e-4);
}

TEST(BorellInterval, OrderedForBothSigns) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.02, 0.98), ur(-0.95, 0.95);
  for (int i = 0; i < 200; ++i) {
    const double a = u(gen), b = u(gen);
    const auto bb = borell_bounds(a, b, Correlation(ur(gen)));
    EXPECT_LE(bb.c_lo, a * b + 1e-12);
    EXPECT_GE(bb.c_hi, a * b - 1e-12);
    EXPECT_GE(bb.c_lo, std::max(0.0, a + b - 1.0));
    EXPECT_LE(bb.c_hi, std::min(a, b));
  }
}

TEST(BorellInterval, ThresholdPairsInsideEnvelope) {
  std::mt19937_64 gen(9);
  const CellGrid grid(1, 4.0, 32);
  std::uniform_int_distribution<std::size_t> edge(1, 31);
  std::uniform_real_distribution<double> ur(-0.9, 0.9);
  for (int i = 0; i < 50; ++i) {
    const std::size_t s = edge(gen), t = edge(gen);
    const Correlation rho(ur(gen));
    const auto c = crho_quadrature(fixtures::threshold_function(grid, s), fixtures::threshold_function(grid, t), rho);
    const auto bb = borell_bounds(normal_cdf(grid.edge(s)), normal_cdf(grid.edge(t)), rho);
    EXPECT_GE(c(0, 0), bb.c_lo - 1e-4);
    EXPECT_LE(c(0, 0), bb.c_hi + 1e-4);
  }
}
