#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "nisim/gausscore.hpp"
#include "oracles.hpp"

using namespace nisim;

TEST(NormalCdf, MatchesSeriesOracle) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(10.0), 1.0, 1e-12);
  EXPECT_NEAR(normal_cdf(1.959964), 0.975, 1e-6);
  for (double x = -9.0; x <= 9.0; x += 0.137) {
    EXPECT_NEAR(normal_cdf(x), oracle::normal_cdf(x), 1e-12) << x;
    EXPECT_NEAR(normal_cdf(-x), 1.0 - normal_cdf(x), 1e-14) << x;
  }
}

TEST(NormalCdf, Monotone) {
  double prev = 0.0;
  for (double x = -12.0; x <= 12.0; x += 0.01) {
    const double v = normal_cdf(x);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(NormalCdf, RejectsNonFinite) {
  EXPECT_THROW(normal_cdf(std::nan("")), InvalidArgument);
  EXPECT_THROW(normal_cdf(INFINITY), InvalidArgument);
}

TEST(NormalQuantile, InvertsCdf) {
  EXPECT_DOUBLE_EQ(normal_quantile(0.5), 0.0);
  EXPECT_NEAR(normal_quantile(normal_cdf(1.3)), 1.3, 1e-10);
  EXPECT_NEAR(normal_quantile(0.975), oracle::normal_quantile(0.975), 1e-9);
  EXPECT_NEAR(normal_quantile(0.975), 1.959964, 1e-6);
  for (double p : {1e-12, 1e-6, 0.01, 0.2, 0.4999, 0.73, 0.999, 1 - 1e-9}) {
    EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-10) << p;
  }
}

TEST(NormalQuantile, RejectsBoundary) {
  EXPECT_THROW(normal_quantile(0.0), InvalidArgument);
  EXPECT_THROW(normal_quantile(1.0), InvalidArgument);
  EXPECT_THROW(normal_quantile(-0.1), InvalidArgument);
  EXPECT_THROW(normal_quantile(1.5), InvalidArgument);
}

TEST(Correlation, Validates) {
  EXPECT_THROW(Correlation(1.0), InvalidArgument);
  EXPECT_THROW(Correlation(-1.0), InvalidArgument);
  EXPECT_THROW(Correlation(std::nan("")), InvalidArgument);
  EXPECT_THROW(Correlation(0.0).require_nonzero("test"), InvalidArgument);
  EXPECT_NO_THROW(Correlation(0.3).require_nonzero("test"));
}

TEST(MultiIndexSet, CountsAndDegrees) {
  const auto idx = multi_indices(2, 3);
  EXPECT_EQ(idx.size(), 10u);  // C(3+2, 2)
  EXPECT_EQ(idx.front().degree(), 0);
  for (const auto& j : idx) EXPECT_LE(j.degree(), 3);
  EXPECT_EQ(multi_indices(3, 4).size(), 35u);
}

TEST(Hermite, KnownValues) {
  const MultiIndex zero({0, 0, 0});
  const double x3[] = {0.3, -1.2, 4.0};
  EXPECT_DOUBLE_EQ(hermite_orthonormal(zero, x3), 1.0);
  const double x1[] = {2.0};
  EXPECT_DOUBLE_EQ(hermite_orthonormal(MultiIndex({1}), x1), 2.0);
  const double one[] = {1.0};
  EXPECT_NEAR(hermite_orthonormal(MultiIndex({2}), one), 0.0, 1e-15);
  EXPECT_NEAR(hermite_1d(3, 1.7), (1.7 * 1.7 * 1.7 - 3 * 1.7) / std::sqrt(6.0), 1e-13);
  EXPECT_THROW(hermite_orthonormal(MultiIndex({1, 1}), x1), InvalidArgument);
}

TEST(Hermite, NormOfDegreeTwoBySimpson) {
  const double v = oracle::gaussian_simpson([](double x) {
    const double h = hermite_1d(2, x);
    return h * h;
  });
  EXPECT_NEAR(v, 1.0, 1e-10);
}

TEST(Hermite, GramMatrixIsIdentity) {
  for (std::size_t k : {1u, 2u}) {
    const auto rule = quadrature_rule(k, 10);
    const auto idx = multi_indices(k, 4);
    for (const auto& a : idx) {
      for (const auto& b : idx) {
        double s = 0.0;
        for (std::size_t p = 0; p < rule.size(); ++p) {
          s += rule.weights[p] * hermite_orthonormal(a, rule.point(p)) * hermite_orthonormal(b, rule.point(p));
        }
        EXPECT_NEAR(s, a == b ? 1.0 : 0.0, 1e-8);
      }
    }
  }
}

TEST(Quadrature, WeightsSumToOne) {
  for (int q : {1, 2, 5, 12, 30}) {
    const auto r = quadrature_rule(1, q);
    double s = 0.0;
    for (double w : r.weights) {
      EXPECT_GT(w, 0.0);
      s += w;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Quadrature, MomentExactness) {
  const auto r2 = quadrature_rule(1, 2);
  double m2 = 0.0;
  for (std::size_t p = 0; p < r2.size(); ++p) m2 += r2.weights[p] * r2.nodes[p] * r2.nodes[p];
  EXPECT_NEAR(m2, 1.0, 1e-14);

  const auto r8 = quadrature_rule(1, 8);
  double m8 = 0.0;
  for (std::size_t p = 0; p < r8.size(); ++p) m8 += r8.weights[p] * std::pow(r8.nodes[p], 8);
  EXPECT_NEAR(m8, 105.0, 1e-9);

  const auto r44 = quadrature_rule(2, 4);
  double m22 = 0.0;
  for (std::size_t p = 0; p < r44.size(); ++p) {
    const auto x = r44.point(p);
    m22 += r44.weights[p] * x[0] * x[0] * x[1] * x[1];
  }
  EXPECT_NEAR(m22, 1.0, 1e-12);
}

TEST(Quadrature, AllMonomialsUpToExactDegree) {
  for (int q = 1; q <= 8; ++q) {
    const auto r = quadrature_rule(2, q);
    for (int a = 0; a <= 2 * q - 1; ++a) {
      for (int b = 0; b <= 2 * q - 1; ++b) {
        double s = 0.0;
        for (std::size_t p = 0; p < r.size(); ++p) {
          const auto x = r.point(p);
          s += r.weights[p] * std::pow(x[0], a) * std::pow(x[1], b);
        }
        const double expect = oracle::gaussian_moment(a) * oracle::gaussian_moment(b);
        // Odd moments cancel terms of size sqrt(E x^{2a} E y^{2b}).
        const double scale = std::sqrt(oracle::gaussian_moment(2 * a) * oracle::gaussian_moment(2 * b));
        EXPECT_NEAR(s, expect, 1e-9 * std::max(1.0, expect) + 1e-14 * scale) << q << ' ' << a << ' ' << b;
      }
    }
  }
}

TEST(Quadrature, BudgetEnforced) {
  EXPECT_THROW(quadrature_rule(8, 10), InvalidArgument);
  EXPECT_THROW(quadrature_rule(0, 3), InvalidArgument);
  EXPECT_THROW(quadrature_rule(1, 0), InvalidArgument);
  EXPECT_NO_THROW(quadrature_rule(2, 10, 100));
  EXPECT_THROW(quadrature_rule(2, 11, 100), InvalidArgument);
}

TEST(OrnsteinUhlenbeck, Constants) {
  const auto rule = quadrature_rule(2, 6);
  const Correlation rho(0.6);
  const double x[] = {0.4, -2.0};
  EXPECT_NEAR(ou_apply([](std::span<const double>) { return 1.0; }, rho, x, rule), 1.0, 1e-13);
}

TEST(OrnsteinUhlenbeck, ZeroCorrelationAverages) {
  const auto rule = quadrature_rule(1, 10);
  auto f = [](std::span<const double> y) { return y[0] * y[0] * y[0] + 2.0 * y[0] * y[0]; };
  const Correlation zero(0.0);
  for (double x : {-3.0, 0.0, 1.7}) {
    const double p[] = {x};
    EXPECT_NEAR(ou_apply(f, zero, p, rule), 2.0, 1e-12);
  }
}

TEST(OrnsteinUhlenbeck, EigenrelationOnHermite) {
  for (std::size_t k : {1u, 2u}) {
    const auto rule = quadrature_rule(k, 8);
    for (double r : {-0.7, -0.3, 0.3, 0.7}) {
      const Correlation rho(r);
      for (const auto& j : multi_indices(k, 6)) {
        auto h = [&](std::span<const double> y) { return hermite_orthonormal(j, y); };
        double worst = 0.0;
        for (std::size_t p = 0; p < rule.size(); ++p) {
          const auto x = rule.point(p);
          const double lhs = ou_apply(h, rho, x, rule);
          const double rhs = std::pow(r, j.degree()) * hermite_orthonormal(j, x);
          worst = std::max(worst, std::abs(lhs - rhs));
        }
        EXPECT_LE(worst, 1e-8);
      }
    }
  }
}

TEST(OrnsteinUhlenbeck, Semigroup) {
  const auto rule = quadrature_rule(1, 8);
  auto f = [](std::span<const double> y) { return 1.0 - y[0] + 0.5 * y[0] * y[0] * y[0] * y[0]; };
  const Correlation r1(0.8), r2(-0.5), r12(-0.4);
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 10; ++i) {
    const double x[] = {u(gen)};
    auto inner = [&](std::span<const double> y) { return ou_apply(f, r2, y, rule); };
    EXPECT_NEAR(ou_apply(inner, r1, x, rule), ou_apply(f, r12, x, rule), 1e-6);
  }
}

TEST(GaussKernel, Properties) {
  const Correlation zero(0.0), rho(0.55);
  const double x[] = {0.3, -0.8};
  const double y[] = {1.1, 0.4};
  const double gx = std::exp(-0.5 * (0.09 + 0.64)) / (2 * std::numbers::pi);
  const double gy = std::exp(-0.5 * (1.21 + 0.16)) / (2 * std::numbers::pi);
  EXPECT_NEAR(gauss_kernel(x, y, zero), gx * gy, 1e-15);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    const double a[] = {n(gen), n(gen)};
    const double b[] = {n(gen), n(gen)};
    const double g1 = gauss_kernel(a, b, rho);
    EXPECT_GT(g1, 0.0);
    EXPECT_NEAR(g1, gauss_kernel(b, a, rho), 1e-14);
  }
}

TEST(GaussKernel, IntegratesToOne) {
  const Correlation rho(0.5);
  // Simpson in both variables on [-10, 10]^2.
  const int n = 800;
  const double h = 20.0 / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double wi = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    for (int j = 0; j <= n; ++j) {
      const double wj = (j == 0 || j == n) ? 1 : (j % 2 ? 4 : 2);
      const double x[] = {-10 + i * h};
      const double y[] = {-10 + j * h};
      s += wi * wj * gauss_kernel(x, y, rho);
    }
  }
  EXPECT_NEAR(s * h * h / 9.0, 1.0, 1e-6);
}

TEST(BivariateOrthant, IndependenceAndLimits) {
  const Correlation zero(0.0);
  EXPECT_NEAR(bvn_orthant(0.3, -1.2, zero), normal_cdf(0.3) * normal_cdf(-1.2), 1e-15);
  const Correlation r(0.4);
  EXPECT_EQ(bvn_orthant(-INFINITY, 0.5, r), 0.0);
  EXPECT_NEAR(bvn_orthant(INFINITY, 0.5, r), normal_cdf(0.5), 1e-16);
  EXPECT_NEAR(bvn_orthant(0.5, INFINITY, r), normal_cdf(0.5), 1e-16);
  const Correlation near_one(0.9999);
  EXPECT_NEAR(bvn_orthant(0.2, 0.9, near_one), normal_cdf(0.2), 1e-2);
  EXPECT_NEAR(bvn_orthant(-0.4, -1.0, near_one), normal_cdf(-1.0), 1e-2);
}

TEST(BivariateOrthant, ClosedFormAtOrigin) {
  const Correlation r(0.5);
  const double exact = 0.25 + std::asin(0.5) / (2 * std::numbers::pi);
  EXPECT_NEAR(bvn_orthant(0.0, 0.0, r), exact, 1e-12);
  const auto mc = oracle::bvn_montecarlo(0.0, 0.0, 0.5, 10'000'000, 11);
  EXPECT_NEAR(bvn_orthant(0.0, 0.0, r), mc.both_below, 5e-4);
}

TEST(BivariateOrthant, MatchesSimpsonOracle) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-3.5, 3.5), ur(-0.98, 0.98);
  for (int i = 0; i < 40; ++i) {
    const double s = u(gen), t = u(gen), r = ur(gen);
    EXPECT_NEAR(bvn_orthant(s, t, Correlation(r)), oracle::bvn_simpson(s, t, r), 1e-10)
        << s << ' ' << t << ' ' << r;
  }
}

TEST(BivariateOrthant, ReflectionAndBounds) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(-4.0, 4.0), ur(-0.99, 0.99);
  for (int i = 0; i < 100; ++i) {
    const double s = u(gen), t = u(gen), r = ur(gen);
    const double v = bvn_orthant(s, t, Correlation(r));
    EXPECT_NEAR(v, normal_cdf(s) - bvn_orthant(s, -t, Correlation(-r)), 1e-9);
    EXPECT_GE(v, std::max(0.0, normal_cdf(s) + normal_cdf(t) - 1.0));
    EXPECT_LE(v, std::min(normal_cdf(s), normal_cdf(t)));
  }
}
