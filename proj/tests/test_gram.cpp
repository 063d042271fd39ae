#include <gtest/gtest.h>

#include <sstream>

#include "obsgrid/gram.hpp"
#include "obsgrid/optimize.hpp"
#include "oracles.hpp"

using namespace obsgrid;
using oracle::pi;

namespace {

const SpectralModel& dirichlet() {
  static const SpectralModel m = build_model(ModelName::dirichlet_1d);
  return m;
}

GridRef grid1024() {
  static const GridRef g = make_grid(DomainSpec::interval(0, pi), 1024);
  return g;
}

DensityField centered(const GridRef& g) {
  return DensityField(g, sample_average(g, [](std::span<const double> x) {
                           return (x[0] > pi / 4 && x[0] < 3 * pi / 4) ? 1.0 : 0.0;
                         }).values);
}

DensityField random_feasible(const GridRef& g, double L, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  std::vector<double> v(g->size());
  // a few smooth bumps plus noise, so the densities are not all near-constant
  const double f1 = u(rng), f2 = u(rng), s = u(rng);
  for (std::size_t c = 0; c < v.size(); ++c) {
    const double x = g->center(c)[0];
    v[c] = s * std::sin(f1 * 3 * x) + std::cos(f2 * 2 * x) + 0.3 * u(rng);
  }
  return project_box_mean(g, v, L);
}

double naive_min(const ObsMatrix& g) { return oracle::min_eigenvalue_bisect(g.reconstruct()); }

}  // namespace

TEST(MassMatrix, Identity) {
  const auto g = grid1024();
  const auto m = mass_matrix(dirichlet(), DensityField(g, 1.0), first_modes(8));
  EXPECT_LE((m.m - MatrixXc::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-8);
  const auto h = mass_matrix(dirichlet(), DensityField(g, 0.3), first_modes(8));
  EXPECT_LE((h.m - 0.3 * MatrixXc::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(MassMatrix, CenteredIndicatorClosedForm) {
  const auto g = grid1024();
  const auto m = mass_matrix(dirichlet(), centered(g), {0, 1, 2}).m;
  // antiderivative oracle, independent of the grid rule
  auto entry = [](int i, int j) {
    return oracle::simpson([&](double x) { return 2 / pi * std::sin(i * x) * std::sin(j * x); }, pi / 4, 3 * pi / 4);
  };
  EXPECT_NEAR(m(0, 0).real(), 0.5 + 1 / pi, 1e-10);
  EXPECT_NEAR(std::abs(m(0, 1)), 0.0, 1e-12);
  EXPECT_NEAR(m(0, 2).real(), -1 / pi, 1e-10);
  EXPECT_NEAR(m(1, 1).real(), 0.5, 1e-10);
  EXPECT_NEAR(m(2, 2).real(), 0.5 - 1 / (3 * pi), 1e-10);
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 3; ++j) EXPECT_NEAR(m(i - 1, j - 1).real(), entry(i, j), 1e-10);
}

TEST(MassMatrix, HermitianPsd) {
  const auto m = build_model(ModelName::coupled_rect_2d);
  const auto g = make_grid(m.domain(), 24);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> a(g->size());
  for (auto& v : a) v = u(rng);
  const auto mm = mass_matrix(m, DensityField(g, a), first_modes(m.size())).m;
  EXPECT_LE((mm - mm.adjoint()).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_GE(min_eigpair(mm).value, -1e-10 * mm.norm());
}

TEST(MinEigpair, Examples) {
  MatrixXc d = MatrixXc::Zero(3, 3);
  d(0, 0) = 3;
  d(1, 1) = 1;
  d(2, 2) = 2;
  const auto p = min_eigpair(d);
  EXPECT_NEAR(p.value, 1.0, 1e-15);
  EXPECT_NEAR(std::abs(p.vector(1)), 1.0, 1e-15);
  EXPECT_GE(p.vector(1).real(), 0.0);
  MatrixXc t(2, 2);
  t << 2, 1, 1, 2;
  const auto q = min_eigpair(t);
  EXPECT_NEAR(q.value, 1.0, 1e-14);
  EXPECT_NEAR(std::abs(q.vector(0) + q.vector(1)), 0.0, 1e-14);
}

TEST(MinEigpair, RejectsNonHermitian) {
  MatrixXc t(2, 2);
  t << 1, 2, 0, 1;
  EXPECT_THROW(min_eigpair(t), ContractError);
}

TEST(MinEigpair, MatchesInertiaOracle) {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 60; ++k) {
    const std::size_t n = 1 + k % 8;
    const MatrixXc h = oracle::random_hermitian(n, rng);
    const auto p = min_eigpair(h);
    EXPECT_NEAR(p.value, oracle::min_eigenvalue_bisect(h), 1e-9);
    EXPECT_NEAR(p.vector.norm(), 1.0, 1e-13);
    EXPECT_LE((h * p.vector - p.value * p.vector).norm(), 1e-10 * (1 + h.norm()));
    // phase: largest component real and nonnegative
    Eigen::Index imax;
    p.vector.cwiseAbs().maxCoeff(&imax);
    EXPECT_NEAR(p.vector(imax).imag(), 0.0, 1e-14);
    EXPECT_GE(p.vector(imax).real(), 0.0);
  }
}

TEST(Assemble, DiagonalExample) {
  const auto g = grid1024();
  const auto G = assemble(dirichlet(), centered(g), 0.5, 2).reconstruct();
  EXPECT_NEAR(G(0, 0).real(), (std::exp(1.0) - 1) / 2 * (0.5 + 1 / pi), 1e-9);
  EXPECT_NEAR(G(1, 1).real(), (std::exp(4.0) - 1) / 8 * 0.5, 1e-9);
  EXPECT_NEAR(std::abs(G(0, 1)), 0.0, 1e-12);
  EXPECT_NEAR(G(0, 0).real(), 0.7030435, 1e-6);
  EXPECT_NEAR(G(1, 1).real(), 3.349885, 1e-6);
}

TEST(Assemble, MatchesTimeSpaceQuadrature) {
  const auto g = grid1024();
  const auto G = assemble(dirichlet(), centered(g), 0.5, 3).reconstruct();
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 3; ++j) {
      const double space = oracle::simpson(
          [&](double x) { return 2 / pi * std::sin(i * x) * std::sin(j * x); }, pi / 4, 3 * pi / 4);
      const double time = oracle::trapezoid_exp(double(i * i + j * j), 0.5).real();
      EXPECT_NEAR(G(i - 1, j - 1).real(), time * space, 1e-9 * (1 + std::abs(time * space)));
    }
}

TEST(Assemble, ConstantDensityIsDiagonal) {
  const auto G = assemble(dirichlet(), DensityField(grid1024(), 0.4), 0.3, 5).reconstruct();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double want = i == j ? 0.4 * gamma(double((i + 1) * (i + 1)), 0.3) : 0.0;
      EXPECT_NEAR(std::abs(G(i, j) - want), 0.0, 1e-9 * (1 + want));
    }
}

TEST(Assemble, CsvExport) {
  std::ostringstream os;
  write_csv(os, assemble(dirichlet(), DensityField(grid1024(), 0.5), 1.0, 2));
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "i,j,re,im,exponent_i,exponent_j");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 5);
}

TEST(ObsConstant, ConstantDensityAnchor) {
  const auto g = grid1024();
  for (double T : {0.25, 1.0, 2.0})
    for (std::size_t n : {1u, 2u, 4u, 8u, 16u}) {
      const double c = obs_constant(dirichlet(), DensityField(g, 0.5), T, n);
      EXPECT_NEAR(c / (0.5 * gamma(1.0, T)), 1.0, 1e-10) << T << " " << n;
    }
  EXPECT_NEAR(obs_constant(dirichlet(), DensityField(g, 0.5), 1.0, 8), 1.597264, 1e-6);
}

TEST(ObsConstant, DiagonalIndicator) {
  EXPECT_NEAR(obs_constant(dirichlet(), centered(grid1024()), 0.5, 2), (std::exp(1.0) - 1) / 2 * (0.5 + 1 / pi), 1e-9);
}

TEST(ObsConstant, SchurPathMatchesGraded) {
  const auto a = centered(grid1024());
  const double full = obs_constant(dirichlet(), a, 0.5, 8);
  const ObsProblem forced(dirichlet(), grid1024(), 0.5, 8, 50.0);
  EXPECT_LT(forced.matrix(a).light_size(), 8u);
  EXPECT_NEAR(forced.value(a) / full, 1.0, 1e-9);
}

TEST(ObsConstant, SchurPathMatchesNaiveWhenRepresentable) {
  // naive: inertia bisection straight on the reconstructed G. A dense QR
  // eigensolver loses the small eigenvalue of such graded matrices entirely.
  std::mt19937_64 rng(23);
  const auto g = make_grid(DomainSpec::interval(0, pi), 256);
  for (int k = 0; k < 10; ++k) {
    const auto a = random_feasible(g, 0.5, rng);
    for (double T : {0.5, 0.8}) {
      const ObsProblem plain(dirichlet(), g, T, 8);
      const ObsProblem forced(dirichlet(), g, T, 8, 50.0);
      ASSERT_LT(forced.matrix(a).light_size(), 8u);
      const double naive = naive_min(plain.matrix(a));
      EXPECT_NEAR(forced.value(a) / naive, 1.0, 1e-9);
      EXPECT_NEAR(plain.value(a) / naive, 1.0, 1e-9);
    }
  }
}

TEST(ObsConstant, AllStiffIsAnError) {
  const ObsProblem p(dirichlet(), grid1024(), 1.0, 4, 1.0);
  try {
    p.value(DensityField(grid1024(), 0.5));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("T too large for N"), std::string::npos);
  }
}

TEST(ObsConstant, LargeTFinite) {
  const double c = obs_constant(dirichlet(), centered(grid1024()), 20.0, 16);
  EXPECT_TRUE(std::isfinite(c));
  EXPECT_GT(c, 0.0);
}

TEST(ObsConstant, Properties) {
  std::mt19937_64 rng(31);
  const auto g = make_grid(DomainSpec::interval(0, pi), 256);
  const ModeProducts j1(dirichlet(), g, dirichlet().j1());
  for (int k = 0; k < 15; ++k) {
    const auto a = random_feasible(g, 0.5, rng), b = random_feasible(g, 0.5, rng);
    for (double T : {0.3, 1.0}) {
      // monotone truncation
      double prev = std::numeric_limits<double>::infinity();
      for (std::size_t n = 1; n <= 8; ++n) {
        const double c = obs_constant(dirichlet(), a, T, n);
        EXPECT_LE(c, prev + 1e-10 * (1 + std::abs(prev)));
        prev = c;
      }
      const ObsProblem p(dirichlet(), g, T, 6);
      const double ca = p.value(a), cb = p.value(b);
      // concavity
      for (double th : {0.2, 0.5, 0.8}) {
        DensityField m(g, 0.0);
        for (std::size_t c = 0; c < m.size(); ++c) m[c] = th * a[c] + (1 - th) * b[c];
        EXPECT_GE(p.value(m), th * ca + (1 - th) * cb - 1e-9);
      }
      // J1 restriction bound and randomized bound
      EXPECT_LE(ca, gamma(1.0, T) * sigma1(j1, a) + 1e-9);
      EXPECT_GE(obs_constant_rand(p, a), ca - 1e-10);
      // PSD of the assembled matrix
      const MatrixXc G = p.matrix(a).reconstruct();
      EXPECT_GE(ca, -1e-10 * G.norm());
    }
  }
}

TEST(ObsConstantRand, Examples) {
  const auto g = grid1024();
  EXPECT_NEAR(obs_constant_rand(dirichlet(), DensityField(g, 0.5), 1.0, 8), 0.5 * gamma(1.0, 1.0), 1e-12);
  EXPECT_NEAR(obs_constant_rand(dirichlet(), centered(g), 0.5, 3), (std::exp(1.0) - 1) / 2 * (0.5 + 1 / pi), 1e-9);
  // stays finite where gamma overflows
  EXPECT_NEAR(obs_constant_rand(dirichlet(), DensityField(g, 0.5), 100.0, 16), 0.5 * (std::exp(200.0) - 1) / 2,
              1e-10 * std::exp(200.0));
}

TEST(HumNorm, Examples) {
  EXPECT_DOUBLE_EQ(hum_norm_from_constant(2.0), 0.5);
  EXPECT_TRUE(std::isinf(hum_norm_from_constant(1e-301)));
  EXPECT_TRUE(std::isinf(hum_norm_from_constant(0.0)));
  EXPECT_NEAR(hum_norm(dirichlet(), DensityField(grid1024(), 0.5), 1.0, 8), 0.626070, 1e-6);
}

TEST(QuadraticDecomposition, ConstantDensityHasNoCrossTerm) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd;
  const auto g = grid1024();
  for (int k = 0; k < 100; ++k) {
    // G entries stay O(1e4) here, so rounding in the off-diagonal mass entries is far below 1e-12
    const double T = k % 2 ? 0.25 : 0.5;
    const ObsProblem p(dirichlet(), g, T, 4);
    VectorXc c(4);
    for (int j = 0; j < 4; ++j) c(j) = cplx(nd(rng), nd(rng));
    c(0) /= std::abs(c(0));
    c.tail(3) /= c.tail(3).norm();
    const double eps = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto q = quadratic_decomposition(p, DensityField(g, 0.5), eps, c);
    EXPECT_NEAR(q.D, 0.0, 1e-12);
  }
}

TEST(QuadraticDecomposition, ConstantDensityCrossTermAtScale) {
  // at large T the residue is rounding times the entry scale
  const auto g = grid1024();
  const ObsProblem p(dirichlet(), g, 1.0, 6);
  VectorXc c = VectorXc::Zero(6);
  c(0) = 1.0;
  c(5) = 1.0;
  const auto q = quadratic_decomposition(p, DensityField(g, 0.5), 0.5, c);
  EXPECT_LE(std::abs(q.D), 1e-14 * std::sqrt(q.A * q.B));
}

TEST(QuadraticDecomposition, CauchySchwarz) {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> nd;
  const auto g = make_grid(DomainSpec::interval(0, pi), 256);
  for (int k = 0; k < 100; ++k) {
    const auto a = random_feasible(g, 0.5, rng);
    const ObsProblem p(dirichlet(), g, 0.5 + (k % 3) * 0.5, 5);
    VectorXc c(5);
    for (int j = 0; j < 5; ++j) c(j) = cplx(nd(rng), nd(rng));
    c(0) /= std::abs(c(0));
    c.tail(4) /= c.tail(4).norm();
    const double eps = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto q = quadratic_decomposition(p, a, eps, c);
    EXPECT_LE(std::abs(q.D), std::sqrt(q.A * q.B) + 1e-10);
  }
}

TEST(QuadraticDecomposition, EpsOneAndNormalization) {
  const auto g = grid1024();
  const ObsProblem p(dirichlet(), g, 1.0, 3);
  VectorXc c(3);
  c << 1.0, cplx(0.6, 0), cplx(0, 0.8);
  const auto q = quadratic_decomposition(p, centered(g), 1.0, c);
  EXPECT_NEAR(q.E, q.A, 1e-12 * std::abs(q.A));
  c(1) = 2.0;
  EXPECT_THROW(quadratic_decomposition(p, centered(g), 0.5, c), ConfigError);
}

TEST(Resolution, Guard) {
  std::string why;
  EXPECT_TRUE(resolution_ok(dirichlet(), *grid1024(), 16, &why));
  EXPECT_FALSE(resolution_ok(dirichlet(), *make_grid(DomainSpec::interval(0, pi), 64), 16, &why));
  EXPECT_FALSE(why.empty());
}
