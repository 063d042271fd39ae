#pragma once

// Truncated observability quadratic form
//
//   C_T^(N)(a) = min_{|b| = 1}  int_0^T int_Omega a |sum_j b_j e^{lambda_j t} phi_j|^2,
//
// i.e. the smallest eigenvalue of G_ij = tau_ij(T) M_ij(a). G is graded: its
// entries scale like exp(e_i + e_j) with e_j = Re(lambda_j) T. We never
// eigensolve G itself. Writing G = D Ghat D with D = diag(exp(e_j)), the
// smallest eigenvalue is the root of mu -> lambda_min(Ghat - mu D~^-2), which
// only involves O(1) quantities. Modes with 2 e_j > theta are eliminated
// through a Schur complement first.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "obsgrid/geometry.hpp"
#include "obsgrid/spectral.hpp"

namespace obsgrid {

using MatrixXc = Eigen::MatrixXcd;
using VectorXc = Eigen::VectorXcd;

// ---------------------------------------------------------------------------
// Dense Hermitian helpers

struct EigPair {
  double value = 0.0;
  VectorXc vector;
};

namespace detail {

inline void check_hermitian(const MatrixXc& h, const char* who) {
  if (h.rows() != h.cols() || h.rows() == 0) throw ContractError(std::string(who) + ": need a nonempty square matrix");
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  if ((h - h.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ContractError(std::string(who) + ": matrix is not Hermitian");
}

/// Rotates v so that its largest-magnitude entry is real and nonnegative.
inline void fix_phase(VectorXc& v) {
  Eigen::Index k = 0;
  v.cwiseAbs().maxCoeff(&k);
  if (std::abs(v[k]) > 0) v *= std::conj(v[k]) / std::abs(v[k]);
}

}  // namespace detail

/// Smallest eigenpair of a Hermitian matrix; unit vector with fixed phase.
inline EigPair min_eigpair(const MatrixXc& h) {
  detail::check_hermitian(h, "min_eigpair");
  const MatrixXc sym = 0.5 * (h + h.adjoint());
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(sym);
  if (es.info() != Eigen::Success) throw std::runtime_error("min_eigpair: eigensolver failed");
  VectorXc v = es.eigenvectors().col(0);
  detail::fix_phase(v);
  return {es.eigenvalues()[0], v};
}

// ---------------------------------------------------------------------------
// Per-cell mode products

/// Cellwise integrals P_c(i, j) = int_cell phi_i . conj(phi_j) for a fixed mode set.
/// Mass matrices and quadratic-form densities are linear combinations of these.
class ModeProducts {
 public:
  ModeProducts(const SpectralModel& model, GridRef grid, std::vector<std::size_t> modes)
      : grid_(std::move(grid)), modes_(std::move(modes)) {
    if (modes_.empty()) throw ContractError("mode set must be nonempty");
    for (auto j : modes_)
      if (j >= model.size()) throw ContractError("mode index beyond model truncation");
    const std::size_t n = modes_.size();
    const std::size_t cells = grid_->size();
    pairs_ = n * (n + 1) / 2;
    data_.assign(pairs_ * cells, cplx(0.0));

    std::vector<cplx> dir(pairs_);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) dir[pair(i, j)] = model.direction_product(modes_[i], modes_[j]);

    std::vector<double> s(n);
    std::vector<double> acc(pairs_);
    for (std::size_t c = 0; c < cells; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      grid_->for_each_quad_point(c, [&](std::span<const double> x, double w) {
        for (std::size_t i = 0; i < n; ++i) s[i] = model.spatial(modes_[i], x);
        for (std::size_t i = 0; i < n; ++i) {
          const double wi = w * s[i];
          for (std::size_t j = i; j < n; ++j) acc[pair(i, j)] += wi * s[j];
        }
      });
      for (std::size_t p = 0; p < pairs_; ++p) data_[p * cells + c] = acc[p] * dir[p];
    }
  }

  const GridRef& grid() const { return grid_; }
  const std::vector<std::size_t>& modes() const { return modes_; }
  std::size_t dim() const { return modes_.size(); }

  /// P_c(i, j) for i <= j in local (position) indices.
  std::span<const cplx> entry(std::size_t i, std::size_t j) const {
    return {data_.data() + pair(i, j) * grid_->size(), grid_->size()};
  }

  /// M(a) = sum_c a_c P_c, Hermitian by construction.
  MatrixXc mass(std::span<const double> a) const {
    if (a.size() != grid_->size()) throw ContractError("density does not match grid");
    const std::size_t n = dim();
    MatrixXc m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const auto p = entry(i, j);
        cplx acc = 0.0;
        for (std::size_t c = 0; c < a.size(); ++c) acc += a[c] * p[c];
        if (i == j) acc = acc.real();
        m(i, j) = acc;
        m(j, i) = std::conj(acc);
      }
    return m;
  }

  /// Cell integrals g_c = sum_ij W_ij P_c(i, j) for Hermitian W, so that
  /// sum_c a_c g_c = sum_ij W_ij M_ij(a).
  std::vector<double> cell_form(const MatrixXc& w) const {
    const std::size_t n = dim(), cells = grid_->size();
    std::vector<double> g(cells, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const auto p = entry(i, j);
        const cplx wij = w(i, j);
        if (wij == cplx(0.0)) continue;
        const double f = i == j ? 1.0 : 2.0;
        for (std::size_t c = 0; c < cells; ++c) g[c] += f * (wij * p[c]).real();
      }
    return g;
  }

 private:
  std::size_t pair(std::size_t i, std::size_t j) const {
    const std::size_t n = modes_.size();
    return i * n - i * (i - 1) / 2 + (j - i);
  }

  GridRef grid_;
  std::vector<std::size_t> modes_;
  std::size_t pairs_ = 0;
  std::vector<cplx> data_;  // pair-major, then cell
};

struct MassMatrix {
  std::vector<std::size_t> indices;
  MatrixXc m;
};

inline MassMatrix mass_matrix(const ModeProducts& products, const DensityField& a) {
  return {products.modes(), products.mass(a.values)};
}

inline MassMatrix mass_matrix(const SpectralModel& model, const DensityField& a, std::vector<std::size_t> indices) {
  return mass_matrix(ModeProducts(model, a.grid, std::move(indices)), a);
}

inline std::vector<std::size_t> first_modes(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// ---------------------------------------------------------------------------
// Factored observability matrix

/// G_ij = exp(e_i + e_j) * mantissa_ij. Modes are split into a light block
/// (2 e_j <= theta) and a stiff block; the light block is a prefix.
struct ObsMatrix {
  MatrixXc mantissa;
  Eigen::VectorXd exponents;
  double theta = kDefaultOverflowThreshold;

  std::size_t size() const { return static_cast<std::size_t>(exponents.size()); }
  std::size_t light_size() const {
    std::size_t k = 0;
    while (k < size() && 2.0 * exponents[static_cast<Eigen::Index>(k)] <= theta) ++k;
    return k;
  }

  /// Raw G; only valid when every entry is representable.
  MatrixXc reconstruct() const {
    if (light_size() != size()) throw OverflowError("ObsMatrix: stiff modes present, G is not representable");
    const Eigen::Index n = mantissa.rows();
    MatrixXc g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) g(i, j) = std::exp(exponents[i] + exponents[j]) * mantissa(i, j);
    return g;
  }
};

/// Smallest eigenpair of a factored matrix. The eigenvalue is
/// exp(log_scale) * scaled_value; `w` is the unit eigenvector of G and `u`
/// the same vector in scaled coordinates (u_j = exp(e_j - e_0) w_j), which
/// stays finite for stiff modes where w_j underflows.
struct GradedEigen {
  double log_scale = 0.0;
  double scaled_value = 0.0;
  std::vector<VectorXc> w;  // orthonormal basis of the minimal cluster; w[0] is the eigenvector
  std::vector<VectorXc> u;

  double value() const { return scaled_value * std::exp(log_scale); }
  std::size_t cluster_size() const { return w.size(); }
};

/// Exponent spread below which graded_min_eig solves the scaled matrix directly.
inline constexpr double kMildGrading = 2.5;

namespace detail {

struct PencilRoot {
  double mu = 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXc> es;  // decomposition of ghat - mu * diag(weights)
};

/// Largest mu with ghat - mu diag(weights) positive semidefinite. The map
/// mu -> lambda_min(.) is concave and decreasing, so Newton from the right
/// decreases monotonically onto the root.
inline PencilRoot pencil_root(const MatrixXc& ghat, const Eigen::VectorXd& weights) {
  const Eigen::Index n = ghat.rows();
  auto solve = [&](double mu) {
    MatrixXc p = ghat;
    for (Eigen::Index j = 0; j < n; ++j) p(j, j) -= mu * weights[j];
    return Eigen::SelfAdjointEigenSolver<MatrixXc>(p);
  };
  const double scale = std::max(ghat.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

  double hi = ghat(0, 0).real() / weights[0];
  double lo = -std::numeric_limits<double>::infinity();
  auto es = solve(hi);
  for (int it = 0; it < 200; ++it) {
    const double g = es.eigenvalues()[0];
    if (g >= 0.0) {
      lo = hi;  // landed on the feasible side, stop
      break;
    }
    const VectorXc v = es.eigenvectors().col(0);
    const double slope = (v.cwiseAbs2().array() * weights.array()).sum();
    double next = hi + g / std::max(slope, std::numeric_limits<double>::min());
    if (std::isfinite(lo) && next < lo) next = 0.5 * (lo + hi);
    if (!(next < hi)) break;
    const bool converged = hi - next <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(hi) ||
                           -g <= 8.0 * std::numeric_limits<double>::epsilon() * scale;
    auto trial = solve(next);
    hi = next;
    es = std::move(trial);
    if (converged) break;
  }
  return {hi, std::move(es)};
}

}  // namespace detail

/// Smallest eigenvalue of D Ghat D with D = diag(exp(e_j)) for a Hermitian
/// positive semidefinite mantissa, without forming D Ghat D.
inline GradedEigen graded_min_eig(const MatrixXc& ghat, const Eigen::VectorXd& e, double eta_cluster = 1e-8,
                                  bool want_vectors = true) {
  detail::check_hermitian(ghat, "graded_min_eig");
  const Eigen::Index n = ghat.rows();
  const MatrixXc sym = 0.5 * (ghat + ghat.adjoint());
  const double e0 = e.minCoeff();
  Eigen::VectorXd weights(n), dinv(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    dinv[j] = std::exp(-(e[j] - e0));
    weights[j] = dinv[j] * dinv[j];
  }

  GradedEigen out;
  out.log_scale = 2.0 * e0;

  if (e.maxCoeff() - e0 <= kMildGrading) {
    // Mild grading: the scaled matrix D~ Ghat D~ is well conditioned enough to solve directly.
    MatrixXc scaled = sym;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) scaled(i, j) /= dinv[i] * dinv[j];
    if (!want_vectors) {
      out.scaled_value = Eigen::SelfAdjointEigenSolver<MatrixXc>(scaled, Eigen::EigenvaluesOnly).eigenvalues()[0];
      return out;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(scaled);
    const auto& ev = es.eigenvalues();
    out.scaled_value = ev[0];
    const double unit = std::exp(std::min(-out.log_scale, 690.0));
    Eigen::Index m = 1;
    while (m < n && ev[m] <= ev[0] + eta_cluster * (unit + std::abs(ev[0]))) ++m;
    for (Eigen::Index k = 0; k < m; ++k) {
      VectorXc wk = es.eigenvectors().col(k);
      detail::fix_phase(wk);
      VectorXc uk(n);
      for (Eigen::Index j = 0; j < n; ++j) uk[j] = wk[j] / dinv[j];
      out.w.push_back(std::move(wk));
      out.u.push_back(std::move(uk));
    }
    return out;
  }

  const auto root = detail::pencil_root(sym, weights);
  out.scaled_value = root.mu;
  if (!want_vectors) return out;

  // Cluster: eigenvalues of G below lambda_min + eta (1 + |lambda_min|), counted by inertia.
  const double unit = std::exp(std::min(-out.log_scale, 690.0));
  const double mu_c = root.mu + eta_cluster * (unit + std::abs(root.mu));
  MatrixXc p = sym;
  for (Eigen::Index j = 0; j < n; ++j) p(j, j) -= mu_c * weights[j];
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(p);
  Eigen::Index m = 0;
  while (m < n && es.eigenvalues()[m] < 0.0) ++m;
  m = std::max<Eigen::Index>(m, 1);

  MatrixXc wmat(n, m);
  if (m == 1) {
    wmat.col(0) = root.es.eigenvectors().col(0);
  } else {
    wmat = es.eigenvectors().leftCols(m);
  }
  for (Eigen::Index k = 0; k < m; ++k) wmat.col(k) = dinv.cwiseProduct(wmat.col(k));
  // Orthonormalize in the unscaled coordinates.
  Eigen::HouseholderQR<MatrixXc> qr(wmat);
  MatrixXc q = qr.householderQ() * MatrixXc::Identity(n, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    VectorXc wk = q.col(k);
    detail::fix_phase(wk);
    VectorXc uk(n);
    for (Eigen::Index j = 0; j < n; ++j) uk[j] = wk[j] / dinv[j];
    if (!uk.allFinite()) {
      // w underflowed on stiff modes; rebuild u from the scaled root vector.
      VectorXc v = m == 1 ? VectorXc(root.es.eigenvectors().col(0)) : VectorXc(es.eigenvectors().col(k));
      const double norm = dinv.cwiseProduct(v).norm();
      uk = v / norm;
      wk = dinv.cwiseProduct(uk);
    }
    out.w.push_back(std::move(wk));
    out.u.push_back(std::move(uk));
  }
  return out;
}

/// Smallest eigenpair of G through the stabilized path: direct graded solve
/// when all modes are light, Schur elimination of the stiff block otherwise.
inline GradedEigen obs_min_eig(const ObsMatrix& g, double eta_cluster = 1e-8, bool want_vectors = true) {
  const std::size_t n = g.size(), nl = g.light_size();
  if (nl == 0) throw ConfigError("T too large for N at this precision; reduce N or T");
  if (nl == n) return graded_min_eig(g.mantissa, g.exponents, eta_cluster, want_vectors);

  const auto L = static_cast<Eigen::Index>(nl), H = static_cast<Eigen::Index>(n - nl);
  const MatrixXc sym = 0.5 * (g.mantissa + g.mantissa.adjoint());
  MatrixXc ghh = sym.bottomRightCorner(H, H);
  Eigen::LLT<MatrixXc> llt(ghh);
  if (llt.info() != Eigen::Success) {
    ghh.diagonal().array() += 1e-14 * ghh.trace().real();
    llt.compute(ghh);
  }
  const MatrixXc x = llt.solve(sym.bottomLeftCorner(H, L));  // Ghh^-1 Ghl
  const MatrixXc schur = sym.topLeftCorner(L, L) - sym.topRightCorner(L, H) * x;
  GradedEigen light = graded_min_eig(0.5 * (schur + schur.adjoint()), g.exponents.head(L), eta_cluster, want_vectors);

  // Extend each light vector with the eliminated stiff components.
  const double e0 = g.exponents.head(L).minCoeff();
  for (std::size_t k = 0; k < light.u.size(); ++k) {
    VectorXc u(static_cast<Eigen::Index>(n));
    u.head(L) = light.u[k];
    u.tail(H) = -x * light.u[k];
    VectorXc w(static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n); ++j) w[j] = u[j] * std::exp(-(g.exponents[j] - e0));
    const double norm = w.norm();
    light.u[k] = u / norm;
    light.w[k] = w / norm;
  }
  return light;
}

// ---------------------------------------------------------------------------
// Problem context

/// Fixed (model, grid, T, N) data shared by every density evaluation.
class ObsProblem {
 public:
  ObsProblem(SpectralModel model, GridRef grid, double T, std::size_t n, double theta = kDefaultOverflowThreshold)
      : model_(std::move(model)), T_(T), theta_(theta), products_(model_, std::move(grid), first_modes(n)) {
    if (!(T > 0)) throw ContractError("T must be positive");
    if (n == 0 || n > model_.size()) throw ConfigError("N must lie in 1..n_max");
    const auto dim = static_cast<Eigen::Index>(n);
    exponents_.resize(dim);
    for (Eigen::Index j = 0; j < dim; ++j) exponents_[j] = model_.eigenvalue(static_cast<std::size_t>(j)).real() * T;
    kernel_.resize(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) {
        const FactoredScalar t =
            tau(model_.eigenvalue(static_cast<std::size_t>(i)), model_.eigenvalue(static_cast<std::size_t>(j)), T);
        kernel_(i, j) = t.mantissa * std::exp(t.exponent - exponents_[i] - exponents_[j]);
      }
  }

  const SpectralModel& model() const { return model_; }
  const GridRef& grid() const { return products_.grid(); }
  const ModeProducts& products() const { return products_; }
  double T() const { return T_; }
  double theta() const { return theta_; }
  std::size_t size() const { return products_.dim(); }
  const Eigen::VectorXd& exponents() const { return exponents_; }
  /// hhat_ij with tau_ij = exp(e_i + e_j) hhat_ij.
  const MatrixXc& kernel() const { return kernel_; }

  ObsMatrix matrix(std::span<const double> a) const {
    return {kernel_.cwiseProduct(products_.mass(a)), exponents_, theta_};
  }
  ObsMatrix matrix(const DensityField& a) const { return matrix(a.values); }

  GradedEigen eigen(const DensityField& a, double eta_cluster = 1e-8) const {
    return obs_min_eig(matrix(a), eta_cluster);
  }
  double value(const DensityField& a) const { return eigen(a).value(); }

 private:
  SpectralModel model_;
  double T_;
  double theta_;
  ModeProducts products_;
  Eigen::VectorXd exponents_;
  MatrixXc kernel_;
};

inline ObsMatrix assemble(const SpectralModel& model, const DensityField& a, double T, std::size_t n,
                          double theta = kDefaultOverflowThreshold) {
  return ObsProblem(model, a.grid, T, n, theta).matrix(a);
}

/// C_T^(N)(a) through the stabilized reduction.
inline double obs_constant(const ObsProblem& problem, const DensityField& a) { return problem.value(a); }

inline double obs_constant(const SpectralModel& model, const DensityField& a, double T, std::size_t n,
                           double theta = kDefaultOverflowThreshold) {
  return ObsProblem(model, a.grid, T, n, theta).value(a);
}

/// min_j gamma_j(T) int a |phi_j|^2 over j < N, compared in log scale.
inline double obs_constant_rand(const ObsProblem& problem, const DensityField& a) {
  const MatrixXc m = problem.products().mass(a.values);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < problem.size(); ++j) {
    const double mjj = m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)).real();
    if (mjj <= 0.0) return 0.0;
    const FactoredScalar g = gamma_factored(problem.model().eigenvalue(j).real(), problem.T());
    best = std::min(best, g.log_abs() + std::log(mjj));
  }
  return std::exp(best);
}

inline double obs_constant_rand(const SpectralModel& model, const DensityField& a, double T, std::size_t n) {
  return obs_constant_rand(ObsProblem(model, a.grid, T, n), a);
}

/// Operator norm of the HUM control map, 1 / C_T with 1/0 = +infinity.
inline double hum_norm_from_constant(double c) {
  if (c <= 1e-300) return std::numeric_limits<double>::infinity();
  return 1.0 / c;
}

inline double hum_norm(const ObsProblem& problem, const DensityField& a) {
  return hum_norm_from_constant(problem.value(a));
}

inline double hum_norm(const SpectralModel& model, const DensityField& a, double T, std::size_t n) {
  return hum_norm_from_constant(obs_constant(model, a, T, n));
}

// ---------------------------------------------------------------------------
// Decomposition of the quadratic form into J1, tail and cross parts

struct QuadraticParts {
  double A = 0.0;  // J1 block
  double B = 0.0;  // tail block
  double D = 0.0;  // Re of the cross term
  double E = 0.0;  // full form at b = (sqrt(eps) c_J1, sqrt(1 - eps) c_tail)
};

/// `c` holds one coefficient per mode < N; its J1 part and its tail part must
/// each have unit norm. Requires G to be representable.
inline QuadraticParts quadratic_decomposition(const ObsProblem& problem, const DensityField& a, double eps,
                                              const VectorXc& c) {
  const std::size_t n = problem.size();
  if (static_cast<std::size_t>(c.size()) != n) throw ContractError("quadratic_decomposition: c has wrong length");
  if (!(eps >= 0.0 && eps <= 1.0)) throw ContractError("quadratic_decomposition: eps must lie in [0, 1]");
  const auto& j1 = problem.model().j1();
  std::vector<bool> in_j1(n, false);
  for (auto j : j1)
    if (j < n) in_j1[j] = true;
  if (std::count(in_j1.begin(), in_j1.end(), true) == static_cast<long>(n))
    throw ContractError("quadratic_decomposition: N must exceed #J1");

  double head = 0.0, tail = 0.0;
  for (std::size_t j = 0; j < n; ++j) (in_j1[j] ? head : tail) += std::norm(c[static_cast<Eigen::Index>(j)]);
  if (std::abs(head - 1.0) > 1e-10 || std::abs(tail - 1.0) > 1e-10)
    throw ConfigError("quadratic_decomposition: c must be normalized on J1 and on the tail");

  const MatrixXc g = problem.matrix(a).reconstruct();
  QuadraticParts q;
  cplx a_acc = 0.0, b_acc = 0.0, d_acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
      const cplx term = c[I] * std::conj(c[J]) * g(I, J);
      if (in_j1[i] && in_j1[j])
        a_acc += term;
      else if (!in_j1[i] && !in_j1[j])
        b_acc += term;
      else if (in_j1[i])
        d_acc += term;
    }
  q.A = a_acc.real();
  q.B = b_acc.real();
  q.D = d_acc.real();

  VectorXc b(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j)
    b[static_cast<Eigen::Index>(j)] = (in_j1[j] ? std::sqrt(eps) : std::sqrt(1.0 - eps)) * c[static_cast<Eigen::Index>(j)];
  cplx e_acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto I = static_cast<Eigen::Index>(i), J = static_cast<Eigen::Index>(j);
      e_acc += b[I] * std::conj(b[J]) * g(I, J);
    }
  q.E = e_acc.real();

  const double split = eps * q.A + (1.0 - eps) * q.B + 2.0 * std::sqrt(eps * (1.0 - eps)) * q.D;
  const double scale = std::abs(eps * q.A) + std::abs((1.0 - eps) * q.B) + 2.0 * std::abs(q.D) + 1e-300;
  if (std::abs(split - q.E) > 1e-10 * scale)
    throw std::runtime_error("quadratic_decomposition: split does not reproduce the assembled form");
  return q;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// At least 8 cells per period of the fastest product of two retained modes.
inline bool resolution_ok(const SpectralModel& model, const Grid& grid, std::size_t n, std::string* why = nullptr) {
  for (std::size_t axis = 0; axis < grid.dims(); ++axis) {
    int kmax = 0;
    for (std::size_t j = 0; j < n; ++j) kmax = std::max(kmax, model.mode(j).index[axis]);
    const Mode& m0 = model.mode(0);
    // sin(k pi x / len) products oscillate with period len / k; cos(k x) on the torus with period len / (2 k)
    const bool torus = m0.shape == ModeShape::cos_torus || m0.shape == ModeShape::sin_torus;
    const double periods = torus ? 2.0 * kmax : static_cast<double>(kmax);
    if (static_cast<double>(grid.cells(axis)) < 8.0 * periods) {
      if (why) *why = "grid resolution below 8 cells per oscillation on axis " + std::to_string(axis);
      return false;
    }
  }
  return true;
}

/// Rows: i, j, re, im, exponent_i, exponent_j (0-based indices).
inline void write_csv(std::ostream& os, const ObsMatrix& g) {
  os << "i,j,re,im,exponent_i,exponent_j\n";
  os.precision(17);
  const auto n = static_cast<Eigen::Index>(g.size());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      os << i << ',' << j << ',' << g.mantissa(i, j).real() << ',' << g.mantissa(i, j).imag() << ','
         << g.exponents[i] << ',' << g.exponents[j] << '\n';
}

}  // namespace obsgrid
