#pragma once

// The limit problem max sigma_1(a) over the relaxed class: level-set
// solution, KKT check, quantitative bathtub constant, tube measure, and the
// Cesaro mean of |phi_j|^2 used in the small-time regime.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>
#include <vector>

#include "obsgrid/geometry.hpp"
#include "obsgrid/gram.hpp"
#include "obsgrid/optimize.hpp"
#include "obsgrid/spectral.hpp"

namespace obsgrid {

inline double sigma1(const SpectralModel& model, const DensityField& a) {
  return sigma1(ModeProducts(model, a.grid, model.j1()), a);
}

struct LimitSolution {
  DensityField a1;
  double value = 0.0;  // sigma_1(a1)
  double mu_star = 0.0;
  SpatialFunction psi;  // cell averages of Psi
  std::vector<double> alphas;
  std::vector<VectorXc> b;  // J1 coefficient vectors, Psi = sum_k alpha_k |sum_j b_j^k phi_j|^2
  bool degenerate = false;
};

/// Pointwise Psi(x) of a limit solution.
inline double psi_at(const SpectralModel& model, const LimitSolution& sol, std::span<const double> x) {
  const auto& j1 = model.j1();
  std::vector<double> s(j1.size());
  for (std::size_t i = 0; i < j1.size(); ++i) s[i] = model.spatial(j1[i], x);
  double acc = 0.0;
  for (std::size_t k = 0; k < sol.b.size(); ++k) {
    cplx sum = 0.0;
    for (std::size_t i = 0; i < j1.size(); ++i)
      for (std::size_t j = 0; j < j1.size(); ++j)
        sum += sol.b[k][static_cast<Eigen::Index>(i)] * std::conj(sol.b[k][static_cast<Eigen::Index>(j)]) * s[i] *
               s[j] * model.direction_product(j1[i], j1[j]);
    acc += sol.alphas[k] * sum.real();
  }
  return acc;
}

namespace detail {

/// Cell averages of sum_k alpha_k |sum_j b_j^k phi_j|^2.
inline std::vector<double> psi_cells(const ModeProducts& p, const std::vector<double>& alphas,
                                     const std::vector<VectorXc>& b) {
  const auto n = static_cast<Eigen::Index>(p.dim());
  MatrixXc w = MatrixXc::Zero(n, n);
  for (std::size_t k = 0; k < b.size(); ++k) w += alphas[k] * (b[k] * b[k].adjoint());
  std::vector<double> g = p.cell_form(w);
  for (std::size_t c = 0; c < g.size(); ++c) g[c] /= p.grid()->cell_measure(c);
  return g;
}

/// Measure of {Psi > mu} on a 1D grid, resolving crossings pointwise.
template <class Psi>
double superlevel_measure_1d(const Grid& g, Psi&& psi, double mu) {
  constexpr int sub = 16;
  const double lo = g.domain().bounds[0].first, h = g.h(0) / sub;
  double m = 0.0;
  const std::size_t pieces = g.size() * sub;
  double x0 = lo, y0 = psi(x0) - mu;
  for (std::size_t k = 0; k < pieces; ++k) {
    const double x1 = lo + static_cast<double>(k + 1) * h, y1 = psi(x1) - mu;
    if (y0 > 0 && y1 > 0) {
      m += h;
    } else if ((y0 > 0) != (y1 > 0)) {
      double a = x0, b = x1;
      for (int it = 0; it < 60; ++it) {
        const double c = 0.5 * (a + b);
        ((psi(c) - mu > 0) == (y0 > 0) ? a : b) = c;
      }
      m += y0 > 0 ? a - x0 : x1 - b;
    }
    x0 = x1;
    y0 = y1;
  }
  return m;
}

}  // namespace detail

/// Solution of max sigma_1 over the relaxed class with mean L.
inline LimitSolution limit_set(const SpectralModel& model, const GridRef& grid, double L, const OptOptions& opts = {}) {
  if (!(L > 0 && L < 1)) throw ConfigError("L must lie in (0, 1)");
  const ModeProducts p(model, grid, model.j1());
  LimitSolution sol;
  if (p.dim() == 1) {
    BathtubResult bt = bathtub(grid, detail::first_mode_density(p), L);
    sol.a1 = std::move(bt.a);
    sol.mu_star = bt.mu;
    sol.alphas = {1.0};
    sol.b = {VectorXc::Ones(1)};
  } else {
    const OptResult r1 = maximize_sigma1(p, L, opts);
    // second start: bathtub of the first coordinate
    const SpatialFunction xs = sample_average(grid, [](std::span<const double> x) { return x[0]; });
    OptOptions o2 = opts;
    o2.init = bathtub(xs, L).a;
    const OptResult r2 = maximize_sigma1(p, L, o2);
    const OptResult& best = r2.value > r1.value + 1e-12 ? r2 : r1;

    Eigen::SelfAdjointEigenSolver<MatrixXc> es(p.mass(best.a_star.values));
    const auto& ev = es.eigenvalues();
    Eigen::Index m = 1;
    while (m < ev.size() && ev[m] <= ev[0] + 1e-8 * (1.0 + std::abs(ev[0]))) ++m;
    for (Eigen::Index k = 0; k < m; ++k) {
      sol.alphas.push_back(1.0 / static_cast<double>(m));
      sol.b.push_back(es.eigenvectors().col(k).conjugate());
    }
    BathtubResult bt = bathtub(grid, detail::psi_cells(p, sol.alphas, sol.b), L);
    const double rebath = sigma1(p, bt.a);
    const bool two_maximizers =
        std::abs(r1.value - r2.value) <= 1e-8 && l1_distance(r1.a_star, r2.a_star) > 0.05 * grid->measure();
    sol.degenerate = std::abs(rebath - best.value) > 1e-8 || two_maximizers;
    sol.a1 = sol.degenerate ? best.a_star : std::move(bt.a);
    sol.mu_star = bt.mu;
  }
  sol.value = sigma1(p, sol.a1);
  sol.psi = SpatialFunction(grid, detail::psi_cells(p, sol.alphas, sol.b));

  if (grid->dims() == 1 && !sol.degenerate) {
    // refine the threshold against the pointwise Psi: |{Psi > mu}| = L |Omega|
    auto psi = [&](double x) { return psi_at(model, sol, std::span<const double>(&x, 1)); };
    const double target = L * grid->measure();
    double lo = *std::min_element(sol.psi.values.begin(), sol.psi.values.end());
    double hi = *std::max_element(sol.psi.values.begin(), sol.psi.values.end());
    lo = std::min(lo, sol.mu_star) - 1e-3 * (hi - lo);
    for (int it = 0; it < 100 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (detail::superlevel_measure_1d(*grid, psi, mid) > target ? lo : hi) = mid;
    }
    sol.mu_star = 0.5 * (lo + hi);
  }
  return sol;
}

// ---------------------------------------------------------------------------

struct KktReport {
  double inside_margin = 0.0;   // min Psi on {a1 > 1 - tol} minus mu*
  double outside_margin = 0.0;  // mu* minus max Psi on {a1 < tol}
  double tol_kkt = 0.0;
  bool pass = false;
};

/// Level-set optimality: Psi >= mu* where a1 = 1 and Psi <= mu* where a1 = 0.
/// Fails when either set is empty (no level structure).
inline KktReport kkt_check(const LimitSolution& sol, double tol = 1e-6, double tol_kkt = -1.0) {
  const auto& psi = sol.psi.values;
  const auto [mn, mx] = std::minmax_element(psi.begin(), psi.end());
  KktReport r;
  r.tol_kkt = tol_kkt >= 0 ? tol_kkt : 1e-6 * (*mx - *mn);
  double in_min = std::numeric_limits<double>::infinity(), out_max = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < psi.size(); ++c) {
    if (sol.a1[c] > 1.0 - tol) in_min = std::min(in_min, psi[c]);
    if (sol.a1[c] < tol) out_max = std::max(out_max, psi[c]);
  }
  if (!std::isfinite(in_min) || !std::isfinite(out_max)) {
    r.inside_margin = r.outside_margin = -std::numeric_limits<double>::infinity();
    return r;
  }
  r.inside_margin = in_min - sol.mu_star;
  r.outside_margin = sol.mu_star - out_max;
  r.pass = r.inside_margin >= -r.tol_kkt && r.outside_margin >= -r.tol_kkt;
  return r;
}

// ---------------------------------------------------------------------------

/// Cell averages of a1 translated by `shift` (zero outside the domain).
inline DensityField translate(const DensityField& a, std::array<double, 2> shift) {
  const Grid& g = *a.grid;
  // per-axis overlap weights: cell i receives from source cell i - k - {0, 1}
  std::array<std::vector<std::pair<long, double>>, 2> taps;
  for (std::size_t ax = 0; ax < g.dims(); ++ax) {
    const double s = shift[ax] / g.h(ax);
    const double fl = std::floor(s);
    const double frac = s - fl;
    taps[ax] = {{static_cast<long>(fl), 1.0 - frac}, {static_cast<long>(fl) + 1, frac}};
  }
  if (g.dims() == 1) taps[1] = {{0, 1.0}};
  DensityField out(a.grid, 0.0);
  const long nx = static_cast<long>(g.cells(0)), ny = g.dims() == 2 ? static_cast<long>(g.cells(1)) : 1;
  for (long j = 0; j < ny; ++j)
    for (long i = 0; i < nx; ++i) {
      double acc = 0.0;
      for (const auto& [kx, wx] : taps[0])
        for (const auto& [ky, wy] : taps[1]) {
          const long si = i - kx, sj = j - ky;
          if (si < 0 || si >= nx || sj < 0 || sj >= ny) continue;
          acc += wx * wy * a[g.flat_index(static_cast<std::size_t>(si), static_cast<std::size_t>(sj))];
        }
      out[g.flat_index(static_cast<std::size_t>(i), static_cast<std::size_t>(j))] = acc;
    }
  return out;
}

enum class SampleFamily { shifted, random_bathtub, perturbed };

struct SamplerOptions {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
  std::vector<SampleFamily> families = {SampleFamily::shifted, SampleFamily::random_bathtub, SampleFamily::perturbed};
};

struct BathtubConstantEstimate {
  double k_hat = std::numeric_limits<double>::infinity();
  double min_numerator = std::numeric_limits<double>::infinity();
  std::size_t samples = 0;
  std::vector<double> family_min;  // per family, same order as options
};

namespace detail {

/// Smooth random function: a few low Fourier modes per axis.
inline std::vector<double> smooth_random(const Grid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::acos(-1.0));
  struct Term {
    double amp, kx, ky, px, py;
  };
  std::vector<Term> terms;
  for (int t = 0; t < 6; ++t) {
    const double kx = 1 + static_cast<int>(rng() % 5), ky = g.dims() == 2 ? 1 + static_cast<int>(rng() % 5) : 0;
    terms.push_back({nd(rng) / (kx + ky), kx, ky, ph(rng), ph(rng)});
  }
  std::vector<double> v(g.size());
  const double pi = std::acos(-1.0);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto x = g.center(c);
    double acc = 0.0;
    for (const auto& t : terms) {
      double f = std::cos(t.kx * pi * (x[0] - g.domain().bounds[0].first) / g.domain().length(0) + t.px);
      if (g.dims() == 2) f *= std::cos(t.ky * pi * (x[1] - g.domain().bounds[1].first) / g.domain().length(1) + t.py);
      acc += t.amp * f;
    }
    v[c] = acc;
  }
  return v;
}

}  // namespace detail

/// Draws one feasible density from a family; deterministic in (seed, index).
inline DensityField sample_density(const LimitSolution& sol, SampleFamily family, std::uint64_t seed, std::size_t index) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + index + 1);
  const GridRef& grid = sol.a1.grid;
  const double L = mean(sol.a1);
  switch (family) {
    case SampleFamily::shifted: {
      std::uniform_real_distribution<double> u(-0.1, 0.1);
      std::array<double, 2> s{u(rng) * grid->domain().length(0), 0.0};
      if (grid->dims() == 2) s[1] = u(rng) * grid->domain().length(1);
      DensityField t = translate(sol.a1, s);
      return is_feasible(t, L, 1e-10) ? t : project_box_mean(t, L);
    }
    case SampleFamily::random_bathtub: {
      std::vector<double> f = detail::smooth_random(*grid, rng);
      return bathtub(grid, f, L).a;
    }
    case SampleFamily::perturbed: {
      std::vector<double> v = detail::smooth_random(*grid, rng);
      std::uniform_real_distribution<double> amp(0.01, 0.5);
      const double s = amp(rng);
      for (std::size_t c = 0; c < v.size(); ++c) v[c] = sol.a1[c] + s * v[c];
      return project_box_mean(grid, v, L);
    }
  }
  throw ContractError("unknown sample family");
}

/// K_hat = min over samples of (sigma_1(a1) - sigma_1(a)) / |a - a1|_1^2.
inline BathtubConstantEstimate estimate_bathtub_constant(const SpectralModel& model, const LimitSolution& sol,
                                                         const SamplerOptions& opts = {}) {
  if (sol.degenerate) throw ConfigError("bathtub constant is undefined for a degenerate limit solution");
  if (opts.families.empty()) throw ConfigError("sampler needs at least one family");
  const ModeProducts p(model, sol.a1.grid, model.j1());
  const double s1 = sigma1(p, sol.a1);
  BathtubConstantEstimate est;
  est.family_min.assign(opts.families.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < opts.n_samples; ++i) {
    const std::size_t f = i % opts.families.size();
    const DensityField a = sample_density(sol, opts.families[f], opts.seed, i);
    const double d = l1_distance(a, sol.a1);
    if (d < 1e-12) continue;
    const double num = s1 - sigma1(p, a);
    const double ratio = num / (d * d);
    ++est.samples;
    est.min_numerator = std::min(est.min_numerator, num);
    est.k_hat = std::min(est.k_hat, ratio);
    est.family_min[f] = std::min(est.family_min[f], ratio);
  }
  return est;
}

/// Ratio (sigma_1(a1) - sigma_1(a_h)) / |a_h - a1|_1^2 for a1 translated by h along the first axis.
inline double sliding_ratio(const SpectralModel& model, const LimitSolution& sol, double h) {
  const ModeProducts p(model, sol.a1.grid, model.j1());
  const DensityField ah = translate(sol.a1, {h, 0.0});
  const double d = l1_distance(ah, sol.a1);
  return (sigma1(p, sol.a1) - sigma1(p, ah)) / (d * d);
}

// ---------------------------------------------------------------------------

struct TubeFit {
  double m_hat = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  std::vector<double> deltas;
  std::vector<double> measures;
};

/// Default delta range [4 h max|Psi'|, 0.1 range(Psi)], log-spaced.
inline std::vector<double> default_deltas(const SpatialFunction& psi, std::size_t count = 10) {
  const Grid& g = *psi.grid;
  const auto& v = psi.values;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  double slope = 0.0, h = 0.0;
  for (std::size_t ax = 0; ax < g.dims(); ++ax) {
    h = std::max(h, g.h(ax));
    for (std::size_t c = 0; c < g.size(); ++c) {
      auto idx = g.multi_index(c);
      if (idx[ax] + 1 >= g.cells(ax)) continue;
      idx[ax] += 1;
      slope = std::max(slope, std::abs(v[g.flat_index(idx[0], idx[1])] - v[c]) / g.h(ax));
    }
  }
  const double lo = 4.0 * h * slope, hi = 0.1 * (*mx - *mn);
  std::vector<double> d;
  if (!(hi > lo) || !(lo > 0)) return d;
  for (std::size_t k = 0; k < count; ++k)
    d.push_back(lo * std::pow(hi / lo, static_cast<double>(k) / static_cast<double>(count - 1)));
  return d;
}

/// Through-origin least-squares slope of tube_measure(delta) against delta.
inline TubeFit tube_linearity(const LimitSolution& sol, std::vector<double> deltas = {}) {
  TubeFit fit;
  const auto [mn, mx] = std::minmax_element(sol.psi.values.begin(), sol.psi.values.end());
  if (*mx - *mn <= 1e-12 * std::max(1.0, std::abs(*mx))) {
    fit.degenerate = true;
    return fit;
  }
  if (deltas.empty()) deltas = default_deltas(sol.psi);
  if (deltas.size() < 2) {
    fit.degenerate = true;
    return fit;
  }
  double sxy = 0.0, sxx = 0.0;
  for (double d : deltas) {
    const double m = tube_measure(sol.psi, sol.mu_star, d);
    fit.deltas.push_back(d);
    fit.measures.push_back(m);
    sxy += d * m;
    sxx += d * d;
  }
  fit.m_hat = sxy / sxx;
  fit.residual = 0.0;
  for (std::size_t k = 0; k < deltas.size(); ++k)
    fit.residual = std::max(fit.residual, std::abs(fit.measures[k] - fit.m_hat * deltas[k]) / fit.measures[k]);
  return fit;
}

/// Cell averages of (1/N) sum_{j<N} |phi_j|^2.
inline SpatialFunction cesaro_mean(const SpectralModel& model, const GridRef& grid, std::size_t n) {
  if (n == 0 || n > model.size()) throw ConfigError("N must lie in 1..n_max");
  return sample_average(grid, [&](std::span<const double> x) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = model.spatial(j, x);
      acc += s * s * model.direction_product(j, j).real();
    }
    return acc / static_cast<double>(n);
  });
}

/// L1 deviation of f from c over the cells whose centers lie in [lo, hi] (first axis).
inline double interior_deviation(const SpatialFunction& f, double c, double lo, double hi) {
  double acc = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    const double x = f.grid->center(k)[0];
    if (x >= lo && x <= hi) acc += std::abs(f[k] - c) * f.grid->cell_measure(k);
  }
  return acc;
}

inline nlohmann::json to_json(const LimitSolution& s) {
  return {{"sigma1", s.value}, {"mu_star", s.mu_star}, {"alphas", s.alphas}, {"degenerate", s.degenerate}};
}

}  // namespace obsgrid
