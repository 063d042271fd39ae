#pragma once

// Reference implementations used only by the tests. Each one reaches its
// answer by a different route than the library code it checks.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using cplx = std::complex<double>;
using cplxl = std::complex<long double>;
using MatrixXc = Eigen::MatrixXcd;
constexpr double pi = std::numbers::pi;

/// Composite trapezoid of exp(s t) on [0, T].
inline cplx trapezoid_exp(cplx s, double T, int n = 10000) {
  const cplxl sl(s.real(), s.imag());
  const long double h = static_cast<long double>(T) / n;
  cplxl acc = 0.5L * (1.0L + std::exp(sl * static_cast<long double>(T)));
  for (int k = 1; k < n; ++k) acc += std::exp(sl * (h * k));
  acc *= h;
  // Richardson step with the half-step rule removes the h^2 term.
  const long double h2 = h / 2;
  cplxl acc2 = 0.5L * (1.0L + std::exp(sl * static_cast<long double>(T)));
  for (int k = 1; k < 2 * n; ++k) acc2 += std::exp(sl * (h2 * k));
  acc2 *= h2;
  const cplxl r = (4.0L * acc2 - acc) / 3.0L;
  return {static_cast<double>(r.real()), static_cast<double>(r.imag())};
}

/// Number of eigenvalues of Hermitian h below x, from the signs of the
/// Gaussian-elimination pivots of h - x I (Sylvester inertia).
inline int count_below(const MatrixXc& h, double x) {
  const Eigen::Index n = h.rows();
  std::vector<std::vector<cplxl>> a(n, std::vector<cplxl>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a[i][j] = cplxl(h(i, j).real(), h(i, j).imag()) - (i == j ? x : 0.0L);
  int neg = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    long double p = a[k][k].real();
    if (p == 0.0L) p = -1e-300L;
    if (p < 0) ++neg;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const cplxl f = a[i][k] / p;
      for (Eigen::Index j = k; j < n; ++j) a[i][j] -= f * a[k][j];
    }
  }
  return neg;
}

/// Smallest eigenvalue by bisection on the inertia count.
inline double min_eigenvalue_bisect(const MatrixXc& h) {
  double r = 0.0;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < h.cols(); ++j) s += std::abs(h(i, j));
    r = std::max(r, s);
  }
  double lo = -r - 1.0, hi = r + 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (count_below(h, mid) >= 1 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

inline MatrixXc random_hermitian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  MatrixXc a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = cplx(nd(rng), nd(rng));
  return 0.5 * (a + a.adjoint());
}

/// Exhaustive maximizer of sum w_c a_c f_c over {0 <= a <= 1, sum w_c a_c = m}:
/// an LP optimum sits at a vertex with at most one fractional coordinate.
inline double bathtub_bruteforce(const std::vector<double>& f, const std::vector<double>& w, double m) {
  const std::size_t n = f.size();
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t mask = 0; mask < (1u << n); ++mask)
    for (std::size_t frac = 0; frac <= n; ++frac) {  // frac == n: no fractional cell
      if (frac < n && (mask >> frac & 1u)) continue;
      double mass = 0.0, obj = 0.0;
      for (std::size_t c = 0; c < n; ++c)
        if (mask >> c & 1u) mass += w[c], obj += w[c] * f[c];
      double t = 0.0;
      if (frac < n) {
        t = (m - mass) / w[frac];
        if (t < -1e-14 || t > 1 + 1e-14) continue;
        obj += w[frac] * t * f[frac];
      } else if (std::abs(mass - m) > 1e-12) {
        continue;
      }
      best = std::max(best, obj);
    }
  return best;
}

/// Exact weighted projection onto {0 <= a <= 1, sum w a = m} by enumerating
/// which coordinates sit at 0, at 1, or free (KKT active sets).
inline std::vector<double> project_bruteforce(const std::vector<double>& v, const std::vector<double>& w, double m) {
  const std::size_t n = v.size();
  std::size_t total = 1;
  for (std::size_t k = 0; k < n; ++k) total *= 3;
  std::vector<double> best;
  double best_d = std::numeric_limits<double>::infinity();
  std::vector<int> state(n);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t r = code;
    double fixed = 0.0, wfree = 0.0, vfree = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      state[c] = static_cast<int>(r % 3);
      r /= 3;
      if (state[c] == 1) fixed += w[c];
      if (state[c] == 2) wfree += w[c], vfree += w[c] * v[c];
    }
    double s = 0.0;
    if (wfree > 0) {
      s = (m - fixed - vfree) / wfree;
    } else if (std::abs(fixed - m) > 1e-12) {
      continue;
    }
    std::vector<double> a(n);
    bool ok = true;
    for (std::size_t c = 0; c < n && ok; ++c) {
      if (state[c] == 0) a[c] = 0.0, ok = v[c] + s <= 1e-12;
      if (state[c] == 1) a[c] = 1.0, ok = v[c] + s >= 1 - 1e-12;
      if (state[c] == 2) a[c] = v[c] + s, ok = a[c] >= -1e-12 && a[c] <= 1 + 1e-12;
    }
    if (!ok) continue;
    double d = 0.0;
    for (std::size_t c = 0; c < n; ++c) d += w[c] * (a[c] - v[c]) * (a[c] - v[c]);
    if (d < best_d) best_d = d, best = a;
  }
  return best;
}

/// Adaptive Simpson on [a, b].
inline double simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-13, int depth = 40) {
  std::function<double(double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fmid, double fhi, double whole, int d) {
        const double mid = 0.5 * (lo + hi), lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
        const double flm = f(lm), frm = f(rm);
        const double left = (mid - lo) / 6 * (flo + 4 * flm + fmid), right = (hi - mid) / 6 * (fmid + 4 * frm + fhi);
        if (d <= 0 || std::abs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15;
        return rec(lo, mid, flo, flm, fmid, left, d - 1) + rec(mid, hi, fmid, frm, fhi, right, d - 1);
      };
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return rec(a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), depth);
}

/// gamma in long double straight from the formula.
inline double gamma_ld(double re, double T) {
  if (re == 0) return T;
  const long double z = 2.0L * re * T;
  return static_cast<double>(std::expm1(z) / (2.0L * re));
}

}  // namespace oracle
