#pragma once

// Frank-Wolfe maximization of concave spectral objectives over the relaxed
// class {0 <= a <= 1, mean a = L}, with the bathtub solution as linear oracle,
// plus the large-time lower-bound certificate.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "obsgrid/geometry.hpp"
#include "obsgrid/gram.hpp"
#include "obsgrid/spectral.hpp"

namespace obsgrid {

struct OptOptions {
  std::size_t max_iter = 2000;
  double tol = 1e-6;
  std::optional<DensityField> init;  // default a = L
  bool away_steps = true;
  std::uint64_t seed = 0;
  std::size_t stall_window = 50;
  std::size_t max_restarts = 3;
};

struct HistoryEntry {
  std::size_t iter = 0;
  double value = 0.0;
  double gap = 0.0;
};

struct OptResult {
  DensityField a_star;
  double value = 0.0;
  double fw_gap = 0.0;
  std::size_t iterations = 0;
  std::vector<HistoryEntry> history;
  bool degenerate_flag = false;
  bool converged = false;
  std::size_t restarts = 0;
};

namespace detail {

struct Evaluation {
  double value = 0.0;
  std::vector<double> grad;  // cell integrals of the supergradient
  std::size_t cluster = 1;
};

/// C_T^(N) on a fixed problem; matrices are the mantissas Ghat(a), linear in a.
class ObsObjective {
 public:
  using Matrix = MatrixXc;
  explicit ObsObjective(const ObsProblem& p) : p_(p) {}

  Matrix matrix(std::span<const double> a) const { return p_.kernel().cwiseProduct(p_.products().mass(a)); }
  double value(const Matrix& m) const { return obs_min_eig(wrap(m), 1e-8, false).value(); }
  Evaluation evaluate(const Matrix& m) const {
    const GradedEigen eig = obs_min_eig(wrap(m));
    Evaluation ev{eig.value(), {}, eig.cluster_size()};
    const auto n = static_cast<Eigen::Index>(p_.size());
    MatrixXc w = MatrixXc::Zero(n, n);
    for (const auto& u : eig.u) w += u.conjugate() * u.transpose();
    w = w.cwiseProduct(p_.kernel()) * (std::exp(eig.log_scale) / static_cast<double>(eig.u.size()));
    ev.grad = p_.products().cell_form(w);
    return ev;
  }

 private:
  ObsMatrix wrap(const Matrix& m) const { return {m, p_.exponents(), p_.theta()}; }
  const ObsProblem& p_;
};

/// sigma_1: smallest eigenvalue of the J1-block mass matrix.
class Sigma1Objective {
 public:
  using Matrix = MatrixXc;
  explicit Sigma1Objective(const ModeProducts& p) : p_(p) {}

  Matrix matrix(std::span<const double> a) const { return p_.mass(a); }
  double value(const Matrix& m) const {
    return Eigen::SelfAdjointEigenSolver<MatrixXc>(m, Eigen::EigenvaluesOnly).eigenvalues()[0];
  }
  Evaluation evaluate(const Matrix& m) const {
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(m);
    const auto& ev = es.eigenvalues();
    const double lo = ev[0];
    Eigen::Index k = 1;
    while (k < ev.size() && ev[k] <= lo + 1e-8 * (1.0 + std::abs(lo))) ++k;
    MatrixXc w = MatrixXc::Zero(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < k; ++i) {
      const VectorXc v = es.eigenvectors().col(i);
      w += v.conjugate() * v.transpose();
    }
    w /= static_cast<double>(k);
    return {lo, p_.cell_form(w), static_cast<std::size_t>(k)};
  }

 private:
  const ModeProducts& p_;
};

inline double dot(std::span<const double> g, std::span<const double> a) {
  double s = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) s += g[c] * a[c];
  return s;
}

/// Maximizer of a concave function on [0, hi], golden section plus the endpoint.
template <class F>
std::pair<double, double> line_search(F&& f, double hi, double f0) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = 0.0, b = hi;
  double x1 = b - r * (b - a), x2 = a + r * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > 1e-9 * hi) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + r * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - r * (b - a);
      f1 = f(x1);
    }
  }
  double best_t = f1 >= f2 ? x1 : x2, best_f = std::max(f1, f2);
  const double fh = f(hi);
  if (fh >= best_f) best_t = hi, best_f = fh;
  if (f0 >= best_f) best_t = 0.0, best_f = f0;
  return {best_t, best_f};
}

/// Frank-Wolfe with away steps over an active set of oracle outputs.
template <class Objective>
OptResult frank_wolfe(const Objective& obj, const GridRef& grid, double L, const OptOptions& opts) {
  if (!(opts.tol > 0)) throw ContractError("tol must be positive");
  if (!(L > 0 && L < 1)) throw ConfigError("L must lie in (0, 1)");
  using Matrix = typename Objective::Matrix;
  const std::size_t cells = grid->size();

  struct Atom {
    std::vector<double> a;
    Matrix m;
    double weight;
  };

  DensityField start = opts.init ? *opts.init : DensityField(grid, L);
  if (start.grid != grid && !(*start.grid == *grid)) throw ContractError("init density lives on another grid");
  if (!is_feasible(start, L, 1e-8)) throw ConfigError("init density is not feasible");

  OptResult res;
  res.a_star = start;
  res.value = -std::numeric_limits<double>::infinity();
  double best_upper = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(opts.seed);

  std::vector<Atom> atoms;
  std::vector<double> a = start.values;
  auto reset = [&](std::vector<double> x) {
    atoms.clear();
    atoms.push_back({x, obj.matrix(x), 1.0});
    a = std::move(x);
  };
  reset(a);

  double last_gap_mark = std::numeric_limits<double>::infinity();
  std::size_t mark_iter = 0;
  std::size_t it = 0;
  for (; it < opts.max_iter; ++it) {
    Matrix ma = atoms[0].m * atoms[0].weight;
    for (std::size_t k = 1; k < atoms.size(); ++k) ma += atoms[k].m * atoms[k].weight;
    const Evaluation ev = obj.evaluate(ma);

    std::vector<double> f(cells);
    for (std::size_t c = 0; c < cells; ++c) f[c] = ev.grad[c] / grid->cell_measure(c);
    BathtubResult s = bathtub(grid, f, L);
    const double ga = dot(ev.grad, a);
    const double gap_fw = dot(ev.grad, s.a.values) - ga;

    if (ev.value > res.value) {
      res.value = ev.value;
      res.a_star = DensityField(grid, a);
      res.degenerate_flag = ev.cluster > 1;
    }
    best_upper = std::min(best_upper, ev.value + std::max(gap_fw, 0.0));
    res.fw_gap = std::max(best_upper - res.value, 0.0);
    res.history.push_back({it, res.value, res.fw_gap});
    if (res.fw_gap <= opts.tol * std::max(1.0, std::abs(res.value))) {
      res.converged = true;
      break;
    }

    // stall detection: gap must shrink by 1% over each window
    if (res.fw_gap < 0.99 * last_gap_mark) {
      last_gap_mark = res.fw_gap;
      mark_iter = it;
    } else if (it - mark_iter >= opts.stall_window && res.restarts < opts.max_restarts) {
      ++res.restarts;
      std::uniform_real_distribution<double> noise(-0.1, 0.1);
      std::vector<double> v = res.a_star.values;
      for (auto& x : v) x += noise(rng);
      reset(project_box_mean(grid, v, L).values);
      mark_iter = it;
      last_gap_mark = res.fw_gap;
      continue;
    }

    // away candidate: active atom with the smallest linear value
    std::size_t away = 0;
    double away_val = std::numeric_limits<double>::infinity();
    if (opts.away_steps)
      for (std::size_t k = 0; k < atoms.size(); ++k) {
        const double v = dot(ev.grad, atoms[k].a);
        if (v < away_val) away_val = v, away = k;
      }
    const bool use_away = opts.away_steps && atoms.size() > 1 && ga - away_val > gap_fw;

    Matrix md;
    double tmax;
    std::vector<double> dir(cells);
    if (use_away) {
      for (std::size_t c = 0; c < cells; ++c) dir[c] = a[c] - atoms[away].a[c];
      md = ma - atoms[away].m;
      const double w = atoms[away].weight;
      tmax = w / (1.0 - w);
    } else {
      for (std::size_t c = 0; c < cells; ++c) dir[c] = s.a.values[c] - a[c];
      md = obj.matrix(s.a.values) - ma;
      tmax = 1.0;
    }
    const auto [t, ft] = line_search([&](double x) { return obj.value(ma + x * md); }, tmax, ev.value);
    (void)ft;
    if (t <= 0.0) continue;

    if (use_away) {
      for (auto& at : atoms) at.weight *= 1.0 + t;
      atoms[away].weight -= t;
      if (t >= tmax || atoms[away].weight <= 1e-14) atoms.erase(atoms.begin() + static_cast<long>(away));
    } else {
      for (auto& at : atoms) at.weight *= 1.0 - t;
      auto same = std::find_if(atoms.begin(), atoms.end(), [&](const Atom& at) { return at.a == s.a.values; });
      if (t >= 1.0) {
        atoms.clear();
        atoms.push_back({s.a.values, obj.matrix(s.a.values), 1.0});
      } else if (same != atoms.end()) {
        same->weight += t;
      } else {
        atoms.push_back({s.a.values, obj.matrix(s.a.values), t});
      }
      atoms.erase(std::remove_if(atoms.begin(), atoms.end(), [](const Atom& at) { return at.weight <= 1e-14; }),
                  atoms.end());
    }
    double total = 0.0;
    for (const auto& at : atoms) total += at.weight;
    std::fill(a.begin(), a.end(), 0.0);
    for (auto& at : atoms) {
      at.weight /= total;
      for (std::size_t c = 0; c < cells; ++c) a[c] += at.weight * at.a[c];
    }
    for (auto& x : a) x = std::clamp(x, 0.0, 1.0);
  }
  res.iterations = std::min(it + 1, opts.max_iter);
  return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Supergradient of C_T^(N) at a as a pointwise function (cell averages).
/// `cluster` receives the size of the minimal eigenvalue cluster.
inline SpatialFunction supergradient(const ObsProblem& problem, const DensityField& a, std::size_t* cluster = nullptr) {
  detail::ObsObjective obj(problem);
  const auto ev = obj.evaluate(obj.matrix(a.values));
  if (cluster) *cluster = ev.cluster;
  SpatialFunction phi(a.grid, 0.0);
  for (std::size_t c = 0; c < phi.size(); ++c) phi[c] = ev.grad[c] / a.grid->cell_measure(c);
  return phi;
}

inline OptResult maximize_obs(const ObsProblem& problem, double L, const OptOptions& opts = {}) {
  return detail::frank_wolfe(detail::ObsObjective(problem), problem.grid(), L, opts);
}

inline OptResult maximize_obs(const SpectralModel& model, const GridRef& grid, double T, std::size_t n, double L,
                              const OptOptions& opts = {}) {
  return maximize_obs(ObsProblem(model, grid, T, n), L, opts);
}

namespace detail {

/// Cell averages of |phi_1|^2; shared by maximize_sigma1 and limit_set so the
/// single-mode case is the same bathtub call.
inline std::vector<double> first_mode_density(const ModeProducts& p) {
  const auto e = p.entry(0, 0);
  std::vector<double> f(e.size());
  for (std::size_t c = 0; c < e.size(); ++c) f[c] = e[c].real() / p.grid()->cell_measure(c);
  return f;
}

}  // namespace detail

inline double sigma1(const ModeProducts& j1_products, const DensityField& a) {
  return detail::Sigma1Objective(j1_products).value(j1_products.mass(a.values));
}

inline OptResult maximize_sigma1(const ModeProducts& j1_products, double L, const OptOptions& opts = {}) {
  const GridRef& grid = j1_products.grid();
  if (j1_products.dim() == 1) {
    BathtubResult b = bathtub(grid, detail::first_mode_density(j1_products), L);
    OptResult r;
    r.value = sigma1(j1_products, b.a);
    r.a_star = std::move(b.a);
    r.iterations = 1;
    r.converged = true;
    r.history.push_back({0, r.value, 0.0});
    return r;
  }
  return detail::frank_wolfe(detail::Sigma1Objective(j1_products), grid, L, opts);
}

inline OptResult maximize_sigma1(const SpectralModel& model, const GridRef& grid, double L, const OptOptions& opts = {}) {
  return maximize_sigma1(ModeProducts(model, grid, model.j1()), L, opts);
}

/// Projected supergradient ascent; a slower cross-check of maximize_obs.
inline OptResult maximize_obs_projected(const ObsProblem& problem, double L, std::size_t max_iter = 500,
                                        double step0 = 0.5) {
  const GridRef& grid = problem.grid();
  detail::ObsObjective obj(problem);
  DensityField a(grid, L);
  OptResult res;
  res.value = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < max_iter; ++k) {
    const auto ev = obj.evaluate(obj.matrix(a.values));
    if (ev.value > res.value) res.value = ev.value, res.a_star = a;
    res.history.push_back({k, res.value, 0.0});
    double gmax = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) gmax = std::max(gmax, std::abs(ev.grad[c] / grid->cell_measure(c)));
    if (gmax == 0.0) break;
    const double step = step0 / std::sqrt(static_cast<double>(k + 1)) / gmax;
    std::vector<double> v(a.size());
    for (std::size_t c = 0; c < a.size(); ++c) v[c] = a[c] + step * ev.grad[c] / grid->cell_measure(c);
    a = project_box_mean(grid, v, L);
  }
  res.iterations = res.history.size();
  res.fw_gap = std::numeric_limits<double>::quiet_NaN();
  return res;
}

// ---------------------------------------------------------------------------
// Certificate

struct Certificate {
  double T = 0.0;
  double nu = 0.0;
  double eps = 0.0;
  double gamma1 = 0.0;
  double gamma_p0 = 0.0;
  double sigma1 = 0.0;
  std::array<double, 3> branches{};  // divided by gamma_1(T)
  double lower_bound = 0.0;
  double upper_bound = 0.0;
  bool nu_auto = false;
};

/// Lower bound gamma_1 min(nu sigma_1(a1), (1-nu) L g/2, (1-nu)(1-eps) g),
/// g = gamma_p0/gamma_1, and upper bound gamma_1 sigma_1(a1). Without nu the
/// auto choice nu_T = 1 - e^{eta T}/g with eta = eta_factor * gap is used.
inline Certificate lower_bound_certificate(const SpectralModel& model, const DensityField& a1, double T,
                                           std::optional<double> nu = std::nullopt, double eta_factor = 1.5) {
  if (!(T > 0)) throw ContractError("T must be positive");
  if (!model.has_p0()) throw ConfigError("certificate needs a mode beyond J1 (raise n_max)");
  const double L = mean(a1);
  const FactoredScalar g1 = gamma_factored(model.eigenvalue(0).real(), T);
  const FactoredScalar gp = gamma_factored(model.eigenvalue(model.p0()).real(), T);
  const double log_ratio = g1.log_abs() - gp.log_abs();  // log(gamma_1 / gamma_p0)
  const double ratio = std::exp(log_ratio);

  Certificate c;
  c.T = T;
  c.nu_auto = !nu.has_value();
  if (nu) {
    c.nu = *nu;
  } else {
    c.nu = 1.0 - std::exp(log_ratio + eta_factor * model.gap() * T);
  }
  if (!(c.nu > 0.0 && c.nu < 1.0))
    throw ConfigError(c.nu_auto ? "auto nu is not in (0, 1) at this T; supply certificate.nu explicitly"
                                : "nu must lie in (0, 1)");
  c.gamma1 = g1.value().real();
  c.gamma_p0 = gp.value().real();
  c.sigma1 = sigma1(ModeProducts(model, a1.grid, model.j1()), a1);
  const double k = L * L * (1.0 - c.nu) * (1.0 - c.nu);
  c.eps = k / (16.0 * c.nu * c.nu * ratio + k);
  c.branches = {c.nu * c.sigma1, (1.0 - c.nu) * L / (2.0 * ratio), (1.0 - c.nu) * (1.0 - c.eps) / ratio};
  c.lower_bound = c.gamma1 * *std::min_element(c.branches.begin(), c.branches.end());
  c.upper_bound = c.gamma1 * c.sigma1;
  return c;
}

/// Measure fraction of cells with a strictly inside (tol, 1 - tol).
inline double bang_bang_fraction(const DensityField& a, double tol = 1e-6) {
  if (!(tol > 0 && tol < 0.5)) throw ContractError("tol must lie in (0, 0.5)");
  double inside = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c)
    if (a[c] > tol && a[c] < 1.0 - tol) inside += a.grid->cell_measure(c);
  return inside / a.grid->measure();
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const Certificate& c) {
  return {{"T", c.T},
          {"nu", c.nu},
          {"nu_auto", c.nu_auto},
          {"eps", c.eps},
          {"gamma1", c.gamma1},
          {"gamma_p0", c.gamma_p0},
          {"sigma1", c.sigma1},
          {"branches", {c.branches[0], c.branches[1], c.branches[2]}},
          {"lower_bound", c.lower_bound},
          {"upper_bound", c.upper_bound}};
}

inline nlohmann::json to_json(const OptResult& r) {
  return {{"value", r.value},
          {"fw_gap", r.fw_gap},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"restarts", r.restarts},
          {"degenerate", r.degenerate_flag},
          {"bangbang_frac", bang_bang_fraction(r.a_star)}};
}

inline void write_history_csv(std::ostream& os, const OptResult& r) {
  os << "iter,value,gap\n";
  os.precision(17);
  for (const auto& h : r.history) os << h.iter << ',' << h.value << ',' << h.gap << '\n';
}

}  // namespace obsgrid
