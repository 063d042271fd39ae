#pragma once

// Tensor-product cell grids, piecewise-constant fields, and the linear
// oracle / projection onto { 0 <= a <= 1, mean(a) = L }.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "obsgrid/spectral.hpp"

namespace obsgrid {

namespace detail {

struct GaussRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;  // sum to 2
};

inline const GaussRule& gauss_legendre(int order) {
  static const std::array<GaussRule, 5> rules = [] {
    std::array<GaussRule, 5> r;
    r[0] = {{0.0}, {2.0}};
    const double a2 = 1.0 / std::sqrt(3.0);
    r[1] = {{-a2, a2}, {1.0, 1.0}};
    const double a3 = std::sqrt(0.6);
    r[2] = {{-a3, 0.0, a3}, {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0}};
    const double s = 2.0 / 7.0 * std::sqrt(6.0 / 5.0);
    const double i4 = std::sqrt(3.0 / 7.0 - s), o4 = std::sqrt(3.0 / 7.0 + s);
    const double wi4 = (18.0 + std::sqrt(30.0)) / 36.0, wo4 = (18.0 - std::sqrt(30.0)) / 36.0;
    r[3] = {{-o4, -i4, i4, o4}, {wo4, wi4, wi4, wo4}};
    const double t = 2.0 * std::sqrt(10.0 / 7.0);
    const double i5 = std::sqrt(5.0 - t) / 3.0, o5 = std::sqrt(5.0 + t) / 3.0;
    const double wi5 = (322.0 + 13.0 * std::sqrt(70.0)) / 900.0;
    const double wo5 = (322.0 - 13.0 * std::sqrt(70.0)) / 900.0;
    r[4] = {{-o5, -i5, 0.0, i5, o5}, {wo5, wi5, 128.0 / 225.0, wi5, wo5}};
    return r;
  }();
  if (order < 1 || order > 5) throw ConfigError("gauss_order must be in 1..5");
  return rules[static_cast<std::size_t>(order - 1)];
}

}  // namespace detail

/// Uniform tensor grid; cell index runs with the first axis fastest.
class Grid {
 public:
  Grid(DomainSpec domain, std::vector<std::size_t> cells_per_axis, int gauss_order)
      : domain_(std::move(domain)), cells_(std::move(cells_per_axis)), gauss_order_(gauss_order) {
    domain_.validate();
    if (cells_.size() != domain_.dims()) throw ConfigError("grid: one cell count per axis required");
    for (auto n : cells_)
      if (n < 2) throw ConfigError("grid: need at least 2 cells per axis");
    detail::gauss_legendre(gauss_order_);
    count_ = 1;
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      h_.push_back(domain_.length(k) / static_cast<double>(cells_[k]));
      count_ *= cells_[k];
    }
    cell_measure_ = 1.0;
    for (double h : h_) cell_measure_ *= h;
  }

  const DomainSpec& domain() const { return domain_; }
  std::size_t dims() const { return cells_.size(); }
  std::size_t size() const { return count_; }
  std::size_t cells(std::size_t axis) const { return cells_[axis]; }
  const std::vector<std::size_t>& cells_per_axis() const { return cells_; }
  double h(std::size_t axis) const { return h_[axis]; }
  int gauss_order() const { return gauss_order_; }
  double measure() const { return domain_.measure(); }
  double cell_measure(std::size_t /*c*/) const { return cell_measure_; }
  double max_cell_measure() const { return cell_measure_; }

  std::array<std::size_t, 2> multi_index(std::size_t c) const {
    if (dims() == 1) return {c, 0};
    return {c % cells_[0], c / cells_[0]};
  }

  std::size_t flat_index(std::size_t i, std::size_t j = 0) const { return i + cells_[0] * j; }

  std::array<double, 2> center(std::size_t c) const {
    const auto idx = multi_index(c);
    std::array<double, 2> x{0.0, 0.0};
    for (std::size_t k = 0; k < dims(); ++k)
      x[k] = domain_.bounds[k].first + (static_cast<double>(idx[k]) + 0.5) * h_[k];
    return x;
  }

  /// Calls fn(point, weight) over the Gauss points of cell c; weights sum to the cell measure.
  template <class Fn>
  void for_each_quad_point(std::size_t c, Fn&& fn) const {
    const auto& rule = detail::gauss_legendre(gauss_order_);
    const auto mid = center(c);
    const std::size_t g = rule.nodes.size();
    if (dims() == 1) {
      for (std::size_t a = 0; a < g; ++a) {
        const std::array<double, 2> x{mid[0] + 0.5 * h_[0] * rule.nodes[a], 0.0};
        fn(std::span<const double>(x.data(), 1), 0.5 * h_[0] * rule.weights[a]);
      }
      return;
    }
    for (std::size_t b = 0; b < g; ++b)
      for (std::size_t a = 0; a < g; ++a) {
        const std::array<double, 2> x{mid[0] + 0.5 * h_[0] * rule.nodes[a], mid[1] + 0.5 * h_[1] * rule.nodes[b]};
        fn(std::span<const double>(x.data(), 2), 0.25 * h_[0] * h_[1] * rule.weights[a] * rule.weights[b]);
      }
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.domain_ == b.domain_ && a.cells_ == b.cells_ && a.gauss_order_ == b.gauss_order_;
  }

 private:
  DomainSpec domain_;
  std::vector<std::size_t> cells_;
  int gauss_order_;
  std::vector<double> h_;
  std::size_t count_ = 0;
  double cell_measure_ = 0.0;
};

using GridRef = std::shared_ptr<const Grid>;

inline GridRef make_grid(const DomainSpec& domain, std::vector<std::size_t> cells_per_axis, int gauss_order = 3) {
  return std::make_shared<const Grid>(domain, std::move(cells_per_axis), gauss_order);
}

inline GridRef make_grid(const DomainSpec& domain, std::size_t cells_per_axis, int gauss_order = 3) {
  return make_grid(domain, std::vector<std::size_t>(domain.dims(), cells_per_axis), gauss_order);
}

/// Cellwise values on a grid. A cell value is the cell average of the field.
template <class Tag>
struct CellField {
  GridRef grid;
  std::vector<double> values;

  CellField() = default;
  CellField(GridRef g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (!grid || values.size() != grid->size()) throw ContractError("cell field size does not match grid");
  }
  CellField(GridRef g, double fill) : grid(std::move(g)), values(grid->size(), fill) {}

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t c) const { return values[c]; }
  double& operator[](std::size_t c) { return values[c]; }
};

struct DensityTag;
struct SpatialTag;
/// Relaxed sensor density, values in [0, 1].
using DensityField = CellField<DensityTag>;
/// Generic real spatial function (Psi, Phi_b, |phi_j|^2, ...).
using SpatialFunction = CellField<SpatialTag>;

/// Cell averages of fn via the grid's Gauss rule.
template <class Fn>
SpatialFunction sample_average(const GridRef& grid, Fn&& fn) {
  std::vector<double> v(grid->size());
  for (std::size_t c = 0; c < grid->size(); ++c) {
    double acc = 0.0;
    grid->for_each_quad_point(c, [&](std::span<const double> x, double w) { acc += w * fn(x); });
    v[c] = acc / grid->cell_measure(c);
  }
  return {grid, std::move(v)};
}

template <class Tag>
double integrate(const Grid& grid, const CellField<Tag>& f) {
  double acc = 0.0;
  for (std::size_t c = 0; c < f.size(); ++c) acc += f.values[c] * grid.cell_measure(c);
  return acc;
}

template <class Tag>
double integrate(const CellField<Tag>& f) {
  return integrate(*f.grid, f);
}

inline double mean(const DensityField& a) { return integrate(a) / a.grid->measure(); }

inline bool is_feasible(const DensityField& a, double L, double tol = 1e-10) {
  for (double v : a.values)
    if (v < -tol || v > 1.0 + tol) return false;
  return std::abs(mean(a) - L) <= tol;
}

struct BathtubResult {
  DensityField a;
  double mu = 0.0;  // threshold: a = 1 on {f > mu}, 0 on {f < mu}
};

/// Maximizer of int a f over the relaxed class with mean L. Ties at the
/// threshold share the leftover mass uniformly.
inline BathtubResult bathtub(const GridRef& grid, std::span<const double> f, double L) {
  if (!(L > 0.0 && L < 1.0)) throw ContractError("bathtub: L must lie in (0, 1)");
  const std::size_t n = grid->size();
  if (f.size() != n) throw ContractError("bathtub: field size mismatch");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[a] > f[b]; });

  double fmax = 0.0;
  for (double v : f) fmax = std::max(fmax, std::abs(v));
  const double tie_tol = 1e-12 * std::max(1.0, fmax);
  const double target = L * grid->measure();

  // Cell where the cumulative mass crosses the target fixes the threshold.
  double acc = 0.0;
  std::size_t crossing = n - 1;
  for (std::size_t k = 0; k < n; ++k) {
    acc += grid->cell_measure(order[k]);
    if (acc >= target * (1.0 - 1e-15)) {
      crossing = k;
      break;
    }
  }
  const double mu = f[order[crossing]];

  double above = 0.0, tie = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    if (f[c] > mu + tie_tol)
      above += grid->cell_measure(c);
    else if (f[c] >= mu - tie_tol)
      tie += grid->cell_measure(c);
  }
  const double fill = std::clamp((target - above) / tie, 0.0, 1.0);

  std::vector<double> a(n, 0.0);
  double lowest_in = INFINITY, highest_out = -INFINITY;
  for (std::size_t c = 0; c < n; ++c) {
    if (f[c] > mu + tie_tol)
      a[c] = 1.0;
    else if (f[c] >= mu - tie_tol)
      a[c] = fill;
    if (a[c] == 1.0) lowest_in = std::min(lowest_in, f[c]);
    if (a[c] == 0.0) highest_out = std::max(highest_out, f[c]);
  }
  // A fully used tie set leaves the threshold free in [highest_out, lowest_in].
  const double level = (fill == 1.0 && std::isfinite(highest_out)) ? 0.5 * (lowest_in + highest_out) : mu;
  return {DensityField(grid, std::move(a)), level};
}

inline BathtubResult bathtub(const SpatialFunction& f, double L) { return bathtub(f.grid, f.values, L); }

/// Measure-weighted Euclidean projection onto { 0 <= a <= 1, mean(a) = L }.
inline DensityField project_box_mean(const GridRef& grid, std::span<const double> v, double L) {
  if (!(L > 0.0 && L < 1.0)) throw ContractError("project_box_mean: L must lie in (0, 1)");
  const std::size_t n = grid->size();
  if (v.size() != n) throw ContractError("project_box_mean: field size mismatch");
  const double target = L * grid->measure();

  auto mass = [&](double s) {
    double m = 0.0;
    for (std::size_t c = 0; c < n; ++c) m += std::clamp(v[c] + s, 0.0, 1.0) * grid->cell_measure(c);
    return m;
  };

  const auto [vmin, vmax] = std::minmax_element(v.begin(), v.end());
  double lo = -*vmax, hi = 1.0 - *vmin;  // mass(lo) = 0, mass(hi) = |Omega|
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) < target ? lo : hi) = mid;
  }
  double s = 0.5 * (lo + hi);

  // Exact solve on the free set identified by bisection.
  double fixed = 0.0, free_w = 0.0, free_v = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double x = v[c] + s, w = grid->cell_measure(c);
    if (x >= 1.0)
      fixed += w;
    else if (x > 0.0) {
      free_w += w;
      free_v += w * v[c];
    }
  }
  if (free_w > 0.0) {
    const double exact = (target - fixed - free_v) / free_w;
    if (std::abs(mass(exact) - target) <= std::abs(mass(s) - target)) s = exact;
  }

  std::vector<double> a(n);
  for (std::size_t c = 0; c < n; ++c) a[c] = std::clamp(v[c] + s, 0.0, 1.0);
  return DensityField(grid, std::move(a));
}

inline DensityField project_box_mean(const DensityField& v, double L) { return project_box_mean(v.grid, v.values, L); }

inline double l1_distance(const DensityField& a, const DensityField& b) {
  if (!a.grid || !b.grid || !(a.grid == b.grid || *a.grid == *b.grid))
    throw ContractError("l1_distance: grid mismatch");
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) acc += std::abs(a.values[c] - b.values[c]) * a.grid->cell_measure(c);
  return acc;
}

namespace detail {

/// Length fraction of t in [0, 1] with |y0 + t (y1 - y0) - mu| < delta.
inline double band_fraction(double y0, double y1, double mu, double delta) {
  const double lo = mu - delta, hi = mu + delta;
  const double dy = y1 - y0;
  if (std::abs(dy) < 1e-300) return (y0 > lo && y0 < hi) ? 1.0 : 0.0;
  double t0 = (lo - y0) / dy, t1 = (hi - y0) / dy;
  if (t0 > t1) std::swap(t0, t1);
  return std::max(0.0, std::min(1.0, t1) - std::max(0.0, t0));
}

}  // namespace detail

/// Measure of { |psi - mu| < delta }, with psi interpolated linearly between
/// cell centers (held constant over the outer half cells).
inline double tube_measure(const SpatialFunction& psi, double mu, double delta) {
  if (!(delta > 0.0)) throw ContractError("tube_measure: delta must be positive");
  const Grid& g = *psi.grid;
  const auto& v = psi.values;
  if (g.dims() == 1) {
    const std::size_t n = g.size();
    const double h = g.h(0);
    double m = 0.0;
    m += 0.5 * h * detail::band_fraction(v[0], v[0], mu, delta);
    m += 0.5 * h * detail::band_fraction(v[n - 1], v[n - 1], mu, delta);
    for (std::size_t c = 0; c + 1 < n; ++c) m += h * detail::band_fraction(v[c], v[c + 1], mu, delta);
    return m;
  }

  // 2D: bilinear interpolation of center values, sampled on a sub-lattice.
  constexpr int sub = 8;
  const std::size_t nx = g.cells(0), ny = g.cells(1);
  auto at = [&](double i, double j) {
    i = std::clamp(i, 0.0, static_cast<double>(nx - 1));
    j = std::clamp(j, 0.0, static_cast<double>(ny - 1));
    const auto i0 = std::min(static_cast<std::size_t>(i), nx - 2);
    const auto j0 = std::min(static_cast<std::size_t>(j), ny - 2);
    const double fx = i - static_cast<double>(i0), fy = j - static_cast<double>(j0);
    return (1 - fx) * (1 - fy) * v[g.flat_index(i0, j0)] + fx * (1 - fy) * v[g.flat_index(i0 + 1, j0)] +
           (1 - fx) * fy * v[g.flat_index(i0, j0 + 1)] + fx * fy * v[g.flat_index(i0 + 1, j0 + 1)];
  };
  double m = 0.0;
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto idx = g.multi_index(c);
    int hits = 0;
    for (int b = 0; b < sub; ++b)
      for (int a = 0; a < sub; ++a) {
        const double i = static_cast<double>(idx[0]) - 0.5 + (a + 0.5) / sub;
        const double j = static_cast<double>(idx[1]) - 0.5 + (b + 0.5) / sub;
        if (std::abs(at(i, j) - mu) < delta) ++hits;
      }
    m += g.cell_measure(c) * hits / double(sub * sub);
  }
  return m;
}

/// CSV rows: cell index, center coordinates, value.
template <class Tag>
void write_csv(std::ostream& os, const CellField<Tag>& f) {
  const Grid& g = *f.grid;
  os << (g.dims() == 1 ? "cell,x,value\n" : "cell,x,y,value\n");
  os.precision(17);
  for (std::size_t c = 0; c < f.size(); ++c) {
    const auto x = g.center(c);
    os << c << ',' << x[0];
    if (g.dims() == 2) os << ',' << x[1];
    os << ',' << f.values[c] << '\n';
  }
}

}  // namespace obsgrid
