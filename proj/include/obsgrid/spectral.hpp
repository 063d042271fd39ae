#pragma once

// Closed-form spectral models and the time kernels built on them.
//
// Mode indices are 0-based throughout the C++ API (mode 0 is the lowest
// eigenvalue). Reports and the CLI print them 1-based.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace obsgrid {

using cplx = std::complex<double>;

/// Raised for invalid model, grid or experiment parameters.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a caller breaks a documented precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Raised when a quantity leaves the representable range.
struct OverflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultOverflowThreshold = 600.0;

// ---------------------------------------------------------------------------
// Domains

enum class DomainKind { interval, rectangle };

struct DomainSpec {
  DomainKind kind = DomainKind::interval;
  std::vector<std::pair<double, double>> bounds;

  static DomainSpec interval(double lo, double hi) {
    DomainSpec d{DomainKind::interval, {{lo, hi}}};
    d.validate();
    return d;
  }
  static DomainSpec rectangle(double x0, double x1, double y0, double y1) {
    DomainSpec d{DomainKind::rectangle, {{x0, x1}, {y0, y1}}};
    d.validate();
    return d;
  }

  std::size_t dims() const { return bounds.size(); }
  double length(std::size_t axis) const { return bounds[axis].second - bounds[axis].first; }

  double measure() const {
    double m = 1.0;
    for (std::size_t k = 0; k < dims(); ++k) m *= length(k);
    return m;
  }

  void validate() const {
    const std::size_t want = kind == DomainKind::interval ? 1 : 2;
    if (bounds.size() != want) throw ConfigError("domain: wrong number of axes");
    for (const auto& [lo, hi] : bounds)
      if (!(lo < hi)) throw ConfigError("domain: require lo < hi on every axis");
  }

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

// ---------------------------------------------------------------------------
// Models

enum class ModelName { dirichlet_1d, dirichlet_rect_2d, torus_1d, coupled_rect_2d };

inline std::string_view to_string(ModelName n) {
  switch (n) {
    case ModelName::dirichlet_1d: return "dirichlet_1d";
    case ModelName::dirichlet_rect_2d: return "dirichlet_rect_2d";
    case ModelName::torus_1d: return "torus_1d";
    case ModelName::coupled_rect_2d: return "coupled_rect_2d";
  }
  return "?";
}

inline ModelName parse_model_name(std::string_view s) {
  for (auto n : {ModelName::dirichlet_1d, ModelName::dirichlet_rect_2d, ModelName::torus_1d,
                 ModelName::coupled_rect_2d})
    if (to_string(n) == s) return n;
  throw ConfigError("unknown model name '" + std::string(s) + "'");
}

/// Parameters for build_model. `mu` and `u` are only read by the coupled model.
struct ModelParams {
  std::size_t n_max = 16;
  std::array<cplx, 3> mu{cplx(1.0, 2.0), cplx(1.0, -2.0), cplx(3.0, 0.0)};
  std::array<std::array<cplx, 3>, 3> u{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
};

/// Scalar spatial factor shapes. Every eigenfunction is factor(x) * direction.
enum class ModeShape { sine_1d, cos_torus, sin_torus, sine_2d };

struct Mode {
  cplx lambda;
  ModeShape shape = ModeShape::sine_1d;
  std::array<int, 2> index{0, 0};  // wavenumbers (k) or (m, n)
  int component = 0;               // cos/sin for the torus, eigenvector slot for coupled
  std::array<cplx, 3> direction{1.0, 0.0, 0.0};
};

class SpectralModel {
 public:
  SpectralModel(ModelName name, std::size_t q, DomainSpec domain, std::vector<Mode> modes)
      : name_(name), q_(q), domain_(std::move(domain)), modes_(std::move(modes)) {
    if (modes_.empty()) throw ConfigError("model needs at least one mode");
    classify();
  }

  ModelName name() const { return name_; }
  std::size_t q() const { return q_; }
  const DomainSpec& domain() const { return domain_; }
  std::size_t size() const { return modes_.size(); }
  const Mode& mode(std::size_t j) const { return modes_.at(j); }
  cplx eigenvalue(std::size_t j) const { return modes_.at(j).lambda; }

  /// Indices sharing the lowest real part.
  const std::vector<std::size_t>& j1() const { return j1_; }
  /// First index outside j1(), or size() when the truncation holds no such mode.
  std::size_t p0() const { return p0_; }
  bool has_p0() const { return p0_ < modes_.size(); }
  /// Re(lambda_p0 - lambda_1); zero when has_p0() is false.
  double gap() const { return has_p0() ? modes_[p0_].lambda.real() - modes_[0].lambda.real() : 0.0; }

  /// Real scalar factor of mode j at point x (x.size() == domain dims).
  double spatial(std::size_t j, std::span<const double> x) const {
    const Mode& m = modes_[j];
    switch (m.shape) {
      case ModeShape::sine_1d: {
        const auto [lo, hi] = domain_.bounds[0];
        const double len = hi - lo;
        return std::sqrt(2.0 / len) * std::sin(m.index[0] * std::numbers::pi * (x[0] - lo) / len);
      }
      case ModeShape::cos_torus:
        return std::cos(m.index[0] * x[0]) / std::sqrt(std::numbers::pi);
      case ModeShape::sin_torus:
        return std::sin(m.index[0] * x[0]) / std::sqrt(std::numbers::pi);
      case ModeShape::sine_2d: {
        const auto [x0, x1] = domain_.bounds[0];
        const auto [y0, y1] = domain_.bounds[1];
        const double lx = x1 - x0, ly = y1 - y0;
        return 2.0 / std::sqrt(lx * ly) * std::sin(m.index[0] * std::numbers::pi * (x[0] - x0) / lx) *
               std::sin(m.index[1] * std::numbers::pi * (x[1] - y0) / ly);
      }
    }
    return 0.0;
  }

  /// phi_j(x) as a q-vector.
  std::vector<cplx> eigenfunction(std::size_t j, std::span<const double> x) const {
    const double s = spatial(j, x);
    std::vector<cplx> v(q_);
    for (std::size_t c = 0; c < q_; ++c) v[c] = s * modes_[j].direction[c];
    return v;
  }

  /// Pointwise product phi_i . conj(phi_j) factors as s_i s_j <u_i, u_j>.
  cplx direction_product(std::size_t i, std::size_t j) const {
    cplx acc = 0.0;
    for (std::size_t c = 0; c < q_; ++c) acc += modes_[i].direction[c] * std::conj(modes_[j].direction[c]);
    return acc;
  }

 private:
  void classify() {
    const double re1 = modes_[0].lambda.real();
    const double tol = 1e-12 * (1.0 + std::abs(re1));
    for (std::size_t j = 1; j < modes_.size(); ++j)
      if (modes_[j].lambda.real() < modes_[j - 1].lambda.real() - tol)
        throw ConfigError("model eigenvalues must have nondecreasing real parts");
    j1_.clear();
    p0_ = modes_.size();
    for (std::size_t j = 0; j < modes_.size(); ++j) {
      if (std::abs(modes_[j].lambda.real() - re1) <= tol) {
        j1_.push_back(j);
      } else {
        p0_ = j;
        break;
      }
    }
  }

  ModelName name_;
  std::size_t q_;
  DomainSpec domain_;
  std::vector<Mode> modes_;
  std::vector<std::size_t> j1_;
  std::size_t p0_ = 0;
};

namespace detail {

inline std::vector<std::pair<int, int>> sorted_rect_pairs(std::size_t count) {
  const int kmax = static_cast<int>(count);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<std::size_t>(kmax) * kmax);
  for (int m = 1; m <= kmax; ++m)
    for (int n = 1; n <= kmax; ++n) pairs.emplace_back(m, n);
  std::sort(pairs.begin(), pairs.end(), [](auto a, auto b) {
    const int la = a.first * a.first + a.second * a.second;
    const int lb = b.first * b.first + b.second * b.second;
    return std::tie(la, a) < std::tie(lb, b);
  });
  pairs.resize(count);
  return pairs;
}

}  // namespace detail

/// Builds one of the closed-form example systems, truncated to params.n_max modes.
inline SpectralModel build_model(ModelName name, const ModelParams& params = {}) {
  const std::size_t n = params.n_max;
  if (n < 1) throw ConfigError("n_max must be >= 1");
  constexpr double pi = std::numbers::pi;
  std::vector<Mode> modes;
  modes.reserve(n);

  switch (name) {
    case ModelName::dirichlet_1d: {
      for (std::size_t k = 1; k <= n; ++k) {
        Mode m;
        m.lambda = static_cast<double>(k * k);
        m.index = {static_cast<int>(k), 0};
        modes.push_back(m);
      }
      return SpectralModel(name, 1, DomainSpec::interval(0.0, pi), std::move(modes));
    }
    case ModelName::torus_1d: {
      for (std::size_t j = 0; j < n; ++j) {
        const int k = static_cast<int>(j / 2) + 1;
        Mode m;
        m.lambda = static_cast<double>(k * k);
        m.shape = j % 2 == 0 ? ModeShape::cos_torus : ModeShape::sin_torus;
        m.index = {k, 0};
        m.component = static_cast<int>(j % 2);
        modes.push_back(m);
      }
      return SpectralModel(name, 1, DomainSpec::interval(0.0, 2.0 * pi), std::move(modes));
    }
    case ModelName::dirichlet_rect_2d: {
      for (auto [a, b] : detail::sorted_rect_pairs(n)) {
        Mode m;
        m.lambda = pi * pi * (a * a + b * b);
        m.shape = ModeShape::sine_2d;
        m.index = {a, b};
        modes.push_back(m);
      }
      return SpectralModel(name, 1, DomainSpec::rectangle(0.0, 1.0, 0.0, 1.0), std::move(modes));
    }
    case ModelName::coupled_rect_2d: {
      const auto& mu = params.mu;
      const double first_spatial = 2.0 * pi * pi;
      if (std::abs(mu[0].real() - mu[1].real()) > 1e-12 * (1.0 + std::abs(mu[0].real())))
        throw ConfigError("coupled model: require Re mu1 == Re mu2");
      if (!(mu[1].real() < mu[2].real())) throw ConfigError("coupled model: require Re mu2 < Re mu3");
      if (!(mu[0].real() > -first_spatial))
        throw ConfigError("coupled model: require Re mu1 > -(first spatial eigenvalue)");
      if (mu[0] == mu[1] || mu[0] == mu[2] || mu[1] == mu[2])
        throw ConfigError("coupled model: mu values must be distinct");
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          cplx g = 0.0;
          for (std::size_t c = 0; c < 3; ++c) g += params.u[i][c] * std::conj(params.u[j][c]);
          if (std::abs(g - (i == j ? 1.0 : 0.0)) > 1e-12)
            throw ConfigError("coupled model: eigenvector triple u must be orthonormal");
        }

      // Enough spatial pairs that the n lowest real parts are covered.
      const auto pairs = detail::sorted_rect_pairs(n);
      std::vector<Mode> all;
      for (auto [a, b] : pairs)
        for (int c = 0; c < 3; ++c) {
          Mode m;
          m.lambda = pi * pi * (a * a + b * b) + mu[c];
          m.shape = ModeShape::sine_2d;
          m.index = {a, b};
          m.component = c;
          m.direction = params.u[c];
          all.push_back(m);
        }
      std::stable_sort(all.begin(), all.end(), [](const Mode& x, const Mode& y) {
        return std::tuple(x.lambda.real(), x.index, x.component) < std::tuple(y.lambda.real(), y.index, y.component);
      });
      all.resize(n);
      return SpectralModel(name, 3, DomainSpec::rectangle(0.0, 1.0, 0.0, 1.0), std::move(all));
    }
  }
  throw ConfigError("unhandled model");
}

// ---------------------------------------------------------------------------
// Time kernels

/// value = mantissa * exp(exponent), kept apart so huge kernels stay finite.
struct FactoredScalar {
  double exponent = 0.0;
  cplx mantissa = 0.0;

  cplx value() const { return mantissa * std::exp(exponent); }
  double log_abs() const { return exponent + std::log(std::abs(mantissa)); }
};

namespace detail {

/// exp(z) - 1 without cancellation for small |z|.
inline cplx expm1(cplx z) {
  const double x = z.real(), y = z.imag();
  const double em1 = std::expm1(x);
  const double s = std::sin(0.5 * y);
  const double cosm1 = -2.0 * s * s;
  return {em1 * std::cos(y) + cosm1, std::exp(x) * std::sin(y)};
}

}  // namespace detail

/// Factored gamma: exponent 2 Re(lambda) T when positive.
inline FactoredScalar gamma_factored(double re_lambda, double T) {
  if (!(T > 0)) throw ContractError("gamma: T must be positive");
  const double z = 2.0 * re_lambda * T;
  if (re_lambda == 0.0) return {0.0, T};
  if (std::abs(z) < 1e-8) return {0.0, T * (1.0 + 0.5 * z + z * z / 6.0)};
  if (z > 0) return {z, -std::expm1(-z) / (2.0 * re_lambda)};
  return {0.0, std::expm1(z) / (2.0 * re_lambda)};
}

/// gamma(T) = int_0^T exp(2 Re(lambda) t) dt.
inline double gamma(double re_lambda, double T, double theta = kDefaultOverflowThreshold) {
  const FactoredScalar g = gamma_factored(re_lambda, T);
  if (g.exponent > theta)
    throw OverflowError("gamma: exponent " + std::to_string(g.exponent) + " exceeds threshold");
  return g.mantissa.real() * std::exp(g.exponent);
}

inline double gamma(const SpectralModel& model, std::size_t j, double T,
                    double theta = kDefaultOverflowThreshold) {
  if (j >= model.size()) throw ContractError("gamma: mode index out of range");
  return gamma(model.eigenvalue(j).real(), T, theta);
}

/// tau(li, lj, T) = int_0^T exp((li + conj(lj)) t) dt in factored form.
inline FactoredScalar tau(cplx li, cplx lj, double T) {
  if (!(T > 0)) throw ContractError("tau: T must be positive");
  const cplx s = li + std::conj(lj);
  if (s == cplx(0.0, 0.0)) return {0.0, T};
  const double re = s.real();
  if (re > 0) {
    // exp(sT) - 1 = exp(Re s T) * (exp(i Im s T) - exp(-Re s T))
    const double phase = s.imag() * T;
    const cplx num = cplx(std::cos(phase), std::sin(phase)) - std::exp(-re * T);
    // Small |s T| loses digits in the difference above; use expm1 directly there.
    if (std::abs(s) * T < 0.5) return {re * T, detail::expm1(s * T) / s * std::exp(-re * T)};
    return {re * T, num / s};
  }
  return {0.0, detail::expm1(s * T) / s};
}

}  // namespace obsgrid
