#pragma once

// Scalar kernels for the Gaussian measure Dz = dz exp(-z^2/2) / sqrt(2 pi):
// the tail H(u) = int_u^inf Dz in log domain, the inverse Mills ratio, and
// cached Gauss-Hermite / Gauss-Legendre rules.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace bpfolio {

inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934381868;  // 1/sqrt(2 pi)
inline constexpr double kLogSqrt2Pi = 0.918938533204672741780329736405617640;  // log sqrt(2 pi)
inline constexpr double kInvSqrt2 = 0.707106781186547524400844362104849039;   // 1/sqrt(2)

inline double normal_pdf(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }

namespace detail {

// Above this point the tail ratios come from the Laplace continued fraction.
inline constexpr double kContinuedFractionFrom = 2.0;

// mills_ratio(u) - u = 1/(u + 2/(u + 3/(u + ...))), modified Lentz.
// Converges in ~115 terms at u = 2 and a handful for large u.
inline double mills_excess_continued_fraction(double u) {
  constexpr double tiny = 1e-300;
  double f = tiny, c = f, d = 0.0;
  for (int n = 1; n < 10000; ++n) {
    const double a = static_cast<double>(n);
    d = u + a * d;
    if (d == 0.0) d = tiny;
    c = u + a / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return f;
}

// H(u) for u <= 0, where the value is in [1/2, 1].
inline double upper_half_tail(double u) { return 1.0 - 0.5 * std::erfc(-u * kInvSqrt2); }

// R(u) = H(u)/phi(u) for u > 0.
inline double tail_over_pdf(double u) {
  if (u >= kContinuedFractionFrom) return 1.0 / (u + mills_excess_continued_fraction(u));
  return 0.5 * std::erfc(u * kInvSqrt2) * std::exp(0.5 * u * u) / kInvSqrt2Pi;
}

}  // namespace detail

/// ln H(u). For u > 0 the tail is formed as -u^2/2 + ln(H/phi) - ln sqrt(2 pi),
/// so it stays accurate far beyond the underflow of H itself (|u| up to 1e8
/// and more). For u <= 0 it is log1p(-H(-u)).
inline double log_gaussian_tail(double u) {
  if (u > 0) return -0.5 * u * u - kLogSqrt2Pi + std::log(detail::tail_over_pdf(u));
  return std::log1p(-0.5 * std::erfc(-u * kInvSqrt2));
}

/// ln H(u) + u^2/2. The absolute-deviation channel only ever needs
/// differences of this quantity, which cancel the large quadratic parts
/// analytically.
inline double log_scaled_gaussian_tail(double u) {
  if (u > 0) return std::log(detail::tail_over_pdf(u)) - kLogSqrt2Pi;
  return 0.5 * u * u + std::log(detail::upper_half_tail(u));
}

/// Inverse Mills ratio phi(u)/H(u); the derivative of -ln H(u).
inline double mills_ratio(double u) {
  if (u > 0) return 1.0 / detail::tail_over_pdf(u);
  return normal_pdf(u) / detail::upper_half_tail(u);
}

/// mills_ratio(u) - u, without the cancellation the subtraction suffers for
/// large u (the result there is ~1/u).
inline double mills_excess(double u) {
  if (u >= detail::kContinuedFractionFrom) return detail::mills_excess_continued_fraction(u);
  return mills_ratio(u) - u;
}

// ---------------------------------------------------------------------------
// Quadrature rules
// ---------------------------------------------------------------------------

/// Nodes and weights. For Gauss-Hermite rules the weights integrate against
/// Dz and sum to one; for Gauss-Legendre rules they live on [-1, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const noexcept { return nodes.size(); }

  template <class F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
    return acc;
  }
};

namespace detail {

// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
// polynomials (off-diagonal sqrt(k)); weights are the squared first
// components of the eigenvectors. Stays accurate at orders where the
// three-term recurrence over- or underflows.
inline QuadratureRule build_gauss_hermite_dz(int n) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {  // eigenvalues come sorted ascending
    rule.nodes[i] = eig.eigenvalues()[i];
    rule.weights[i] = eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
  }
  // Exact symmetry about zero.
  for (int i = 0; i < n / 2; ++i) {
    const double z = 0.5 * (rule.nodes[n - 1 - i] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
    rule.nodes[i] = -z;
    rule.nodes[n - 1 - i] = z;
    rule.weights[i] = rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  double total = 0.0;
  for (double w : rule.weights) total += w;
  for (double& w : rule.weights) w /= total;
  return rule;
}

inline QuadratureRule build_gauss_legendre(int n) {
  std::vector<double> x(n), w(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double step = p1 / pp;
      z -= step;
      if (std::abs(step) <= 1e-16) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
  return QuadratureRule{std::move(x), std::move(w)};
}

template <class Build>
const QuadratureRule& cached_rule(std::map<int, QuadratureRule>& cache, std::mutex& mu, int order,
                                  Build build) {
  std::lock_guard lock(mu);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, build(order)).first;
  return it->second;  // map nodes are address-stable
}

}  // namespace detail

inline constexpr int kMaxQuadratureOrder = 256;

/// Gauss-Hermite rule for the standard normal measure: exact for polynomials
/// up to degree 2*order-1 under Dz. Built once per order and cached.
inline const QuadratureRule& gauss_hermite_dz(int order) {
  if (order < 1 || order > kMaxQuadratureOrder)
    throw std::invalid_argument("gauss_hermite_dz: order must be in [1, 256], got " +
                                std::to_string(order));
  static std::map<int, QuadratureRule> cache;
  static std::mutex mu;
  return detail::cached_rule(cache, mu, order, detail::build_gauss_hermite_dz);
}

/// Gauss-Legendre rule on [-1, 1], cached per order.
inline const QuadratureRule& gauss_legendre(int order) {
  if (order < 1 || order > kMaxQuadratureOrder)
    throw std::invalid_argument("gauss_legendre: order must be in [1, 256], got " +
                                std::to_string(order));
  static std::map<int, QuadratureRule> cache;
  static std::mutex mu;
  return detail::cached_rule(cache, mu, order, detail::build_gauss_legendre);
}

}  // namespace bpfolio
