#pragma once

// Large-N predictions: replica-symmetric order parameters, Marchenko-Pastur
// moments of (1/N) X X', annealed costs, and portfolio comparisons.

#include <bpfolio/channels.hpp>
#include <bpfolio/core.hpp>
#include <bpfolio/special_functions.hpp>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <tuple>
#include <vector>

namespace bpfolio {

// ---------------------------------------------------------------------------
// Replica symmetry
// ---------------------------------------------------------------------------

/// Mean-variance RS solution: q = alpha/(alpha-1), chi = 1/(beta (alpha-1)).
/// eta and delta are the values the general fixed point produces there.
inline RsSolution rs_closed_form_mv(double alpha, double beta) {
  if (!(beta > 0)) throw std::invalid_argument("rs_closed_form_mv: beta must be positive");
  if (!(alpha > 1)) return RsSolution::divergent_phase(alpha, beta);
  RsSolution s;
  s.alpha = alpha;
  s.beta = beta;
  s.q = alpha / (alpha - 1.0);
  s.chi = 1.0 / (beta * (alpha - 1.0));
  const double gain = beta / (1.0 + beta * s.chi);  // = beta (alpha-1)/alpha
  s.eta = -gain * std::sqrt(s.q);
  s.delta = gain * gain * s.q;
  return s;
}

class RsConvergenceError : public Error {
 public:
  RsConvergenceError(const std::string& what, std::vector<double> residuals)
      : Error(what), residuals_(std::move(residuals)) {}
  const std::vector<double>& residuals() const noexcept { return residuals_; }

 private:
  std::vector<double> residuals_;
};

/// (eta, delta) at given (q, chi):
///   eta   = int Dy y m(y sqrt q),   delta = int Dy m(y sqrt q)^2,
/// with m the channel mean at cavity variance chi. The inner z-integral of
/// g and its derivative is exactly what the channel evaluates. At large beta
/// the absolute-deviation channel switches from linear to saturated within a
/// narrow band of y, so the outer integral is adaptive Gauss-Kronrod on
/// |y| <= 40 rather than a fixed Gauss-Hermite rule.
inline std::pair<double, double> rs_moments(double q, double chi, double beta, const CostModel& model,
                                            double tol = 1e-13) {
  using boost::math::quadrature::gauss_kronrod;
  const double root_q = std::sqrt(q);
  auto mean = [&](double y) { return evaluate_channel(model, {y * root_q, chi, beta}).m; };
  // Both integrands are odd/even symmetric for even costs, but costs need
  // not be even, so integrate over the full line.
  const double eta = gauss_kronrod<double, 61>::integrate(
      [&](double y) { return normal_pdf(y) * y * mean(y); }, -40.0, 40.0, 30, tol);
  const double delta = gauss_kronrod<double, 61>::integrate(
      [&](double y) {
        const double m = mean(y);
        return normal_pdf(y) * m * m;
      },
      -40.0, 40.0, 30, tol);
  return {eta, delta};
}

/// RS order parameters for any cost model, from
///   chi = -sqrt(q) / (alpha eta),   q = 1 + alpha chi^2 delta,
/// by fixed-point iteration with damping 0.5 started at the mean-variance
/// solution. Converged when the relative change of both q and chi is below
/// `tol`. Failure to converge throws with the residual trace.
inline RsSolution rs_fixed_point(double alpha, double beta, const CostModel& model, double tol = 1e-10,
                                 int max_iterations = 10000) {
  const RsSolution start = rs_closed_form_mv(alpha, beta);
  if (start.divergent) return start;

  RsSolution s = start;
  std::vector<double> trace;
  for (int it = 1; it <= max_iterations; ++it) {
    const auto [eta, delta] = rs_moments(s.q, s.chi, beta, model);
    const double chi_next = -std::sqrt(s.q) / (alpha * eta);
    const double q_next = 1.0 + alpha * chi_next * chi_next * delta;
    if (!std::isfinite(chi_next) || !std::isfinite(q_next) || !(chi_next > 0)) {
      std::ostringstream os;
      os << "rs_fixed_point: iteration left the domain at step " << it << " (q=" << q_next
         << ", chi=" << chi_next << ")";
      throw RsConvergenceError(os.str(), trace);
    }
    const double residual = std::max(std::abs(q_next - s.q) / s.q, std::abs(chi_next - s.chi) / s.chi);
    trace.push_back(residual);
    s.iterations = it;
    s.residual = residual;
    if (residual < tol) {
      s.q = q_next;
      s.chi = chi_next;
      std::tie(s.eta, s.delta) = rs_moments(s.q, s.chi, beta, model);
      return s;
    }
    s.q = 0.5 * (s.q + q_next);
    s.chi = 0.5 * (s.chi + chi_next);
  }
  std::ostringstream os;
  os << "rs_fixed_point: no convergence in " << max_iterations << " iterations (last residual "
     << s.residual << ")";
  throw RsConvergenceError(os.str(), trace);
}

/// Zero-temperature RS solution of the absolute-deviation model.
///
/// At beta -> infinity the channel clips: a fraction 1 - 2H(t) = 1/alpha of
/// the periods sits at zero return, which fixes t. Then
///   q   = 1 / (2 alpha t (phi(t) - t H(t))),
///   eps = 2 alpha sqrt(q) (phi(t) - t H(t)).
struct ZeroTemperatureAd {
  double alpha = 0.0;
  double t = 0.0;
  double q = 0.0;
  double eps = 0.0;
  bool divergent = false;
};

inline ZeroTemperatureAd rs_zero_temperature_ad(double alpha) {
  ZeroTemperatureAd r;
  r.alpha = alpha;
  if (!(alpha > 1)) {
    r.divergent = true;
    r.q = std::numeric_limits<double>::infinity();
    r.t = r.eps = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  // 2 H(t) = 1 - 1/alpha, H decreasing; bisect on [0, 40].
  const double target = std::log(0.5 * (1.0 - 1.0 / alpha));
  double lo = 0.0, hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (log_gaussian_tail(mid) > target ? lo : hi) = mid;
  }
  r.t = 0.5 * (lo + hi);
  const double h = std::exp(log_gaussian_tail(r.t));
  const double gap = normal_pdf(r.t) - r.t * h;
  r.q = 1.0 / (2.0 * alpha * r.t * gap);
  r.eps = 2.0 * alpha * std::sqrt(r.q) * gap;
  return r;
}

// ---------------------------------------------------------------------------
// Marchenko-Pastur
// ---------------------------------------------------------------------------

/// Spectral summary of (1/N) X X' for N x p i.i.d. unit-variance returns,
/// alpha = p/N. For alpha <= 1 the inverse moments (and q) are infinite.
struct SpectralStats {
  double alpha = 0.0;
  double lambda_plus = 0.0;
  double lambda_minus = 0.0;
  double inv_lambda_mean = 0.0;
  double inv_lambda_sq_mean = 0.0;
  double q = 0.0;
  double eps = 0.0;
  bool divergent = false;
};

inline SpectralStats marchenko_pastur(double alpha) {
  if (!(alpha > 0)) throw std::invalid_argument("marchenko_pastur: alpha must be positive");
  SpectralStats s;
  s.alpha = alpha;
  const double r = std::sqrt(alpha);
  s.lambda_plus = (1.0 + r) * (1.0 + r);
  s.lambda_minus = (1.0 - r) * (1.0 - r);
  if (alpha > 1) {
    s.inv_lambda_mean = 1.0 / (alpha - 1.0);
    s.inv_lambda_sq_mean = alpha / std::pow(alpha - 1.0, 3);
    s.q = s.inv_lambda_sq_mean / (s.inv_lambda_mean * s.inv_lambda_mean);
    s.eps = 0.5 / s.inv_lambda_mean;
  } else {
    s.divergent = true;
    s.inv_lambda_mean = s.inv_lambda_sq_mean = s.q = std::numeric_limits<double>::infinity();
    s.eps = 0.0;
  }
  return s;
}

/// Continuous part of the density on [lambda_-, lambda_+]; the atom of mass
/// 1 - alpha at zero (alpha < 1) is not included.
inline double marchenko_pastur_density(double alpha, double lambda) {
  const SpectralStats s = marchenko_pastur(alpha);
  if (!(lambda > s.lambda_minus && lambda < s.lambda_plus)) return 0.0;
  return std::sqrt((lambda - s.lambda_minus) * (s.lambda_plus - lambda)) /
         (2.0 * std::numbers::pi * lambda);
}

/// int rho(lambda) f(lambda) over the bulk. With lambda = c + r cos(theta)
/// the square-root edges disappear and the integrand is smooth on [0, pi];
/// adaptive 61-point Gauss-Kronrod does the rest.
template <class F>
double marchenko_pastur_integrate(double alpha, F&& f, double tol = 1e-10) {
  const SpectralStats s = marchenko_pastur(alpha);
  const double centre = 0.5 * (s.lambda_plus + s.lambda_minus);
  const double radius = 0.5 * (s.lambda_plus - s.lambda_minus);
  auto integrand = [&](double theta) {
    const double sn = std::sin(theta);
    const double lambda = centre + radius * std::cos(theta);
    return f(lambda) * radius * radius * sn * sn / (2.0 * std::numbers::pi * lambda);
  };
  double error = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      integrand, 0.0, std::numbers::pi, 20, tol, &error);
  return value;
}

// ---------------------------------------------------------------------------
// Annealed costs
// ---------------------------------------------------------------------------

enum class AnnealedModel { MeanVariance, AbsoluteDeviation, ExpectedShortfall };

/// Annealed cost per asset at dispersion s = sqrt(w' Sigma w / N).
///   MV: alpha s^2 / 2,  AD: 2 alpha s / sqrt(2 pi),
///   ES: min_{v >= 0} alpha (v gamma + H(v/s)), by golden section.
inline double annealed_cost(AnnealedModel model, double alpha, double s,
                            std::optional<double> gamma = std::nullopt) {
  if (!(s >= 0) || !std::isfinite(s)) throw std::invalid_argument("annealed_cost: s must be >= 0");
  switch (model) {
    case AnnealedModel::MeanVariance: return 0.5 * alpha * s * s;
    case AnnealedModel::AbsoluteDeviation: return 2.0 * alpha * s * kInvSqrt2Pi;
    case AnnealedModel::ExpectedShortfall: break;
  }
  if (!gamma || !(*gamma > 0)) throw std::invalid_argument("annealed_cost: ES needs gamma > 0");
  if (s == 0.0) return 0.0;
  const double g = *gamma;
  auto f = [&](double v) { return v * g + std::exp(log_gaussian_tail(v / s)); };

  // Interior minimum solves phi(v/s) = gamma s, i.e. v = s sqrt(2 ln(1/(gamma s sqrt(2 pi)))).
  const double log_arg = std::log(1.0 / (g * s * std::sqrt(2.0 * std::numbers::pi)));
  const double upper = 20.0 * s * std::max(1.0, std::sqrt(std::max(0.0, 2.0 * log_arg + 1.0)));
  constexpr double inv_phi = 0.6180339887498949;
  double lo = 0.0, hi = upper;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  while (hi - lo > 1e-12) {
    if (f1 > f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = f(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = f(x1);
    }
  }
  const double best = std::min({f(0.5 * (lo + hi)), f(0.0), f(upper)});
  return alpha * best;
}

/// Cosine of the angle between two portfolios.
inline double portfolio_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("portfolio_similarity: length mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0) || !(nb > 0)) throw std::invalid_argument("portfolio_similarity: zero-norm portfolio");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline double portfolio_similarity(const Portfolio& a, const Portfolio& b) {
  return portfolio_similarity(a.positions, b.positions);
}

/// s^2(w) = w' Sigma w / N, Sigma = identity unless given.
inline double dispersion_squared(const Eigen::VectorXd& w,
                                 const std::optional<Eigen::MatrixXd>& sigma = std::nullopt) {
  const double n = static_cast<double>(w.size());
  if (!sigma) return w.squaredNorm() / n;
  if (sigma->rows() != w.size() || sigma->cols() != w.size())
    throw std::invalid_argument("dispersion_squared: Sigma has the wrong shape");
  return w.dot(*sigma * w) / n;
}

}  // namespace bpfolio
