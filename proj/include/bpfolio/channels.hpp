#pragma once

// Likelihood-dependent step of the message-passing iteration. Given the
// cavity field h and cavity variance chi_tilde of one period, a channel
// returns
//   m   =  d/dh   log int Dz g(z sqrt(chi_tilde) + h)
//   chi = -d^2/dh^2 log int Dz g(z sqrt(chi_tilde) + h)
// with g(u) = exp(-beta R(u)).

#include <bpfolio/core.hpp>
#include <bpfolio/special_functions.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace bpfolio {

struct ChannelInput {
  double h = 0.0;
  double chi_tilde = 1.0;
  double beta = 1.0;
};

struct ChannelOutput {
  double m = 0.0;
  double chi = 0.0;
};

inline void validate(const ChannelInput& in) {
  if (!std::isfinite(in.h) || !std::isfinite(in.chi_tilde) || !std::isfinite(in.beta) ||
      !(in.chi_tilde > 0) || !(in.beta > 0)) {
    std::ostringstream os;
    os << "channel input out of domain: h=" << in.h << " chi_tilde=" << in.chi_tilde
       << " beta=" << in.beta;
    throw std::invalid_argument(os.str());
  }
}

/// R(u) = u^2/2: m = -beta h/(1 + beta chi_tilde), chi = beta/(1 + beta chi_tilde).
inline ChannelOutput channel_mean_variance(const ChannelInput& in) {
  validate(in);
  const double gain = in.beta / (1.0 + in.beta * in.chi_tilde);
  return {-gain * in.h, gain};
}

/// R(u) = |u|, closed form through Gaussian tails.
///
/// With s = sqrt(chi_tilde) and u+- = beta s +- h/s,
///   m = beta tanh(A),  A = beta h + (ln H(u+) - ln H(u-))/2.
/// Since u+^2 - u-^2 = 4 beta h, A equals half the difference of the scaled
/// log-tails ln H(u) + u^2/2, which is how it is evaluated; the O(beta h)
/// terms never appear. The derivative -dm/dh is analytic:
///   chi = beta sech^2(A) (G(u+) + G(u-)) / (2 s),  G(u) = mills_ratio(u) - u,
/// the same quantity as -beta sech^2(A) (beta - (M(u+) + M(u-))/(2 s)) with
/// the cancellation between beta and the Mills ratios removed.
inline ChannelOutput channel_absolute_deviation(const ChannelInput& in) {
  validate(in);
  const double s = std::sqrt(in.chi_tilde);
  const double u_plus = in.beta * s + in.h / s;
  const double u_minus = in.beta * s - in.h / s;
  const double a = 0.5 * (log_scaled_gaussian_tail(u_plus) - log_scaled_gaussian_tail(u_minus));
  const double c = std::cosh(a);  // inf once |a| > ~710; sech^2 then underflows to 0
  const double sech2 = 1.0 / (c * c);
  const double m = in.beta * std::tanh(a);
  const double chi = in.beta * sech2 * (mills_excess(u_plus) + mills_excess(u_minus)) / (2.0 * s);
  return {m, chi};
}

namespace detail {

// Log-density of the tilted measure phi(z) g(s z + h), up to a constant.
struct TiltedLogDensity {
  const ScalarCost& cost;
  double s, h, beta;

  double operator()(double z) const {
    const double u = s * z + h;
    const double r = cost.value(u);
    if (!std::isfinite(r)) {
      std::ostringstream os;
      os << "cost '" << cost.name << "' is not finite at node z=" << z << " (u=" << u << ")";
      throw Error(os.str());
    }
    return -0.5 * z * z - beta * r;
  }
};

template <class F>
double golden_section_argmax(F&& f, double lo, double hi, double rel_tol = 1e-13) {
  constexpr double inv_phi = 0.6180339887498949;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 300 && (hi - lo) > rel_tol * std::max(1.0, std::abs(x1)); ++it) {
    if (f1 < f2) {
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
  return f1 < f2 ? x2 : x1;
}

// Distance from `from` in direction `dir` at which f has dropped by `drop`
// below `f_from`. f is assumed unimodal with its maximum at `from`.
template <class F>
double drop_distance(F&& f, double from, double f_from, double dir, double drop) {
  double inner = 0.0, outer = 1.0;
  while (f(from + dir * outer) > f_from - drop && outer < 1e6) {
    inner = outer;
    outer *= 2.0;
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (inner + outer);
    if (f(from + dir * mid) > f_from - drop)
      inner = mid;
    else
      outer = mid;
  }
  return outer;
}

}  // namespace detail

/// Channel for an arbitrary cost R by quadrature.
///
/// The derivatives of log Z are taken through the Gaussian factor rather than
/// through R, which needs no derivative of R and is exact for kinked costs:
///   m   = E[z] / s,   chi = (1 - Var[z]) / chi_tilde,
/// where z follows the tilted density phi(z) g(s z + h). That density is
/// integrated by `order`-point Gauss-Legendre panels: the window is the
/// region within 50 nats of the mode, split at the mode and at each kink of R,
/// so every panel carries a smooth integrand. Weights are exponentiated after
/// subtracting the mode's log-density.
inline ChannelOutput channel_generic(const ChannelInput& in, const ScalarCost& cost, int order = 64) {
  validate(in);
  if (order < 16) throw std::invalid_argument("channel_generic: order must be >= 16");
  const double s = std::sqrt(in.chi_tilde);
  const detail::TiltedLogDensity log_density{cost, s, in.h, in.beta};

  const double bracket = 40.0 + std::abs(in.h) / s;
  const double mode = detail::golden_section_argmax(log_density, -bracket, bracket);
  const double peak = log_density(mode);
  constexpr double kDrop = 50.0;
  const double lo = mode - detail::drop_distance(log_density, mode, peak, -1.0, kDrop);
  const double hi = mode + detail::drop_distance(log_density, mode, peak, +1.0, kDrop);

  std::vector<double> cuts{lo, mode, hi};
  for (double kink : cost.kinks) {
    const double zk = (kink - in.h) / s;
    if (zk > lo && zk < hi) cuts.push_back(zk);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const QuadratureRule& rule = gauss_legendre(order);
  double mass = 0.0, first = 0.0, second = 0.0;  // moments of (z - mode)
  for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
    const double half = 0.5 * (cuts[p + 1] - cuts[p]);
    const double mid = 0.5 * (cuts[p + 1] + cuts[p]);
    if (!(half > 0)) continue;
    for (std::size_t i = 0; i < rule.size(); ++i) {
      const double z = mid + half * rule.nodes[i];
      const double w = half * rule.weights[i] * std::exp(log_density(z) - peak);
      const double dz = z - mode;
      mass += w;
      first += w * dz;
      second += w * dz * dz;
    }
  }
  const double mean_offset = first / mass;
  const double variance = second / mass - mean_offset * mean_offset;
  return {(mode + mean_offset) / s, (1.0 - variance) / in.chi_tilde};
}

/// Dispatch on the cost model: closed forms for the two named models,
/// quadrature otherwise.
inline ChannelOutput evaluate_channel(const CostModel& model, const ChannelInput& in) {
  switch (model.kind()) {
    case CostKind::MeanVariance: return channel_mean_variance(in);
    case CostKind::AbsoluteDeviation: return channel_absolute_deviation(in);
    case CostKind::GenericQuadrature:
      return channel_generic(in, model.cost(), model.quadrature_order());
  }
  throw std::logic_error("evaluate_channel: unknown cost kind");
}

}  // namespace bpfolio
