#pragma once

// Reference solvers the message-passing engine is validated against.

#include <bpfolio/core.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace bpfolio {

class OracleError : public Error {
 public:
  OracleError(const std::string& what, double best_objective)
      : Error(what), best_objective_(best_objective) {}
  double best_objective() const noexcept { return best_objective_; }

 private:
  double best_objective_;
};

inline constexpr double kMaxConditionNumber = 1e12;

/// Closed-form mean-variance optimum w = N C^{-1} e / (e' C^{-1} e), C = X X'.
/// Solves C y = e by Cholesky (plus one refinement step) instead of forming
/// the inverse.
inline Portfolio exact_mean_variance(const ReturnSet& returns) {
  const int n = returns.n_assets();
  if (returns.n_periods() < n)
    throw Error("exact_mean_variance: need p >= N (got N=" + std::to_string(n) +
                ", p=" + std::to_string(returns.n_periods()) + "); X X' is singular");
  const Eigen::MatrixXd c = returns.entries() * returns.entries().transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(c);
  const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  if (llt.info() != Eigen::Success || !(rcond * kMaxConditionNumber > 1.0)) {
    std::ostringstream os;
    os << "exact_mean_variance: X X' is singular or ill-conditioned (condition estimate "
       << (rcond > 0 ? 1.0 / rcond : std::numeric_limits<double>::infinity()) << ")";
    throw Error(os.str());
  }
  const Eigen::VectorXd e = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd y = llt.solve(e);
  y += llt.solve(e - c * y);
  const double residual = (c * y - e).lpNorm<Eigen::Infinity>();
  if (residual > 1e-10) {
    std::ostringstream os;
    os << "exact_mean_variance: residual " << residual << " exceeds 1e-10";
    throw Error(os.str());
  }
  return Portfolio(static_cast<double>(n) * y / y.sum());
}

namespace detail {

// Smooth surrogate of a cost model for the Newton oracle: value, first and
// second derivative. For the absolute deviation, |u| -> sqrt(u^2 + d^2).
struct SmoothCost {
  const CostModel& model;
  double smoothing;  // only used for the absolute deviation

  double value(double u) const {
    if (model.kind() == CostKind::AbsoluteDeviation) return std::hypot(u, smoothing);
    return model(u);
  }
  double first(double u) const {
    switch (model.kind()) {
      case CostKind::MeanVariance: return u;
      case CostKind::AbsoluteDeviation: return u / std::hypot(u, smoothing);
      case CostKind::GenericQuadrature: break;
    }
    const auto& c = model.cost();
    if (c.derivative) return c.derivative(u);
    const double h = 1e-6 * std::max(1.0, std::abs(u));
    return (c.value(u + h) - c.value(u - h)) / (2 * h);
  }
  double second(double u) const {
    switch (model.kind()) {
      case CostKind::MeanVariance: return 1.0;
      case CostKind::AbsoluteDeviation: {
        const double r = std::hypot(u, smoothing);
        return smoothing * smoothing / (r * r * r);
      }
      case CostKind::GenericQuadrature: break;
    }
    const auto& c = model.cost();
    if (c.second_derivative) return c.second_derivative(u);
    const double h = 1e-4 * std::max(1.0, std::abs(u));
    return (c.value(u + h) - 2 * c.value(u) + c.value(u - h)) / (h * h);
  }
};

}  // namespace detail

/// Independent minimizer of (1/N) sum_mu R(w.x_mu / sqrt N) over sum w = N.
///
/// Newton's method restricted to the budget hyperplane (orthonormal null-space
/// basis of e, backtracking Armijo search), started from the uniform
/// portfolio. The absolute deviation is smoothed to sqrt(u^2 + d^2) with d
/// annealed 1e-2 -> 1e-8 by decades, each stage warm-started. Stops when the
/// Newton decrement bounds the objective gap by tol * max(1, |F|).
inline Portfolio convex_oracle(const ReturnSet& returns, const CostModel& model, double tol = 1e-12) {
  const int n = returns.n_assets();
  const double dn = n;
  const Eigen::MatrixXd& x = returns.entries();

  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd::Ones(n, 1));
  const Eigen::MatrixXd basis =
      (qr.householderQ() * Eigen::MatrixXd::Identity(n, n)).rightCols(n - 1);

  const Eigen::MatrixXd xb = x.transpose() * basis;  // p x (N-1)

  std::vector<double> stages{0.0};
  if (model.kind() == CostKind::AbsoluteDeviation) stages = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8};

  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  double objective = 0.0;
  for (std::size_t stage = 0; stage < stages.size(); ++stage) {
    const detail::SmoothCost cost{model, stages[stage]};
    auto evaluate = [&](const Eigen::VectorXd& v) {
      const Eigen::VectorXd u = x.transpose() * v / std::sqrt(dn);
      double f = 0.0;
      for (Eigen::Index mu = 0; mu < u.size(); ++mu) f += cost.value(u[mu]);
      return f / dn;
    };
    objective = evaluate(w);
    bool done = false;
    for (int it = 0; it < 500 && !done; ++it) {
      const Eigen::VectorXd u = x.transpose() * w / std::sqrt(dn);
      Eigen::VectorXd d1(u.size()), d2(u.size());
      for (Eigen::Index mu = 0; mu < u.size(); ++mu) {
        d1[mu] = cost.first(u[mu]);
        d2[mu] = cost.second(u[mu]);
      }
      const Eigen::VectorXd grad = x * d1 / (dn * std::sqrt(dn));
      const Eigen::VectorXd g = basis.transpose() * grad;
      if (g.squaredNorm() == 0.0) {
        done = true;
        break;
      }
      const Eigen::MatrixXd hess = xb.transpose() * d2.asDiagonal() * xb / (dn * dn);
      const Eigen::VectorXd step_reduced = hess.ldlt().solve(-g);
      const double decrement = -g.dot(step_reduced);
      if (!std::isfinite(decrement) || decrement < 0) break;
      if (0.5 * decrement <= tol * std::max(1.0, std::abs(objective))) {
        done = true;
        break;
      }
      const Eigen::VectorXd step = basis * step_reduced;
      double t = 1.0;
      double trial = evaluate(w + step);
      while (trial > objective - 1e-4 * t * decrement && t > 1e-12) {
        t *= 0.5;
        trial = evaluate(w + t * step);
      }
      if (!(trial <= objective)) break;  // no further decrease representable
      w += t * step;
      objective = trial;
    }
    if (!done && stage + 1 == stages.size()) {
      std::ostringstream os;
      os << "convex_oracle: Newton decrement did not reach tol " << tol << " (objective " << objective
         << ")";
      throw OracleError(os.str(), objective);
    }
  }
  // Restore the budget exactly; the null-space steps only drift by rounding.
  w.array() += (dn - w.sum()) / dn;
  return Portfolio(std::move(w));
}

/// Exact absolute-deviation optimum for two assets. With w = (t, 2 - t) the
/// objective is piecewise linear and convex in t, so the minimum sits on one
/// of the kinks where a period's portfolio return crosses zero. Ties go to
/// the leftmost kink; with no kink at all (identical assets) the objective is
/// constant and the uniform portfolio (1, 1) is returned.
inline Portfolio ad_two_asset_kinks(const ReturnSet& returns) {
  if (returns.n_assets() != 2)
    throw std::invalid_argument("ad_two_asset_kinks: needs exactly 2 assets, got " +
                                std::to_string(returns.n_assets()));
  const Eigen::MatrixXd& x = returns.entries();
  // sqrt(2) u_mu = slope_mu t + offset_mu
  const Eigen::VectorXd slope = (x.row(0) - x.row(1)).transpose();
  const Eigen::VectorXd offset = 2.0 * x.row(1).transpose();
  auto objective = [&](double t) { return (slope * t + offset).cwiseAbs().sum(); };

  std::vector<double> kinks;
  for (Eigen::Index mu = 0; mu < slope.size(); ++mu)
    if (slope[mu] != 0.0) kinks.push_back(-offset[mu] / slope[mu]);
  if (kinks.empty()) return Portfolio(Eigen::Vector2d(1.0, 1.0));
  std::sort(kinks.begin(), kinks.end());

  double best_t = kinks.front();
  double best = objective(best_t);
  for (double t : kinks) {
    const double f = objective(t);
    if (f < best - 1e-12 * std::max(1.0, best)) {
      best = f;
      best_t = t;
    }
  }
  return Portfolio(Eigen::Vector2d(best_t, 2.0 - best_t));
}

}  // namespace bpfolio
