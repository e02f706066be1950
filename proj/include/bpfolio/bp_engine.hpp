#pragma once

// Belief-propagation (TAP) solver for
//   minimize sum_mu R(w.x_mu / sqrt(N))  subject to  sum_k w_k = N.
//
// One sweep updates the period side, then the asset side:
//
//   chi~_u[mu] = (1/N) sum_k x_kmu^2 chi_w[k]
//   h_u[mu]    = (1/sqrt N) sum_k x_kmu m_w[k] - chi~_u[mu] m_u[mu]
//   (m_u, chi_u)[mu] = channel(h_u[mu], chi~_u[mu], beta)
//
//   chi~_w[k]  = (1/N) sum_mu x_kmu^2 chi_u[mu]
//   h_w[k]     = (1/sqrt N) sum_mu x_kmu m_u[mu] + chi~_w[k] m_w[k]
//   chi_w[k]   = 1 / chi~_w[k]
//   m_w[k]     = chi_w[k] (h_w[k] + m~)
//
// The Onsager terms use the previous iterate's means. m~ is the budget
// multiplier; since m_w is linear in it, sum_k m_w[k] = N fixes it in closed
// form. Each sweep is two passes over X, i.e. O(N p).

#include <bpfolio/channels.hpp>
#include <bpfolio/core.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace bpfolio {

/// The return matrix and its elementwise square, shared by all sweeps of a
/// run. Holds a reference to `returns`, which must outlive it.
class SweepOperands {
 public:
  explicit SweepOperands(const ReturnSet& returns)
      : returns_(&returns), squared_(returns.entries().cwiseAbs2()) {}

  const ReturnSet& returns() const noexcept { return *returns_; }
  const Eigen::MatrixXd& x() const noexcept { return returns_->entries(); }
  const Eigen::MatrixXd& x_squared() const noexcept { return squared_; }
  int n_assets() const noexcept { return returns_->n_assets(); }
  int n_periods() const noexcept { return returns_->n_periods(); }

 private:
  const ReturnSet* returns_;
  Eigen::MatrixXd squared_;
};

enum class SweepStatus { Ok, Diverged };

/// Budget-feasible uniform start: m_w = 1, chi_w = 1, period side zero.
inline BpState init_state(const ReturnSet& returns) {
  const Eigen::Index n = returns.n_assets(), p = returns.n_periods();
  BpState s;
  s.m_w = Eigen::VectorXd::Ones(n);
  s.chi_w = Eigen::VectorXd::Ones(n);
  s.h_w = Eigen::VectorXd::Zero(n);
  s.chi_tilde_w = Eigen::VectorXd::Ones(n);
  s.m_u = Eigen::VectorXd::Zero(p);
  s.chi_u = Eigen::VectorXd::Zero(p);
  s.h_u = Eigen::VectorXd::Zero(p);
  s.chi_tilde_u = Eigen::VectorXd::Zero(p);
  s.m_tilde = 0.0;
  s.sweep_count = 0;
  return s;
}

/// Period-side half sweep. `damping` mixes the previous m_u back in,
/// `variance_damping` the previous chi_u (skipped on the very first sweep).
inline SweepStatus period_sweep(BpState& state, const SweepOperands& ops, const CostModel& model,
                                double beta, double damping, double variance_damping = 0.0) {
  const double vd = state.sweep_count > 0 ? variance_damping : 0.0;
  const double n = ops.n_assets();
  state.chi_tilde_u.noalias() = ops.x_squared().transpose() * state.chi_w;
  state.chi_tilde_u /= n;
  state.h_u.noalias() = ops.x().transpose() * state.m_w;
  state.h_u /= std::sqrt(n);
  state.h_u -= state.chi_tilde_u.cwiseProduct(state.m_u);

  for (Eigen::Index mu = 0; mu < state.h_u.size(); ++mu) {
    const double ct = state.chi_tilde_u[mu];
    const double h = state.h_u[mu];
    if (!(ct > 0) || !std::isfinite(ct) || !std::isfinite(h)) return SweepStatus::Diverged;
    const ChannelOutput out = evaluate_channel(model, {h, ct, beta});
    if (!std::isfinite(out.m) || !std::isfinite(out.chi)) return SweepStatus::Diverged;
    state.m_u[mu] = (1.0 - damping) * out.m + damping * state.m_u[mu];
    state.chi_u[mu] = (1.0 - vd) * out.chi + vd * state.chi_u[mu];
  }
  return SweepStatus::Ok;
}

/// m~ making sum_k chi_w[k] (h_w[k] + m~) equal to `budget`.
inline double budget_multiplier(const Eigen::VectorXd& chi_w, const Eigen::VectorXd& h_w, double budget) {
  return (budget - chi_w.dot(h_w)) / chi_w.sum();
}

/// Asset-side half sweep, including the budget multiplier.
inline SweepStatus asset_sweep(BpState& state, const SweepOperands& ops, double damping) {
  const double n = ops.n_assets();
  state.chi_tilde_w.noalias() = ops.x_squared() * state.chi_u;
  state.chi_tilde_w /= n;
  if (!state.chi_tilde_w.allFinite() || state.chi_tilde_w.minCoeff() <= 0.0)
    return SweepStatus::Diverged;

  state.h_w.noalias() = ops.x() * state.m_u;
  state.h_w /= std::sqrt(n);
  state.h_w += state.chi_tilde_w.cwiseProduct(state.m_w);
  state.chi_w = state.chi_tilde_w.cwiseInverse();

  state.m_tilde = budget_multiplier(state.chi_w, state.h_w, n);
  const Eigen::VectorXd undamped = (state.chi_w.array() * (state.h_w.array() + state.m_tilde)).matrix();
  state.m_w = (1.0 - damping) * undamped + damping * state.m_w;
  if (!state.m_w.allFinite() || !std::isfinite(state.m_tilde)) return SweepStatus::Diverged;
  return SweepStatus::Ok;
}

struct Observables {
  double q_hat = 0.0;
  double eps_hat = 0.0;
};

/// q = (1/N) sum_k w_k^2 and eps = (1/N) sum_mu R(w.x_mu / sqrt N).
inline Observables observables(const Eigen::VectorXd& w, const ReturnSet& returns, const CostModel& model) {
  const double n = returns.n_assets();
  const Eigen::VectorXd u = returns.entries().transpose() * w / std::sqrt(n);
  double cost = 0.0;
  for (Eigen::Index mu = 0; mu < u.size(); ++mu) cost += model(u[mu]);
  return {w.squaredNorm() / n, cost / n};
}

inline Observables observables(const Portfolio& portfolio, const ReturnSet& returns, const CostModel& model) {
  return observables(portfolio.positions, returns, model);
}

struct SolveResult {
  Portfolio portfolio;
  Diagnostics diagnostics;
  BpState state;
};

/// Alternate period and asset sweeps until the largest relative change of
/// m_w drops below `config.tol`. With a beta schedule each rung is
/// warm-started from the previous one and only the last rung is run to
/// tolerance. Divergence (non-finite values, non-positive cavity variance,
/// or q_hat above the threshold) stops the run and returns the partial state.
///
/// At large beta the absolute-deviation iteration tends to settle into a
/// small persistent oscillation around the optimum rather than onto it; with
/// `tail_average` an unconverged final rung reports the average of m_w over
/// its second half, which is budget-feasible and far closer to the fixed
/// point than any single iterate.
inline SolveResult solve(const ReturnSet& returns, const CostModel& model, const BpConfig& config) {
  config.validate();
  const SweepOperands ops(returns);
  SolveResult result;
  BpState& state = result.state;
  state = init_state(returns);
  Diagnostics& diag = result.diagnostics;

  const std::vector<double> rungs =
      config.beta_schedule ? config.beta_schedule->rungs() : std::vector<double>{config.beta};
  Eigen::VectorXd previous;
  Eigen::VectorXd tail_sum = Eigen::VectorXd::Zero(returns.n_assets());
  int tail_count = 0;
  for (std::size_t r = 0; r < rungs.size() && !diag.diverged; ++r) {
    const bool last = r + 1 == rungs.size();
    const int cap = last ? config.max_sweeps : config.beta_schedule->sweeps_per_rung;
    for (int sweep = 0; sweep < cap; ++sweep) {
      previous = state.m_w;
      if (period_sweep(state, ops, model, rungs[r], config.damping, config.variance_damping) ==
              SweepStatus::Diverged ||
          asset_sweep(state, ops, config.damping) == SweepStatus::Diverged) {
        diag.diverged = true;
        ++state.sweep_count;
        break;
      }
      ++state.sweep_count;
      const double q = state.m_w.squaredNorm() / returns.n_assets();
      if (!(q <= config.divergence_threshold)) {
        diag.diverged = true;
        break;
      }
      diag.final_delta = ((state.m_w - previous).array().abs() /
                          state.m_w.array().abs().max(1.0)).maxCoeff();
      if (diag.final_delta < config.tol) {
        if (last) diag.converged = true;
        break;
      }
      if (last && sweep >= cap / 2) {
        tail_sum += state.m_w;
        ++tail_count;
      }
    }
  }
  diag.sweeps_used = state.sweep_count;
  Eigen::VectorXd w = state.m_w;
  if (config.tail_average && !diag.converged && !diag.diverged && tail_count > 0) {
    w = tail_sum / tail_count;
    diag.tail_averaged = true;
  }
  result.portfolio = Portfolio(w);
  const Observables obs = observables(w, returns, model);
  diag.q_hat = obs.q_hat;
  diag.eps_hat = obs.eps_hat;
  return result;
}

}  // namespace bpfolio
