#pragma once

// Experiment drivers behind the command-line tool: Monte-Carlo alpha sweeps
// against the replica curves, and the mean-variance / absolute-deviation
// comparisons.

#include <bpfolio/bp_engine.hpp>
#include <bpfolio/core.hpp>
#include <bpfolio/oracles.hpp>
#include <bpfolio/theory.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace bpfolio {

inline constexpr std::uint64_t kDefaultSeed = 20240607;

/// Default base seed: BPFOLIO_SEED if set and parseable, else kDefaultSeed.
inline std::uint64_t default_seed() {
  if (const char* env = std::getenv("BPFOLIO_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end != env && *end == '\0') return v;
  }
  return kDefaultSeed;
}

/// p = round(alpha N), at least 1.
inline int periods_for(double alpha, int n_assets) {
  return std::max(1, static_cast<int>(std::lround(alpha * n_assets)));
}

/// Runs body(i) for i in [0, count) on up to `threads` workers (0 = hardware
/// concurrency). The first exception is rethrown after all workers join.
template <class Body>
void parallel_for(int count, int threads, Body&& body) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(1, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct TrialResult {
  ExperimentRecord record;
  Portfolio portfolio;
};

inline TrialResult run_trial(std::uint64_t seed, int n_assets, int n_periods, const CostModel& model,
                             const BpConfig& config) {
  const ReturnSet returns = generate_returns(n_assets, n_periods, seed);
  SolveResult solved = solve(returns, model, config);
  TrialResult out;
  out.record = {seed, n_assets, n_periods, model.tag(), solved.diagnostics};
  out.portfolio = std::move(solved.portfolio);
  return out;
}

// ---------------------------------------------------------------------------
// Alpha sweeps
// ---------------------------------------------------------------------------

struct SweepSpec {
  std::vector<double> alpha_values;
  int n_assets = 100;
  int trials = 100;
  CostModel model = CostModel::mean_variance();
  BpConfig config;
  std::uint64_t base_seed = kDefaultSeed;
  int threads = 0;

  void validate() const {
    if (alpha_values.empty()) throw std::invalid_argument("sweep: no alpha values");
    for (double a : alpha_values)
      if (!(a > 1)) throw std::invalid_argument("sweep: alpha values must exceed 1, got " + std::to_string(a));
    if (n_assets < 2) throw std::invalid_argument("sweep: n_assets must be >= 2");
    if (trials < 1) throw std::invalid_argument("sweep: trials must be >= 1");
    config.validate();
  }
};

/// Replica reference values for one alpha. Mean-variance uses the exact RS
/// solution; the absolute deviation its beta -> infinity limit (the sweep
/// ends at the top of the ladder); other costs the numeric RS fixed point at
/// the final beta, with no cost reference (NaN).
struct ReplicaReference {
  double q = std::numeric_limits<double>::quiet_NaN();
  double eps = std::numeric_limits<double>::quiet_NaN();
};

inline ReplicaReference replica_reference(const CostModel& model, double alpha, double beta) {
  switch (model.kind()) {
    case CostKind::MeanVariance: {
      const RsSolution rs = rs_closed_form_mv(alpha, beta);
      return {rs.q, rs.divergent ? std::numeric_limits<double>::infinity() : 0.5 * (alpha - 1.0)};
    }
    case CostKind::AbsoluteDeviation: {
      const ZeroTemperatureAd z = rs_zero_temperature_ad(alpha);
      return {z.q, z.eps};
    }
    case CostKind::GenericQuadrature: break;
  }
  try {
    return {rs_fixed_point(alpha, beta, model).q, std::numeric_limits<double>::quiet_NaN()};
  } catch (const RsConvergenceError&) {
    return {};
  }
}

struct SweepRow {
  double alpha = 0.0;
  double q_mean = 0.0, q_se = 0.0;
  double eps_mean = 0.0, eps_se = 0.0;
  double q_replica = 0.0, eps_replica = 0.0;
  int n_diverged = 0;
  bool se_warning = false;  // fewer than two usable trials
};

struct MeanAndError {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
};

/// Sample mean and standard error (n-1 normalisation); se = 0 for one value.
inline MeanAndError mean_and_error(const std::vector<double>& v) {
  MeanAndError r;
  if (v.empty()) return r;
  double sum = 0.0;
  for (double x : v) sum += x;
  r.mean = sum / static_cast<double>(v.size());
  if (v.size() == 1) {
    r.se = 0.0;
    return r;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  return r;
}

/// Trial i at every alpha uses seed base_seed + i. Divergent trials are
/// counted and left out of the statistics.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec) {
  spec.validate();
  std::vector<SweepRow> rows;
  for (double alpha : spec.alpha_values) {
    const int p = periods_for(alpha, spec.n_assets);
    std::vector<ExperimentRecord> records(spec.trials);
    parallel_for(spec.trials, spec.threads, [&](int i) {
      records[i] = run_trial(spec.base_seed + static_cast<std::uint64_t>(i), spec.n_assets, p, spec.model,
                             spec.config)
                       .record;
    });
    SweepRow row;
    row.alpha = alpha;
    std::vector<double> qs, eps;
    for (const auto& r : records) {
      if (r.diagnostics.diverged) {
        ++row.n_diverged;
        continue;
      }
      qs.push_back(r.diagnostics.q_hat);
      eps.push_back(r.diagnostics.eps_hat);
    }
    const MeanAndError q = mean_and_error(qs), e = mean_and_error(eps);
    row.q_mean = q.mean;
    row.q_se = q.se;
    row.eps_mean = e.mean;
    row.eps_se = e.se;
    row.se_warning = qs.size() < 2;
    const ReplicaReference ref = replica_reference(spec.model, alpha, spec.config.final_beta());
    row.q_replica = ref.q;
    row.eps_replica = ref.eps;
    rows.push_back(row);
  }
  return rows;
}

inline constexpr const char* kSweepCsvHeader =
    "alpha,q_mean,q_se,eps_mean,eps_se,q_replica,eps_replica,n_diverged,se_warning";

inline std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(kSweepCsvHeader) + "\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", r.alpha, r.q_mean,
                  r.q_se, r.eps_mean, r.eps_se, r.q_replica, r.eps_replica, r.n_diverged,
                  r.se_warning ? 1 : 0);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean-variance vs absolute deviation
// ---------------------------------------------------------------------------

struct KyCounterexample {
  Portfolio mean_variance;
  Portfolio absolute_deviation;
  double distance = 0.0;
  bool equal = false;
};

/// The two-asset, two-period instance with asset returns (1, 3) and (2, 1):
/// the optima are (0, 2) and (-1, 3).
inline ReturnSet ky_counterexample_returns() {
  Eigen::MatrixXd x(2, 2);
  x << 1, 3, 2, 1;
  return ReturnSet(x);
}

inline KyCounterexample ky_counterexample() {
  const ReturnSet r = ky_counterexample_returns();
  KyCounterexample out;
  out.mean_variance = exact_mean_variance(r);
  out.absolute_deviation = ad_two_asset_kinks(r);
  out.distance = (out.mean_variance.positions - out.absolute_deviation.positions).norm();
  out.equal = out.distance <= 1e-9;
  return out;
}

struct KyRandomSummary {
  int trials = 0;
  int n_assets = 0;
  int n_periods = 0;
  double mean_cosine = 0.0;
  double min_cosine = 0.0;
  double mean_abs_q_difference = 0.0;
  double mean_q_mv = 0.0;
  double mean_q_ad = 0.0;
  int n_ad_diverged = 0;
  std::vector<double> cosines;
};

/// Instance i (seed base_seed + i): exact mean-variance optimum against the
/// absolute-deviation message-passing solution with its default beta ladder.
inline KyRandomSummary ky_random(int n_assets, int n_periods, int trials, std::uint64_t base_seed,
                                 int threads = 0) {
  if (trials < 1) throw std::invalid_argument("ky: trials must be >= 1");
  const CostModel ad = CostModel::absolute_deviation();
  const BpConfig config = BpConfig::defaults_for(ad);
  struct One {
    double cosine, q_mv, q_ad;
    bool diverged;
  };
  std::vector<One> results(trials);
  parallel_for(trials, threads, [&](int i) {
    const ReturnSet r = generate_returns(n_assets, n_periods, base_seed + static_cast<std::uint64_t>(i));
    const Portfolio mv = exact_mean_variance(r);
    const SolveResult solved = solve(r, ad, config);
    results[i] = {portfolio_similarity(mv, solved.portfolio), mv.positions.squaredNorm() / n_assets,
                  solved.diagnostics.q_hat, solved.diagnostics.diverged};
  });

  KyRandomSummary s;
  s.trials = trials;
  s.n_assets = n_assets;
  s.n_periods = n_periods;
  s.min_cosine = std::numeric_limits<double>::infinity();
  int used = 0;
  for (const One& o : results) {
    if (o.diverged) {
      ++s.n_ad_diverged;
      continue;
    }
    ++used;
    s.cosines.push_back(o.cosine);
    s.mean_cosine += o.cosine;
    s.min_cosine = std::min(s.min_cosine, o.cosine);
    s.mean_abs_q_difference += std::abs(o.q_mv - o.q_ad);
    s.mean_q_mv += o.q_mv;
    s.mean_q_ad += o.q_ad;
  }
  if (used == 0) throw Error("ky: every absolute-deviation solve diverged");
  s.mean_cosine /= used;
  s.mean_abs_q_difference /= used;
  s.mean_q_mv /= used;
  s.mean_q_ad /= used;
  return s;
}

}  // namespace bpfolio
