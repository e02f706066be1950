// bpfolio command-line tool.
//
//   bpfolio generate --n N --p P [--seed S] [--out FILE]
//   bpfolio solve    --model {mv|ad|generic} (--input FILE --n N | --random --n N --p P [--seed S]) ...
//   bpfolio sweep    --model M --alphas 1.5,2,3,5 [--n 100] [--trials 100] [--seed S] [--out FILE]
//   bpfolio theory   {replica|mp|annealed} --alpha A ...
//   bpfolio ky       (--counterexample | --n N --p P --trials T [--seed S])
//
// Exit codes: 0 success, 1 usage or I/O error, 2 solver divergence.

#include <bpfolio/bp_engine.hpp>
#include <bpfolio/core.hpp>
#include <bpfolio/harness.hpp>
#include <bpfolio/oracles.hpp>
#include <bpfolio/theory.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using bpfolio::BpConfig;
using bpfolio::CostModel;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::cout << text;
  else
    bpfolio::write_file_atomically(out_path, text);
}

// Options shared by every command that runs the solver.
struct SolverFlags {
  std::string model = "mv";
  std::string cost = "huber";
  double huber_delta = 1.0;
  int quadrature_order = 64;
  std::optional<double> beta;
  std::optional<double> damping;
  std::optional<double> tol;
  std::optional<int> max_sweeps;

  void attach(CLI::App& cmd) {
    cmd.add_option("--model", model, "cost model")->check(CLI::IsMember({"mv", "ad", "generic"}));
    cmd.add_option("--cost", cost, "cost for --model generic")
        ->check(CLI::IsMember({"quadratic", "absolute", "huber"}));
    cmd.add_option("--huber-delta", huber_delta, "Huber threshold")->check(CLI::PositiveNumber);
    cmd.add_option("--order", quadrature_order, "quadrature order for --model generic")
        ->check(CLI::Range(16, 256));
    cmd.add_option("--beta", beta, "inverse temperature (top of the ladder for ad)")
        ->check(CLI::PositiveNumber);
    cmd.add_option("--damping", damping, "damping of the mean updates, in [0,1)");
    cmd.add_option("--tol", tol, "convergence threshold on the largest relative change of w");
    cmd.add_option("--max-sweeps", max_sweeps, "sweep cap")->check(CLI::PositiveNumber);
  }

  CostModel cost_model() const {
    if (model == "mv") return CostModel::mean_variance();
    if (model == "ad") return CostModel::absolute_deviation();
    bpfolio::ScalarCost c = cost == "quadratic"  ? bpfolio::quadratic_cost()
                            : cost == "absolute" ? bpfolio::absolute_cost()
                                                 : bpfolio::huber_cost(huber_delta);
    return CostModel::generic(std::move(c), quadrature_order);
  }

  BpConfig config(const CostModel& m) const {
    BpConfig c = BpConfig::defaults_for(m);
    if (beta) {
      if (c.beta_schedule) {
        c.beta_schedule->beta_final = *beta;
        c.beta_schedule->beta_start = std::min(c.beta_schedule->beta_start, *beta);
      } else {
        c.beta = *beta;
      }
    }
    if (damping) c.damping = *damping;
    if (tol) c.tol = *tol;
    if (max_sweeps) c.max_sweeps = *max_sweeps;
    c.validate();
    return c;
  }
};

json portfolio_json(const bpfolio::Portfolio& p) {
  return json{{"positions", std::vector<double>(p.positions.data(), p.positions.data() + p.positions.size())},
              {"budget", p.budget}};
}

json rs_json(const bpfolio::RsSolution& s) {
  return {{"alpha", s.alpha},
          {"beta", s.beta},
          {"q", bpfolio::finite_or_null(s.q)},
          {"chi", bpfolio::finite_or_null(s.chi)},
          {"eta", bpfolio::finite_or_null(s.eta)},
          {"delta", bpfolio::finite_or_null(s.delta)},
          {"divergent", s.divergent},
          {"iterations", s.iterations},
          {"residual", s.residual}};
}

int run(int argc, char** argv) {
  CLI::App app{"Portfolio optimisation by belief propagation"};
  app.require_subcommand(1);

  // generate -------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "write i.i.d. standard normal returns as CSV");
  int gen_n = 0, gen_p = 0;
  std::uint64_t gen_seed = bpfolio::default_seed();
  std::string gen_out;
  gen->add_option("--n", gen_n, "assets")->required()->check(CLI::Range(2, 1 << 20));
  gen->add_option("--p", gen_p, "periods")->required()->check(CLI::Range(1, 1 << 24));
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "output file (stdout if omitted)");

  // solve ----------------------------------------------------------------
  auto* sol = app.add_subcommand("solve", "solve one instance");
  SolverFlags sol_flags;
  sol_flags.attach(*sol);
  std::string sol_input, sol_out;
  bool sol_random = false, sol_center = false, sol_with_portfolio = true;
  std::optional<int> sol_n, sol_p;
  std::uint64_t sol_seed = bpfolio::default_seed();
  auto* input_opt = sol->add_option("--input", sol_input, "returns CSV, one asset per row");
  auto* random_opt = sol->add_flag("--random", sol_random, "draw a random instance");
  input_opt->excludes(random_opt);
  sol->add_option("--n", sol_n, "assets")->check(CLI::Range(2, 1 << 20));
  sol->add_option("--p", sol_p, "periods (with --random)")->check(CLI::Range(1, 1 << 24));
  sol->add_option("--seed", sol_seed, "RNG seed (with --random)");
  sol->add_flag("--center", sol_center, "subtract each asset's mean return");
  sol->add_flag("!--no-portfolio", sol_with_portfolio, "omit positions from the output");
  sol->add_option("--out", sol_out, "output file (stdout if omitted)");

  // sweep ----------------------------------------------------------------
  auto* swp = app.add_subcommand("sweep", "Monte-Carlo alpha sweep against the replica curves");
  SolverFlags swp_flags;
  swp_flags.attach(*swp);
  std::vector<double> swp_alphas{1.5, 2.0, 3.0, 5.0};
  int swp_n = 100, swp_trials = 100, swp_threads = 0;
  std::uint64_t swp_seed = bpfolio::default_seed();
  std::string swp_out;
  swp->add_option("--alphas", swp_alphas, "alpha values (> 1)")->delimiter(',');
  swp->add_option("--n", swp_n, "assets")->check(CLI::Range(2, 1 << 20));
  swp->add_option("--trials", swp_trials, "instances per alpha")->check(CLI::PositiveNumber);
  swp->add_option("--seed", swp_seed, "base seed; trial i uses seed + i");
  swp->add_option("--threads", swp_threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  swp->add_option("--out", swp_out, "CSV file (stdout if omitted)");

  // theory ---------------------------------------------------------------
  auto* thy = app.add_subcommand("theory", "replica, spectral and annealed predictions");
  thy->require_subcommand(1);
  double thy_alpha = 2.0, thy_beta = 1.0, thy_s = 1.0;
  std::optional<double> thy_gamma;
  std::string thy_model = "mv";
  auto* rep = thy->add_subcommand("replica", "replica-symmetric order parameters");
  rep->add_option("--alpha", thy_alpha)->required();
  rep->add_option("--beta", thy_beta)->check(CLI::PositiveNumber);
  rep->add_option("--model", thy_model)->check(CLI::IsMember({"mv", "ad"}));
  auto* mp = thy->add_subcommand("mp", "Marchenko-Pastur moments");
  mp->add_option("--alpha", thy_alpha)->required()->check(CLI::PositiveNumber);
  auto* ann = thy->add_subcommand("annealed", "annealed cost at dispersion s");
  ann->add_option("--alpha", thy_alpha)->required()->check(CLI::PositiveNumber);
  ann->add_option("--model", thy_model)->check(CLI::IsMember({"mv", "ad", "es"}));
  ann->add_option("--s", thy_s)->check(CLI::NonNegativeNumber);
  ann->add_option("--gamma", thy_gamma)->check(CLI::PositiveNumber);

  // ky -------------------------------------------------------------------
  auto* ky = app.add_subcommand("ky", "mean-variance vs absolute-deviation portfolios");
  bool ky_counter = false;
  int ky_n = 100, ky_p = 200, ky_trials = 20, ky_threads = 0;
  std::uint64_t ky_seed = bpfolio::default_seed();
  ky->add_flag("--counterexample", ky_counter, "the fixed two-asset instance");
  ky->add_option("--n", ky_n)->check(CLI::Range(2, 1 << 20));
  ky->add_option("--p", ky_p)->check(CLI::Range(1, 1 << 24));
  ky->add_option("--trials", ky_trials)->check(CLI::PositiveNumber);
  ky->add_option("--seed", ky_seed);
  ky->add_option("--threads", ky_threads)->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*gen) {
    if (gen_p < 1) throw CLI::ValidationError("--p", "must be positive");
    emit(bpfolio::format_returns(bpfolio::generate_returns(gen_n, gen_p, gen_seed)), gen_out);
    return kExitOk;
  }

  if (*sol) {
    if (!sol_n) {
      std::cerr << "solve: --n is required\n";
      return kExitUsage;
    }
    std::optional<bpfolio::ReturnSet> returns;
    std::uint64_t seed = 0;
    if (sol_random) {
      if (!sol_p) {
        std::cerr << "solve: --random needs --p\n";
        return kExitUsage;
      }
      returns.emplace(bpfolio::generate_returns(*sol_n, *sol_p, sol_seed));
      if (sol_center) returns.emplace(returns->centered());
      seed = sol_seed;
    } else if (!sol_input.empty()) {
      returns.emplace(bpfolio::load_returns(sol_input, *sol_n, sol_center));
    } else {
      std::cerr << "solve: give --input FILE or --random\n";
      return kExitUsage;
    }
    const CostModel model = sol_flags.cost_model();
    const BpConfig config = sol_flags.config(model);
    const bpfolio::SolveResult result = bpfolio::solve(*returns, model, config);
    const bpfolio::ExperimentRecord record{seed, returns->n_assets(), returns->n_periods(), model.tag(),
                                           result.diagnostics};
    json j = bpfolio::to_json(record);
    if (sol_with_portfolio) j["portfolio"] = portfolio_json(result.portfolio);
    emit(j.dump(2) + "\n", sol_out);
    if (result.diagnostics.diverged) {
      std::cerr << "solve: diverged after " << result.diagnostics.sweeps_used << " sweeps (alpha="
                << returns->alpha() << ")\n";
      return kExitDiverged;
    }
    if (!result.diagnostics.converged)
      std::cerr << "solve: warning: not converged (final delta " << result.diagnostics.final_delta
                << (result.diagnostics.tail_averaged ? ", reporting the tail average" : "") << ")\n";
    return kExitOk;
  }

  if (*swp) {
    bpfolio::SweepSpec spec;
    spec.alpha_values = swp_alphas;
    spec.n_assets = swp_n;
    spec.trials = swp_trials;
    spec.model = swp_flags.cost_model();
    spec.config = swp_flags.config(spec.model);
    spec.base_seed = swp_seed;
    spec.threads = swp_threads;
    const auto rows = bpfolio::run_sweep(spec);
    emit(bpfolio::format_sweep_csv(rows), swp_out);
    for (const auto& r : rows)
      if (r.se_warning) std::cerr << "sweep: alpha=" << r.alpha << ": fewer than two usable trials\n";
    return kExitOk;
  }

  if (*thy) {
    json j;
    if (*rep) {
      const CostModel model = thy_model == "ad" ? CostModel::absolute_deviation() : CostModel::mean_variance();
      const bpfolio::RsSolution rs = thy_model == "mv" ? bpfolio::rs_closed_form_mv(thy_alpha, thy_beta)
                                                       : bpfolio::rs_fixed_point(thy_alpha, thy_beta, model);
      j = rs_json(rs);
      j["model"] = model.tag();
      if (thy_model == "ad") {
        const auto z = bpfolio::rs_zero_temperature_ad(thy_alpha);
        j["zero_temperature"] = {{"q", bpfolio::finite_or_null(z.q)},
                                 {"eps", bpfolio::finite_or_null(z.eps)},
                                 {"t", bpfolio::finite_or_null(z.t)}};
      }
    } else if (*mp) {
      const auto s = bpfolio::marchenko_pastur(thy_alpha);
      j = {{"alpha", s.alpha},
           {"lambda_plus", s.lambda_plus},
           {"lambda_minus", s.lambda_minus},
           {"inv_lambda_mean", bpfolio::finite_or_null(s.inv_lambda_mean)},
           {"inv_lambda_sq_mean", bpfolio::finite_or_null(s.inv_lambda_sq_mean)},
           {"q", bpfolio::finite_or_null(s.q)},
           {"eps", s.eps},
           {"divergent", s.divergent}};
    } else {
      const auto kind = thy_model == "mv"   ? bpfolio::AnnealedModel::MeanVariance
                        : thy_model == "ad" ? bpfolio::AnnealedModel::AbsoluteDeviation
                                            : bpfolio::AnnealedModel::ExpectedShortfall;
      if (kind == bpfolio::AnnealedModel::ExpectedShortfall && !thy_gamma) {
        std::cerr << "theory annealed: --model es needs --gamma\n";
        return kExitUsage;
      }
      j = {{"model", thy_model},
           {"alpha", thy_alpha},
           {"s", thy_s},
           {"value", bpfolio::annealed_cost(kind, thy_alpha, thy_s, thy_gamma)}};
      if (thy_gamma) j["gamma"] = *thy_gamma;
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }

  if (*ky) {
    json j;
    if (ky_counter) {
      const auto c = bpfolio::ky_counterexample();
      j = {{"w_mv", portfolio_json(c.mean_variance)["positions"]},
           {"w_ad", portfolio_json(c.absolute_deviation)["positions"]},
           {"distance", c.distance},
           {"cosine", bpfolio::portfolio_similarity(c.mean_variance, c.absolute_deviation)},
           {"equal", c.equal}};
    } else {
      const auto s = bpfolio::ky_random(ky_n, ky_p, ky_trials, ky_seed, ky_threads);
      j = {{"n_assets", s.n_assets},
           {"n_periods", s.n_periods},
           {"trials", s.trials},
           {"seed", ky_seed},
           {"mean_cosine", s.mean_cosine},
           {"min_cosine", s.min_cosine},
           {"mean_abs_q_difference", s.mean_abs_q_difference},
           {"mean_q_mv", s.mean_q_mv},
           {"mean_q_ad", s.mean_q_ad},
           {"n_ad_diverged", s.n_ad_diverged}};
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}
