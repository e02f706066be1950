#pragma once

// Domain types shared by the solver, the oracles, the theory module and the
// command-line harness.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

namespace bpfolio {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed return-set input. Row and column are 1-based; 0 means "not tied
/// to a cell" (e.g. an empty file).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what), row_(row), column_(column) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

// ---------------------------------------------------------------------------
// ReturnSet
// ---------------------------------------------------------------------------

/// N x p matrix of per-asset (rows), per-period (columns) returns.
class ReturnSet {
 public:
  explicit ReturnSet(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (entries_.rows() < 2)
      throw std::invalid_argument("ReturnSet: need at least 2 assets, got " +
                                  std::to_string(entries_.rows()));
    if (entries_.cols() < 1)
      throw std::invalid_argument("ReturnSet: need at least 1 period");
    if (!entries_.allFinite())
      throw std::invalid_argument("ReturnSet: entries must be finite");
  }

  const Eigen::MatrixXd& entries() const noexcept { return entries_; }
  int n_assets() const noexcept { return static_cast<int>(entries_.rows()); }
  int n_periods() const noexcept { return static_cast<int>(entries_.cols()); }
  double alpha() const noexcept {
    return static_cast<double>(n_periods()) / static_cast<double>(n_assets());
  }

  /// Subtract each asset's sample mean. Not applied by default anywhere.
  ReturnSet centered() const {
    Eigen::MatrixXd x = entries_;
    x.colwise() -= x.rowwise().mean();
    return ReturnSet(std::move(x));
  }

 private:
  Eigen::MatrixXd entries_;
};

// ---------------------------------------------------------------------------
// Portfolio
// ---------------------------------------------------------------------------

struct Portfolio {
  Eigen::VectorXd positions;
  double budget = 0.0;

  Portfolio() = default;
  explicit Portfolio(Eigen::VectorXd w)
      : positions(std::move(w)), budget(static_cast<double>(positions.size())) {}
  Portfolio(Eigen::VectorXd w, double b) : positions(std::move(w)), budget(b) {}

  int size() const noexcept { return static_cast<int>(positions.size()); }
  double budget_residual() const { return positions.sum() - budget; }
  bool satisfies_budget(double tol_per_asset = 1e-9) const {
    return std::abs(budget_residual()) <= tol_per_asset * static_cast<double>(size());
  }
  /// Positions rescaled so they sum to one. Post-processing only; every
  /// observable in this library assumes the budget N.
  Portfolio rescaled_to_unit_budget() const { return Portfolio(positions / budget, 1.0); }
};

// ---------------------------------------------------------------------------
// Cost models
// ---------------------------------------------------------------------------

/// Scalar cost R(u) for the quadrature channel. `kinks` lists the points
/// where R is not differentiable; the integrators split their panels there.
/// The derivatives are optional and only consulted by the convex oracle.
struct ScalarCost {
  std::string name;
  std::function<double(double)> value;
  std::vector<double> kinks;
  std::function<double(double)> derivative;
  std::function<double(double)> second_derivative;
};

inline ScalarCost quadratic_cost() {
  return {"quadratic", [](double u) { return 0.5 * u * u; }, {},
          [](double u) { return u; }, [](double) { return 1.0; }};
}

inline ScalarCost absolute_cost() {
  return {"absolute", [](double u) { return std::abs(u); }, {0.0},
          [](double u) { return u > 0 ? 1.0 : (u < 0 ? -1.0 : 0.0); },
          [](double) { return 0.0; }};
}

inline ScalarCost huber_cost(double delta) {
  if (!(delta > 0)) throw std::invalid_argument("huber_cost: delta must be positive");
  return {"huber",
          [delta](double u) {
            const double a = std::abs(u);
            return a <= delta ? 0.5 * u * u : delta * (a - 0.5 * delta);
          },
          {-delta, delta},
          [delta](double u) { return std::clamp(u, -delta, delta); },
          [delta](double u) { return std::abs(u) <= delta ? 1.0 : 0.0; }};
}

inline ScalarCost flat_cost() {
  return {"flat", [](double) { return 0.0; }, {}, [](double) { return 0.0; },
          [](double) { return 0.0; }};
}

enum class CostKind { MeanVariance, AbsoluteDeviation, GenericQuadrature };

class CostModel {
 public:
  static CostModel mean_variance() { return CostModel(CostKind::MeanVariance, quadratic_cost(), 0); }
  static CostModel absolute_deviation() {
    return CostModel(CostKind::AbsoluteDeviation, absolute_cost(), 0);
  }
  static CostModel generic(ScalarCost cost, int quadrature_order = 64) {
    if (!cost.value) throw std::invalid_argument("CostModel::generic: cost has no value function");
    if (quadrature_order < 16)
      throw std::invalid_argument("CostModel::generic: quadrature order must be >= 16");
    return CostModel(CostKind::GenericQuadrature, std::move(cost), quadrature_order);
  }

  CostKind kind() const noexcept { return kind_; }
  const ScalarCost& cost() const noexcept { return cost_; }
  int quadrature_order() const noexcept { return order_; }

  double operator()(double u) const {
    switch (kind_) {
      case CostKind::MeanVariance: return 0.5 * u * u;
      case CostKind::AbsoluteDeviation: return std::abs(u);
      case CostKind::GenericQuadrature: return cost_.value(u);
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

  /// Short tag used in CLI flags and JSON records.
  std::string tag() const {
    switch (kind_) {
      case CostKind::MeanVariance: return "mv";
      case CostKind::AbsoluteDeviation: return "ad";
      case CostKind::GenericQuadrature: return "generic:" + cost_.name;
    }
    return "?";
  }

 private:
  CostModel(CostKind kind, ScalarCost cost, int order)
      : kind_(kind), cost_(std::move(cost)), order_(order) {}

  CostKind kind_;
  ScalarCost cost_;
  int order_;
};

// ---------------------------------------------------------------------------
// Solver configuration, state and results
// ---------------------------------------------------------------------------

/// Geometric inverse-temperature ladder beta_start, beta_start*factor, ...,
/// beta_final. Every rung but the last is capped at `sweeps_per_rung`.
struct BetaSchedule {
  double beta_start = 1.0;
  double factor = 2.0;
  double beta_final = 1048576.0;  // 2^20
  int sweeps_per_rung = 200;

  std::vector<double> rungs() const {
    std::vector<double> out;
    for (double b = beta_start; b < beta_final * (1 - 1e-12); b *= factor) out.push_back(b);
    out.push_back(beta_final);
    return out;
  }
};

struct BpConfig {
  double beta = 1.0;
  double damping = 0.5;
  double tol = 1e-10;
  int max_sweeps = 5000;
  std::optional<BetaSchedule> beta_schedule;
  double divergence_threshold = 1e6;
  // Mixes the previous chi_u into each new chi_u, like `damping` for means.
  double variance_damping = 0.0;
  // If the final rung ends without converging, report the mean of m_w over
  // the second half of its sweeps instead of the last iterate.
  bool tail_average = true;

  void validate() const {
    if (!(beta > 0) || !std::isfinite(beta)) throw std::invalid_argument("BpConfig: beta must be positive");
    if (!(damping >= 0 && damping < 1)) throw std::invalid_argument("BpConfig: damping must lie in [0,1)");
    if (!(tol > 0)) throw std::invalid_argument("BpConfig: tol must be positive");
    if (!(variance_damping >= 0 && variance_damping < 1))
      throw std::invalid_argument("BpConfig: variance_damping must lie in [0,1)");
    if (max_sweeps < 1) throw std::invalid_argument("BpConfig: max_sweeps must be positive");
    if (!(divergence_threshold > 0))
      throw std::invalid_argument("BpConfig: divergence_threshold must be positive");
    if (beta_schedule) {
      const auto& s = *beta_schedule;
      if (!(s.beta_start > 0) || !(s.factor > 1) || !(s.beta_final >= s.beta_start) ||
          s.sweeps_per_rung < 1)
        throw std::invalid_argument("BpConfig: invalid beta schedule");
    }
  }

  /// Defaults per model: the absolute-deviation model walks the ladder
  /// 1 -> 2^20 by doubling with damped variances; the other models run at a
  /// single beta.
  static BpConfig defaults_for(const CostModel& model) {
    BpConfig c;
    if (model.kind() == CostKind::AbsoluteDeviation) {
      c.beta_schedule = BetaSchedule{};
      c.variance_damping = 0.9;
    }
    return c;
  }

  /// The inverse temperature the run ends at.
  double final_beta() const { return beta_schedule ? beta_schedule->beta_final : beta; }
};

/// Message-passing marginals. Asset side has length N, period side length p.
struct BpState {
  Eigen::VectorXd m_w, chi_w, h_w, chi_tilde_w;
  Eigen::VectorXd m_u, chi_u, h_u, chi_tilde_u;
  double m_tilde = 0.0;
  int sweep_count = 0;
};

struct Diagnostics {
  double q_hat = 0.0;
  double eps_hat = 0.0;
  bool converged = false;
  bool diverged = false;
  int sweeps_used = 0;
  double final_delta = std::numeric_limits<double>::infinity();
  bool tail_averaged = false;
};

/// Replica-symmetric order parameters. `divergent` marks the alpha <= 1
/// phase, where q and chi are reported as +infinity.
struct RsSolution {
  double q = 0.0;
  double chi = 0.0;
  double eta = 0.0;
  double delta = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  bool divergent = false;
  int iterations = 0;
  double residual = 0.0;

  static RsSolution divergent_phase(double alpha, double beta) {
    RsSolution s;
    s.q = s.chi = std::numeric_limits<double>::infinity();
    s.eta = s.delta = std::numeric_limits<double>::quiet_NaN();
    s.alpha = alpha;
    s.beta = beta;
    s.divergent = true;
    return s;
  }
};

struct ExperimentRecord {
  std::uint64_t seed = 0;
  int n_assets = 0;
  int n_periods = 0;
  std::string model;
  Diagnostics diagnostics;
};

/// JSON number or null for non-finite values (JSON has no inf/nan).
inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const ExperimentRecord& r) {
  return {{"seed", r.seed},
          {"n_assets", r.n_assets},
          {"n_periods", r.n_periods},
          {"model", r.model},
          {"q_hat", finite_or_null(r.diagnostics.q_hat)},
          {"eps_hat", finite_or_null(r.diagnostics.eps_hat)},
          {"converged", r.diagnostics.converged},
          {"diverged", r.diagnostics.diverged},
          {"sweeps", r.diagnostics.sweeps_used},
          {"final_delta", finite_or_null(r.diagnostics.final_delta)},
          {"tail_averaged", r.diagnostics.tail_averaged}};
}

// ---------------------------------------------------------------------------
// Synthetic returns
// ---------------------------------------------------------------------------

/// Standard-normal stream pinned for golden files: std::mt19937_64 (whose
/// output sequence is fixed by the C++ standard), 53-bit uniforms taken from
/// the top bits, and the Box-Muller transform emitting cos then sin.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// i.i.d. N(0,1) returns, drawn asset by asset (row-major order).
inline ReturnSet generate_returns(int n_assets, int n_periods, std::uint64_t seed) {
  if (n_assets < 2) throw std::invalid_argument("generate_returns: n_assets must be >= 2");
  if (n_periods < 1) throw std::invalid_argument("generate_returns: n_periods must be >= 1");
  NormalStream normal(seed);
  Eigen::MatrixXd x(n_assets, n_periods);
  for (int k = 0; k < n_assets; ++k)
    for (int mu = 0; mu < n_periods; ++mu) x(k, mu) = normal();
  return ReturnSet(std::move(x));
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline double parse_cell(std::string_view cell, std::size_t row, std::size_t col) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value))
    throw ParseError("non-numeric cell '" + std::string(cell) + "' at row " + std::to_string(row) +
                         ", column " + std::to_string(col),
                     row, col);
  return value;
}

}  // namespace detail

/// Parse comma-separated returns, one asset per row, no header.
inline ReturnSet parse_returns(std::string_view text, int n_assets) {
  std::vector<std::vector<double>> rows;
  std::size_t row_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const auto line = detail::trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++row_no;
    if (line.empty()) {
      if (pos > text.size()) break;  // trailing newline
      throw ParseError("empty line at row " + std::to_string(row_no), row_no, 0);
    }
    std::vector<double> row;
    std::size_t cpos = 0;
    std::size_t col = 0;
    while (true) {
      auto comma = line.find(',', cpos);
      const auto cell = line.substr(cpos, comma == std::string_view::npos ? std::string_view::npos
                                                                           : comma - cpos);
      row.push_back(detail::parse_cell(cell, row_no, ++col));
      if (comma == std::string_view::npos) break;
      cpos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("ragged row at row " + std::to_string(row_no) + ": expected " +
                           std::to_string(rows.front().size()) + " columns, got " +
                           std::to_string(row.size()),
                       row_no, row.size());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no rows", 0, 0);
  if (static_cast<int>(rows.size()) != n_assets)
    throw ParseError("expected " + std::to_string(n_assets) + " rows (assets), got " +
                         std::to_string(rows.size()),
                     rows.size(), 0);
  Eigen::MatrixXd x(rows.size(), rows.front().size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t mu = 0; mu < rows[k].size(); ++mu) x(k, mu) = rows[k][mu];
  return ReturnSet(std::move(x));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write to a sibling temporary file, then rename over the target.
inline void write_file_atomically(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline ReturnSet load_returns(const std::filesystem::path& path, int n_assets, bool center = false) {
  auto r = parse_returns(read_file(path), n_assets);
  return center ? r.centered() : r;
}

/// 17 significant digits, so a save/load cycle reproduces every double.
inline std::string format_returns(const ReturnSet& r) {
  std::string out;
  char buf[32];
  const auto& x = r.entries();
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    for (Eigen::Index mu = 0; mu < x.cols(); ++mu) {
      if (mu) out += ',';
      const int n = std::snprintf(buf, sizeof buf, "%.17g", x(k, mu));
      out.append(buf, static_cast<std::size_t>(n));
    }
    out += '\n';
  }
  return out;
}

inline void save_returns(const std::filesystem::path& path, const ReturnSet& r) {
  write_file_atomically(path, format_returns(r));
}

}  // namespace bpfolio
