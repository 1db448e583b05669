#pragma once

#include "bilevel/problems.hpp"
#include "bilevel/reporting.hpp"
#include "bilevel/trajectory.hpp"

#include <chrono>
#include <functional>
#include <limits>
#include <utility>

namespace bilevel {

enum class SolveMode { AIT_C, AIT_NC, RHG, TRHG, BDA };

inline const char* to_string(SolveMode m) {
  switch (m) {
    case SolveMode::AIT_C: return "AIT_C";
    case SolveMode::AIT_NC: return "AIT_NC";
    case SolveMode::RHG: return "RHG";
    case SolveMode::TRHG: return "TRHG";
    case SolveMode::BDA: return "BDA";
  }
  return "?";
}

inline std::optional<SolveMode> solve_mode_from(const std::string& s) {
  if (s == "AIT_C") return SolveMode::AIT_C;
  if (s == "AIT_NC") return SolveMode::AIT_NC;
  if (s == "RHG") return SolveMode::RHG;
  if (s == "TRHG") return SolveMode::TRHG;
  if (s == "BDA") return SolveMode::BDA;
  return std::nullopt;
}

// Quadratic pull toward a preferred initialization, weight lambda.
struct PriorConfig {
  Vector z_prior;
  double weight = 0.0;
  bool first_iteration_only = false;
};

inline std::pair<double, Vector> prior_value_and_grad(const Vector& z, const PriorConfig& prior) {
  require_same_dim(z.size(), prior.z_prior.size(), "prior_value_and_grad");
  if (prior.weight < 0.0)
    throw std::invalid_argument("prior_value_and_grad: weight must be >= 0");
  const Vector d = z - prior.z_prior;
  return {prior.weight * d.squaredNorm(), 2.0 * prior.weight * d};
}

struct SolverConfig {
  SolveMode mode = SolveMode::AIT_C;
  int T = 1000;
  int K = 16;
  double alpha_x = 0.01;
  double alpha_z = 0.01;
  SchemeConfig scheme;
  int k_trunc = 0;  // TRHG reverse-pass cap, required in [1, K] for that mode
  std::optional<PriorConfig> prior;
  std::optional<Vector> x0;  // default: 0 projected into X
  std::optional<Vector> z0;  // default: 0 projected into Z
  long seed = 0;
  bool measure_time = true;
};

enum class Termination { Completed, NumericFailure };

struct RunResult {
  Vector x_final;
  Vector z_final;
  Vector y_final;  // selected lower-level iterate of the last completed iteration
  std::vector<ConvergenceRecord> records;
  Termination termination = Termination::Completed;
  int failed_iteration = -1;
  std::vector<std::string> warnings;
};

inline std::pair<double, double> compute_metrics(const Vector& x, double surrogate_value,
                                                 const KnownSolution& known) {
  const double rel_phi =
      std::abs(surrogate_value - known.F_star) / (std::abs(known.F_star) + 1.0);
  const double xn = known.x_star.norm();
  const double dx = (x - known.x_star).norm();
  return {rel_phi, xn > 0.0 ? dx / xn : dx};
}

// Behavior switches distinguishing the public solve modes. All of them share
// one upper-level loop.
struct LoopOptions {
  bool update_z = true;
  bool use_ptt = false;
  std::optional<int> reverse_cap;
  bool prior_in_surrogate = true;  // surrogate adds the prior value when active
  std::function<void(int, const Vector&, const Vector&)> on_iterate;  // (t, x, z) pre-update
};

inline constexpr double kDivergenceGuard = 1e12;

inline RunResult run_upper_loop(const ProblemOracle& o, const SolverConfig& cfg,
                                const LoopOptions& opts,
                                const KnownSolution* known = nullptr) {
  if (cfg.T < 1) throw std::invalid_argument("SolverConfig: T must be >= 1");
  if (cfg.K < 1) throw std::invalid_argument("SolverConfig: K must be >= 1");
  if (!(cfg.alpha_x >= 0.0) || !(cfg.alpha_z >= 0.0))
    throw std::invalid_argument("SolverConfig: step sizes must be >= 0");
  if (opts.reverse_cap && *opts.reverse_cap < 0)
    throw std::invalid_argument("SolverConfig: reverse cap must be >= 0");

  Vector x = cfg.x0 ? *cfg.x0 : project_box(Vector::Zero(o.ul_dim()), o.x_set());
  Vector z = cfg.z0 ? *cfg.z0 : project_box(Vector::Zero(o.ll_dim()), o.z_set());
  require_same_dim(x.size(), o.ul_dim(), "SolverConfig x0");
  require_same_dim(z.size(), o.ll_dim(), "SolverConfig z0");
  require_finite(x, "SolverConfig x0");
  require_finite(z, "SolverConfig z0");
  if (!o.x_set().contains(x)) throw std::invalid_argument("SolverConfig: x0 outside X");
  if (!o.z_set().contains(z)) throw std::invalid_argument("SolverConfig: z0 outside Z");
  if (cfg.prior) {
    require_same_dim(cfg.prior->z_prior.size(), o.ll_dim(), "PriorConfig z_prior");
    require_finite(cfg.prior->z_prior, "PriorConfig z_prior");
    if (!o.z_set().contains(cfg.prior->z_prior))
      throw std::invalid_argument("PriorConfig: z_prior outside Z");
    if (cfg.prior->weight < 0.0)
      throw std::invalid_argument("PriorConfig: weight must be >= 0");
  }

  RunResult res;
  res.warnings = scheme_warnings(cfg.scheme, o);
  res.y_final = z;
  res.records.reserve(cfg.T);

  using Clock = std::chrono::steady_clock;
  auto micros_between = [](Clock::time_point a, Clock::time_point b) {
    return static_cast<double>(
        std::chrono::duration_cast<std::chrono::microseconds>(b - a).count());
  };

  for (int t = 0; t < cfg.T; ++t) {
    if (opts.on_iterate) opts.on_iterate(t, x, z);
    try {
      Clock::time_point t0, t1, t2;
      if (cfg.measure_time) t0 = Clock::now();
      const TrajectoryTape tape = unroll(o, cfg.scheme, x, z, cfg.K);
      const int k_sel = opts.use_ptt ? ptt_select(o, x, tape) : tape.steps();
      if (cfg.measure_time) t1 = Clock::now();
      const HyperGradient hg = reverse_hypergrad(o, tape, k_sel, opts.reverse_cap);
      if (cfg.measure_time) t2 = Clock::now();

      const Vector& y_sel = tape.states[k_sel];
      const bool prior_active = cfg.prior && cfg.prior->weight != 0.0 &&
                                (!cfg.prior->first_iteration_only || t == 0);
      double prior_v = 0.0;
      Vector prior_g;
      if (prior_active) std::tie(prior_v, prior_g) = prior_value_and_grad(z, *cfg.prior);

      const double surrogate =
          o.eval_F(x, y_sel) + (prior_active && opts.prior_in_surrogate ? prior_v : 0.0);
      if (!std::isfinite(surrogate) || std::abs(surrogate) > kDivergenceGuard)
        throw NumericError("surrogate value tripped the divergence guard", t);

      ConvergenceRecord rec;
      rec.t = t;
      rec.k_bar = k_sel;
      rec.surrogate_value = surrogate;
      rec.ll_final_f = o.eval_f(x, tape.y_final());
      rec.residual_min = min_residual_along(o, x, tape).value;
      if (known) {
        std::tie(rec.rel_phi_err, rec.rel_x_err) = compute_metrics(x, surrogate, *known);
      } else {
        rec.rel_phi_err = std::numeric_limits<double>::quiet_NaN();
        rec.rel_x_err = std::numeric_limits<double>::quiet_NaN();
      }
      if (cfg.measure_time) {
        rec.fwd_micros = micros_between(t0, t1);
        rec.bwd_micros = micros_between(t1, t2);
        rec.wall_micros = rec.fwd_micros + rec.bwd_micros;
      }
      res.records.push_back(rec);
      res.y_final = y_sel;

      x = project_box(x - cfg.alpha_x * hg.g_x, o.x_set());
      if (opts.update_z) {
        Vector g_z = hg.g_z;
        if (prior_active) g_z += prior_g;
        z = project_box(z - cfg.alpha_z * g_z, o.z_set());
      }
      if (!x.allFinite() || !z.allFinite())
        throw NumericError("iterate became non-finite after the update", t);
    } catch (const NumericError& e) {
      res.termination = Termination::NumericFailure;
      res.failed_iteration = t;
      res.warnings.push_back("iteration " + std::to_string(t) + ": " + e.what());
      break;
    }
  }
  res.x_final = x;
  res.z_final = z;
  return res;
}

// Joint (x, z) loop over the full-trajectory surrogate; convex-regime schemes.
inline RunResult solve_ait_c(const ProblemOracle& o, const SolverConfig& cfg,
                             const KnownSolution* known = nullptr) {
  if (cfg.mode != SolveMode::AIT_C)
    throw std::invalid_argument("solve_ait_c: cfg.mode must be AIT_C");
  if (cfg.scheme.kind == SchemeKind::AGD)
    throw std::invalid_argument("solve_ait_c: scheme must be PG, BDA, or NESTEROV");
  LoopOptions opts;
  opts.update_z = true;
  opts.use_ptt = false;
  opts.prior_in_surrogate = true;
  return run_upper_loop(o, cfg, opts, known);
}

// Joint (x, z) loop over the truncation-selected surrogate; nonconvex-regime
// schemes. The prior, when configured, steers only the z update.
inline RunResult solve_ait_nc(const ProblemOracle& o, const SolverConfig& cfg,
                              const KnownSolution* known = nullptr) {
  if (cfg.mode != SolveMode::AIT_NC)
    throw std::invalid_argument("solve_ait_nc: cfg.mode must be AIT_NC");
  if (cfg.scheme.kind != SchemeKind::PG && cfg.scheme.kind != SchemeKind::AGD)
    throw std::invalid_argument("solve_ait_nc: scheme must be PG or AGD");
  LoopOptions opts;
  opts.update_z = true;
  opts.use_ptt = true;
  opts.prior_in_surrogate = false;
  return run_upper_loop(o, cfg, opts, known);
}

// Fixed-initialization baseline; the truncated variant caps the reverse pass.
inline RunResult solve_rhg(const ProblemOracle& o, const SolverConfig& cfg,
                           const KnownSolution* known = nullptr) {
  if (cfg.mode != SolveMode::RHG && cfg.mode != SolveMode::TRHG)
    throw std::invalid_argument("solve_rhg: cfg.mode must be RHG or TRHG");
  LoopOptions opts;
  opts.update_z = false;
  opts.use_ptt = false;
  opts.prior_in_surrogate = false;
  if (cfg.mode == SolveMode::TRHG) {
    if (cfg.k_trunc < 1 || cfg.k_trunc > cfg.K)
      throw std::invalid_argument("solve_rhg: TRHG needs k_trunc in [1, K]");
    opts.reverse_cap = cfg.k_trunc;
  }
  RunResult res = run_upper_loop(o, cfg, opts, known);
  if (cfg.prior) res.warnings.push_back("prior configuration ignored in fixed-z mode");
  return res;
}

// Aggregation baseline: fixed z, aggregated lower-level steps, full reverse.
inline RunResult solve_bda(const ProblemOracle& o, const SolverConfig& cfg,
                           const KnownSolution* known = nullptr) {
  if (cfg.mode != SolveMode::BDA)
    throw std::invalid_argument("solve_bda: cfg.mode must be BDA");
  if (cfg.scheme.kind != SchemeKind::BDA)
    throw std::invalid_argument("solve_bda: scheme must be BDA");
  LoopOptions opts;
  opts.update_z = false;
  opts.use_ptt = false;
  opts.prior_in_surrogate = false;
  RunResult res = run_upper_loop(o, cfg, opts, known);
  if (cfg.prior) res.warnings.push_back("prior configuration ignored in fixed-z mode");
  return res;
}

inline RunResult solve(const ProblemOracle& o, const SolverConfig& cfg,
                       const KnownSolution* known = nullptr) {
  switch (cfg.mode) {
    case SolveMode::AIT_C: return solve_ait_c(o, cfg, known);
    case SolveMode::AIT_NC: return solve_ait_nc(o, cfg, known);
    case SolveMode::RHG:
    case SolveMode::TRHG: return solve_rhg(o, cfg, known);
    case SolveMode::BDA: return solve_bda(o, cfg, known);
  }
  throw std::invalid_argument("solve: unknown mode");
}

}  // namespace bilevel
