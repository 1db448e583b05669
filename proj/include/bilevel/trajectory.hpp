#pragma once

#include "bilevel/dynamics.hpp"

#include <optional>
#include <ostream>

namespace bilevel {

// Recorded lower-level unroll: states[k] is the reported iterate y_k with
// states[0] == z, records[k] replays the step y_k -> y_{k+1}.
struct TrajectoryTape {
  SchemeConfig scheme;
  Vector x_at_unroll;
  Vector z_at_unroll;
  std::vector<Vector> states;
  std::vector<StepRecord> records;

  int steps() const { return static_cast<int>(records.size()); }
  const Vector& y_final() const { return states.back(); }
};

inline TrajectoryTape unroll(const ProblemOracle& o, const SchemeConfig& cfg, const Vector& x,
                             const Vector& z, int steps) {
  if (steps < 1) throw std::invalid_argument("unroll: steps must be >= 1");
  require_same_dim(x.size(), o.ul_dim(), "unroll x");
  require_same_dim(z.size(), o.ll_dim(), "unroll z");
  require_finite(x, "unroll x");
  require_finite(z, "unroll z");
  if (!o.z_set().contains(z))
    throw std::invalid_argument("unroll: z outside the initialization set");

  TrajectoryTape tape;
  tape.scheme = cfg;
  tape.x_at_unroll = x;
  tape.z_at_unroll = z;
  tape.states.reserve(steps + 1);
  tape.records.reserve(steps);
  tape.states.push_back(z);

  auto step_context = [](int k) {
    return NumericError("unroll: numeric failure inside step " + std::to_string(k),
                        static_cast<long>(k));
  };

  switch (cfg.kind) {
    case SchemeKind::PG: {
      Vector y = z;
      for (int k = 0; k < steps; ++k) {
        try {
          ForwardStep st = pg_forward(o, x, y, cfg, k);
          y = st.y_next;
          tape.records.push_back(std::move(st.rec));
        } catch (const NumericError&) {
          throw step_context(k);
        }
        tape.states.push_back(y);
      }
      break;
    }
    case SchemeKind::BDA: {
      Vector y = z;
      for (int k = 0; k < steps; ++k) {
        try {
          ForwardStep st = bda_forward(o, x, y, k, cfg);
          y = st.y_next;
          tape.records.push_back(std::move(st.rec));
        } catch (const NumericError&) {
          throw step_context(k);
        }
        tape.states.push_back(y);
      }
      break;
    }
    case SchemeKind::Nesterov: {
      NesterovState st{z, z};
      for (int k = 0; k < steps; ++k) {
        try {
          NesterovForward f = nesterov_forward(o, x, st, k, cfg);
          st = f.next;
          tape.records.push_back(std::move(f.rec));
        } catch (const NumericError&) {
          throw step_context(k);
        }
        tape.states.push_back(st.y);
      }
      break;
    }
    case SchemeKind::AGD: {
      AgdState st{z, z};
      for (int k = 0; k < steps; ++k) {
        try {
          AgdForward f = agd_forward(o, x, st, k, cfg);
          st = f.next;
          tape.states.push_back(f.y_next);
          tape.records.push_back(std::move(f.rec));
        } catch (const NumericError&) {
          throw step_context(k);
        }
      }
      break;
    }
  }
  return tape;
}

// Index of the upper-objective-maximizing iterate over k = 1..K, smallest on
// ties. y_0 is excluded: it carries no reverse path.
inline int ptt_select(const ProblemOracle& o, const Vector& x, const TrajectoryTape& tape) {
  const int K = tape.steps();
  int best_k = 1;
  double best_v = o.eval_F(x, tape.states[1]);
  for (int k = 2; k <= K; ++k) {
    const double v = o.eval_F(x, tape.states[k]);
    if (v > best_v) {
      best_v = v;
      best_k = k;
    }
  }
  return best_k;
}

struct HyperGradient {
  Vector g_x;
  Vector g_z;
  int k_selected = 0;
  int vjp_steps = 0;
};

// Adjoint walk from the selected iterate back toward z. max_steps caps the
// walk (truncated backpropagation); a capped walk never reaches z, so g_z is
// zero then.
inline HyperGradient reverse_hypergrad(const ProblemOracle& o, const TrajectoryTape& tape,
                                       int k_selected,
                                       std::optional<int> max_steps = std::nullopt) {
  const int K = tape.steps();
  if (k_selected < 1 || k_selected > K)
    throw std::invalid_argument("reverse_hypergrad: k_selected must be in [1, steps]");
  if (max_steps && *max_steps < 0)
    throw std::invalid_argument("reverse_hypergrad: max_steps must be >= 0");

  const Vector& x = tape.x_at_unroll;
  const SchemeConfig& cfg = tape.scheme;
  const int walk = max_steps ? std::min(*max_steps, k_selected) : k_selected;
  const bool reaches_z = walk == k_selected;
  const int stop = k_selected - walk;  // first record index not visited

  HyperGradient hg;
  hg.k_selected = k_selected;
  hg.vjp_steps = walk;
  hg.g_x = o.grad_F_x(x, tape.states[k_selected]);
  hg.g_z = Vector::Zero(o.ll_dim());
  const Vector seed = o.grad_F_y(x, tape.states[k_selected]);

  switch (cfg.kind) {
    case SchemeKind::PG: {
      Vector p = seed;
      for (int i = k_selected - 1; i >= stop; --i) {
        VjpStep r = pg_vjp(o, x, tape.records[i], p, cfg);
        hg.g_x += r.g_x;
        p = std::move(r.p_y);
      }
      if (reaches_z) hg.g_z = p;
      break;
    }
    case SchemeKind::BDA: {
      Vector p = seed;
      for (int i = k_selected - 1; i >= stop; --i) {
        VjpStep r = bda_vjp(o, x, tape.records[i], p, cfg);
        hg.g_x += r.g_x;
        p = std::move(r.p_y);
      }
      if (reaches_z) hg.g_z = p;
      break;
    }
    case SchemeKind::Nesterov: {
      NesterovAdjoint adj{seed, Vector::Zero(seed.size())};
      for (int i = k_selected - 1; i >= stop; --i) {
        NesterovVjp r = nesterov_vjp(o, x, tape.records[i], adj, cfg);
        hg.g_x += r.g_x;
        adj = std::move(r.prev);
      }
      if (reaches_z) hg.g_z = adj.p_y + adj.p_u;  // y_0 and u_0 are both z
      break;
    }
    case SchemeKind::AGD: {
      AgdAdjoint adj{seed, Vector::Zero(seed.size()), Vector::Zero(seed.size())};
      for (int i = k_selected - 1; i >= stop; --i) {
        AgdVjp r = agd_vjp(o, x, tape.records[i], adj, cfg);
        hg.g_x += r.g_x;
        adj = std::move(r.prev);
      }
      if (reaches_z) hg.g_z = adj.p_y + adj.p_u + adj.p_v;  // u_0 and v_0 are both z
      break;
    }
  }
  return hg;
}

// Fixed-point gap of one projected-gradient sweep; zero exactly at lower-level
// stationary points of the constrained problem.
inline double residual(const ProblemOracle& o, const Vector& x, const Vector& y, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("residual: alpha must be > 0");
  const Vector stepped = project_box(y - alpha * o.grad_f_y(x, y), o.y_set());
  return (y - stepped).norm();
}

// Step length that makes the residual comparable with the scheme's own update.
inline double scheme_residual_alpha(const SchemeConfig& cfg, const ProblemOracle& o) {
  switch (cfg.kind) {
    case SchemeKind::PG:
    case SchemeKind::Nesterov:
      return cfg.step_alpha;
    case SchemeKind::BDA:
      return cfg.s_l;
    case SchemeKind::AGD:
      return 1.0 / (2.0 * cfg.agd_lf(o));
  }
  return cfg.step_alpha;
}

struct MinResidual {
  double value = 0.0;
  int k = 0;  // first index attaining the minimum
};

inline MinResidual min_residual_along(const ProblemOracle& o, const Vector& x,
                                      const TrajectoryTape& tape) {
  const double alpha = scheme_residual_alpha(tape.scheme, o);
  MinResidual best{residual(o, x, tape.states[0], alpha), 0};
  for (int k = 1; k <= tape.steps(); ++k) {
    const double r = residual(o, x, tape.states[k], alpha);
    if (r < best.value) {
      best.value = r;
      best.k = k;
    }
  }
  return best;
}

// True when any projection argument sits within margin of a finite box face;
// finite differencing across such a kink is meaningless.
inline bool tape_near_projection_kink(const TrajectoryTape& tape, const BoxSet& box,
                                      double margin) {
  auto near_face = [&](const Vector& pre) {
    if (pre.size() == 0) return false;
    for (Index i = 0; i < pre.size(); ++i) {
      const double lo = box.lower[i], hi = box.upper[i];
      if (std::isfinite(lo) && std::abs(pre[i] - lo) <= margin) return true;
      if (std::isfinite(hi) && std::abs(pre[i] - hi) <= margin) return true;
    }
    return false;
  };
  for (const StepRecord& r : tape.records)
    if (near_face(r.pre_proj) || near_face(r.pre_proj_v)) return true;
  return false;
}

// Slow reference for the adjoint walk: differentiates k -> F(x, y_k(x, z))
// by re-unrolling with perturbed inputs. Intended for tests.
inline HyperGradient fd_hypergrad(const ProblemOracle& o, const SchemeConfig& cfg,
                                  const Vector& x, const Vector& z, int steps, int k_selected,
                                  double h = kDefaultFdStep) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_hypergrad: h must be > 0");
  auto value = [&](const Vector& xx, const Vector& zz) {
    TrajectoryTape t = unroll(o, cfg, xx, zz, steps);
    if (k_selected < 1 || k_selected > t.steps())
      throw std::invalid_argument("fd_hypergrad: k_selected out of range");
    return o.eval_F(xx, t.states[k_selected]);
  };
  HyperGradient hg;
  hg.k_selected = k_selected;
  hg.vjp_steps = k_selected;
  hg.g_x = finite_diff_gradient([&](const Vector& xx) { return value(xx, z); }, x, h);
  hg.g_z = finite_diff_gradient([&](const Vector& zz) { return value(x, zz); }, z, h);
  return hg;
}

inline void dump_trajectory_csv(std::ostream& out, const ProblemOracle& o, const Vector& x,
                                const TrajectoryTape& tape) {
  const double alpha = scheme_residual_alpha(tape.scheme, o);
  out << "k,f_value,F_value,residual\n";
  char buf[96];
  for (int k = 0; k <= tape.steps(); ++k) {
    const Vector& y = tape.states[k];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", k, o.eval_f(x, y), o.eval_F(x, y),
                  residual(o, x, y, alpha));
    out << buf;
  }
}

}  // namespace bilevel
