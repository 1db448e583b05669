#pragma once

#include "bilevel/problem.hpp"

#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace bilevel {

enum class SchemeKind { PG, BDA, Nesterov, AGD };

inline const char* to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::PG: return "PG";
    case SchemeKind::BDA: return "BDA";
    case SchemeKind::Nesterov: return "NESTEROV";
    case SchemeKind::AGD: return "AGD";
  }
  return "?";
}

// Case-insensitive; canonical names are the to_string spellings.
inline std::optional<SchemeKind> scheme_kind_from(const std::string& s) {
  std::string up = s;
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "PG") return SchemeKind::PG;
  if (up == "BDA") return SchemeKind::BDA;
  if (up == "NESTEROV") return SchemeKind::Nesterov;
  if (up == "AGD") return SchemeKind::AGD;
  return std::nullopt;
}

// Lower-level update rule and its constants.
struct SchemeConfig {
  SchemeKind kind = SchemeKind::PG;
  double step_alpha = 0.1;              // PG / Nesterov step
  double mu = 0.5;                      // BDA aggregation weight
  double s_u = 0.1;                     // BDA upper-gradient scale
  double s_l = 0.1;                     // BDA lower-gradient scale
  double bda_beta = 1.0;                // BDA beta_k, constant schedule
  std::optional<double> lf_override;    // AGD curvature constant override

  double agd_lf(const ProblemOracle& o) const {
    return lf_override ? *lf_override : o.lipschitz_f();
  }
};

// Deterministic schedules, recomputed from k so forward and reverse passes
// agree bit for bit.
inline double bda_alpha_k(int k) { return 1.0 / (k + 1.0); }
inline double agd_alpha_k(int k) { return 2.0 / (k + 1.0); }
inline double agd_lambda_k(int k, double beta) { return 0.5 * k * beta; }

inline double nesterov_t(int k) {
  if (k < 0) throw std::invalid_argument("nesterov_t: k must be >= 0");
  double t = 1.0;
  for (int i = 0; i < k; ++i) t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
  return t;
}

// Everything the reverse pass needs to replay one forward step. Fields not
// used by a scheme stay empty.
struct StepRecord {
  int k = 0;
  Vector y_in;         // reported state entering the step
  Vector grad_point;   // where the lower-level gradient was evaluated
  Vector pre_proj;     // argument of the main projection
  Vector mask;         // its derivative mask
  Vector aux_u;        // Nesterov u_k / AGD u_k
  Vector aux_v;        // AGD v_k
  Vector pre_proj_v;   // AGD v-update projection argument
  Vector mask_v;
};

struct ForwardStep {
  Vector y_next;
  StepRecord rec;
};

// One adjoint pull through a recorded step: p_y is the carried adjoint of the
// reported state, g_x the step's contribution to the x-gradient.
struct VjpStep {
  Vector p_y;
  Vector g_x;
};

namespace detail {
inline void check_scheme_common(const SchemeConfig& cfg) {
  switch (cfg.kind) {
    case SchemeKind::PG:
    case SchemeKind::Nesterov:
      if (!(cfg.step_alpha > 0.0))
        throw std::invalid_argument("SchemeConfig: step_alpha must be > 0");
      break;
    case SchemeKind::BDA:
      if (!(cfg.s_u > 0.0) || !(cfg.s_l > 0.0))
        throw std::invalid_argument("SchemeConfig: s_u and s_l must be > 0");
      if (!(cfg.mu >= 0.0 && cfg.mu <= 1.0))
        throw std::invalid_argument("SchemeConfig: mu must be in [0,1]");
      if (!(cfg.bda_beta > 0.0))
        throw std::invalid_argument("SchemeConfig: bda_beta must be > 0");
      break;
    case SchemeKind::AGD:
      break;
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Projected gradient:  y_{k+1} = Proj_Y(y_k - alpha grad_f_y(x, y_k)).

inline ForwardStep pg_forward(const ProblemOracle& o, const Vector& x, const Vector& y_k,
                              const SchemeConfig& cfg, int k = 0) {
  detail::check_scheme_common(cfg);
  ForwardStep out;
  out.rec.k = k;
  out.rec.y_in = y_k;
  out.rec.grad_point = y_k;
  out.rec.pre_proj = y_k - cfg.step_alpha * o.grad_f_y(x, y_k);
  out.rec.mask = project_box_vjp_mask(out.rec.pre_proj, o.y_set());
  out.y_next = project_box(out.rec.pre_proj, o.y_set());
  return out;
}

inline VjpStep pg_vjp(const ProblemOracle& o, const Vector& x, const StepRecord& rec,
                      const Vector& p, const SchemeConfig& cfg) {
  const Vector q = rec.mask.cwiseProduct(p);
  VjpStep out;
  out.p_y = q - cfg.step_alpha * o.hvp_f_yy(x, rec.y_in, q);
  out.g_x = -cfg.step_alpha * o.cross_f_xy(x, rec.y_in, q);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregated step mixing both objectives' gradients:
//   d_k = mu alpha_k s_u grad_F_y + (1-mu) beta_k s_l grad_f_y,
//   y_{k+1} = Proj_Y(y_k - d_k),  alpha_k = 1/(k+1), beta_k constant.

inline ForwardStep bda_forward(const ProblemOracle& o, const Vector& x, const Vector& y_k,
                               int k, const SchemeConfig& cfg) {
  detail::check_scheme_common(cfg);
  const double cu = cfg.mu * bda_alpha_k(k) * cfg.s_u;
  const double cl = (1.0 - cfg.mu) * cfg.bda_beta * cfg.s_l;
  ForwardStep out;
  out.rec.k = k;
  out.rec.y_in = y_k;
  out.rec.grad_point = y_k;
  out.rec.pre_proj = y_k - cu * o.grad_F_y(x, y_k) - cl * o.grad_f_y(x, y_k);
  out.rec.mask = project_box_vjp_mask(out.rec.pre_proj, o.y_set());
  out.y_next = project_box(out.rec.pre_proj, o.y_set());
  return out;
}

inline VjpStep bda_vjp(const ProblemOracle& o, const Vector& x, const StepRecord& rec,
                       const Vector& p, const SchemeConfig& cfg) {
  const double cu = cfg.mu * bda_alpha_k(rec.k) * cfg.s_u;
  const double cl = (1.0 - cfg.mu) * cfg.bda_beta * cfg.s_l;
  const Vector q = rec.mask.cwiseProduct(p);
  VjpStep out;
  out.p_y = q;
  if (cu != 0.0) out.p_y -= cu * o.hvp_F_yy(x, rec.y_in, q);
  out.p_y -= cl * o.hvp_f_yy(x, rec.y_in, q);
  out.g_x = -cl * o.cross_f_xy(x, rec.y_in, q);
  if (cu != 0.0) out.g_x -= cu * o.cross_F_xy(x, rec.y_in, q);
  return out;
}

// ---------------------------------------------------------------------------
// Momentum dynamics, u_0 = y_0 = z:
//   y_{k+1} = Proj_Y(u_k - alpha grad_f_y(x, u_k))
//   u_{k+1} = y_{k+1} + ((t_k - 1)/t_{k+1}) (y_{k+1} - y_k)

struct NesterovState {
  Vector y, u;
};

struct NesterovForward {
  NesterovState next;
  StepRecord rec;
};

inline NesterovForward nesterov_forward(const ProblemOracle& o, const Vector& x,
                                        const NesterovState& st, int k,
                                        const SchemeConfig& cfg) {
  detail::check_scheme_common(cfg);
  const double gamma = (nesterov_t(k) - 1.0) / nesterov_t(k + 1);
  NesterovForward out;
  out.rec.k = k;
  out.rec.y_in = st.y;
  out.rec.aux_u = st.u;
  out.rec.grad_point = st.u;
  out.rec.pre_proj = st.u - cfg.step_alpha * o.grad_f_y(x, st.u);
  out.rec.mask = project_box_vjp_mask(out.rec.pre_proj, o.y_set());
  out.next.y = project_box(out.rec.pre_proj, o.y_set());
  out.next.u = (1.0 + gamma) * out.next.y - gamma * st.y;
  return out;
}

struct NesterovAdjoint {
  Vector p_y, p_u;
};

struct NesterovVjp {
  NesterovAdjoint prev;
  Vector g_x;
};

inline NesterovVjp nesterov_vjp(const ProblemOracle& o, const Vector& x, const StepRecord& rec,
                                const NesterovAdjoint& adj, const SchemeConfig& cfg) {
  const double gamma = (nesterov_t(rec.k) - 1.0) / nesterov_t(rec.k + 1);
  const Vector s = adj.p_y + (1.0 + gamma) * adj.p_u;  // adjoint on y_{k+1}
  const Vector q = rec.mask.cwiseProduct(s);
  NesterovVjp out;
  out.prev.p_u = q - cfg.step_alpha * o.hvp_f_yy(x, rec.aux_u, q);
  out.prev.p_y = -gamma * adj.p_u;
  out.g_x = -cfg.step_alpha * o.cross_f_xy(x, rec.aux_u, q);
  return out;
}

// ---------------------------------------------------------------------------
// Two-sequence accelerated dynamics, u_0 = v_0 = z:
//   y_{k+1} = (1 - alpha_k) u_k + alpha_k v_k,       alpha_k = 2/(k+1)
//   u_{k+1} = Proj_Y(y_{k+1} - beta grad),           beta = 1/(2 L_f)
//   v_{k+1} = Proj_Y(v_k - lambda_k grad),           lambda_k = k beta / 2
// with grad = grad_f_y(x, y_{k+1}). The reported state is y_{k+1}.

struct AgdState {
  Vector u, v;
};

struct AgdForward {
  Vector y_next;
  AgdState next;
  StepRecord rec;
};

inline AgdForward agd_forward(const ProblemOracle& o, const Vector& x, const AgdState& st,
                              int k, const SchemeConfig& cfg) {
  const double lf = cfg.agd_lf(o);
  if (!(lf > 0.0)) throw std::invalid_argument("agd_forward: L_f must be > 0");
  const double ak = agd_alpha_k(k);
  const double beta = 1.0 / (2.0 * lf);
  const double lam = agd_lambda_k(k, beta);
  AgdForward out;
  out.rec.k = k;
  out.rec.aux_u = st.u;
  out.rec.aux_v = st.v;
  out.y_next = (1.0 - ak) * st.u + ak * st.v;
  out.rec.grad_point = out.y_next;
  const Vector g = o.grad_f_y(x, out.y_next);
  out.rec.pre_proj = out.y_next - beta * g;
  out.rec.mask = project_box_vjp_mask(out.rec.pre_proj, o.y_set());
  out.next.u = project_box(out.rec.pre_proj, o.y_set());
  out.rec.pre_proj_v = st.v - lam * g;
  out.rec.mask_v = project_box_vjp_mask(out.rec.pre_proj_v, o.y_set());
  out.next.v = project_box(out.rec.pre_proj_v, o.y_set());
  return out;
}

struct AgdAdjoint {
  Vector p_y, p_u, p_v;
};

struct AgdVjp {
  AgdAdjoint prev;
  Vector g_x;
};

inline AgdVjp agd_vjp(const ProblemOracle& o, const Vector& x, const StepRecord& rec,
                      const AgdAdjoint& adj, const SchemeConfig& cfg) {
  const double lf = cfg.agd_lf(o);
  const double ak = agd_alpha_k(rec.k);
  const double beta = 1.0 / (2.0 * lf);
  const double lam = agd_lambda_k(rec.k, beta);
  const Vector q_u = rec.mask.cwiseProduct(adj.p_u);
  const Vector q_v = rec.mask_v.cwiseProduct(adj.p_v);
  const Vector a_g = -beta * q_u - lam * q_v;  // adjoint on the shared gradient
  const Vector t_y = adj.p_y + q_u + o.hvp_f_yy(x, rec.grad_point, a_g);
  AgdVjp out;
  out.prev.p_u = (1.0 - ak) * t_y;
  out.prev.p_v = ak * t_y + q_v;
  out.prev.p_y = Vector::Zero(t_y.size());
  out.g_x = o.cross_f_xy(x, rec.grad_point, a_g);
  return out;
}

// Step-size sanity against the oracle's smoothness estimates. Violations are
// reported, not rejected: the estimates are regional bounds.
inline std::vector<std::string> scheme_warnings(const SchemeConfig& cfg, const ProblemOracle& o) {
  std::vector<std::string> w;
  const double lf = o.lipschitz_f(), lF = o.lipschitz_F();
  auto num = [](double v) { return std::to_string(v); };
  switch (cfg.kind) {
    case SchemeKind::PG:
    case SchemeKind::Nesterov:
      if (lf > 0.0 && cfg.step_alpha >= 1.0 / lf)
        w.push_back(std::string(to_string(cfg.kind)) + " step_alpha " + num(cfg.step_alpha) +
                    " >= 1/L_f = " + num(1.0 / lf));
      break;
    case SchemeKind::BDA:
      if (lf > 0.0 && cfg.s_l >= 1.0 / lf)
        w.push_back("BDA s_l " + num(cfg.s_l) + " >= 1/L_f = " + num(1.0 / lf));
      if (lF > 0.0 && cfg.s_u >= 1.0 / lF)
        w.push_back("BDA s_u " + num(cfg.s_u) + " >= 1/L_F = " + num(1.0 / lF));
      if (!(cfg.mu > 0.0 && cfg.mu < 1.0))
        w.push_back("BDA mu " + num(cfg.mu) + " outside (0,1)");
      if (cfg.bda_beta > 1.0)
        w.push_back("BDA beta " + num(cfg.bda_beta) + " > 1");
      break;
    case SchemeKind::AGD:
      if (cfg.lf_override && !(cfg.agd_lf(o) > 0.0))
        w.push_back("AGD L_f override not positive");
      break;
  }
  return w;
}

}  // namespace bilevel
