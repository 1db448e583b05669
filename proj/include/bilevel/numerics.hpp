#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace bilevel {

using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Raised when an evaluation produces NaN/Inf or an iteration diverges.
// where() carries the offending coordinate or step index when known, -1 otherwise.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, long where = -1)
      : std::runtime_error(what), where_(where) {}
  long where() const noexcept { return where_; }

 private:
  long where_;
};

inline void require_finite(const Vector& v, const char* context) {
  if (v.allFinite()) return;
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw NumericError(std::string(context) + ": non-finite entry at " + std::to_string(i),
                         static_cast<long>(i));
  }
  throw NumericError(std::string(context) + ": non-finite entry");
}

inline void require_finite(double v, const char* context) {
  if (!std::isfinite(v)) throw NumericError(std::string(context) + ": non-finite value");
}

inline void require_same_dim(Index got, Index want, const char* context) {
  if (got != want)
    throw std::invalid_argument(std::string(context) + ": dimension mismatch (got " +
                                std::to_string(got) + ", want " + std::to_string(want) + ")");
}

// Axis-aligned box; +-infinity marks an unconstrained coordinate.
// Invariant: lower[i] <= upper[i] for all i.
struct BoxSet {
  Vector lower;
  Vector upper;

  BoxSet() = default;
  BoxSet(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    require_same_dim(upper.size(), lower.size(), "BoxSet");
    for (Index i = 0; i < lower.size(); ++i) {
      if (!(lower[i] <= upper[i]))
        throw std::invalid_argument("BoxSet: lower > upper at coordinate " + std::to_string(i));
    }
  }

  static BoxSet uniform(Index n, double lo, double hi) {
    return BoxSet(Vector::Constant(n, lo), Vector::Constant(n, hi));
  }
  static BoxSet unbounded(Index n) {
    const double inf = std::numeric_limits<double>::infinity();
    return BoxSet(Vector::Constant(n, -inf), Vector::Constant(n, inf));
  }

  Index dim() const { return lower.size(); }

  bool contains(const Vector& v, double tol = 0.0) const {
    if (v.size() != dim()) return false;
    for (Index i = 0; i < v.size(); ++i) {
      if (v[i] < lower[i] - tol || v[i] > upper[i] + tol) return false;
    }
    return true;
  }

  bool bounded() const { return lower.allFinite() && upper.allFinite(); }
};

inline Vector project_box(const Vector& v, const BoxSet& box) {
  require_same_dim(v.size(), box.dim(), "project_box");
  return v.cwiseMax(box.lower).cwiseMin(box.upper);
}

// Derivative mask of project_box at the pre-projection point: 1 where the
// coordinate is strictly interior, 0 where clipped. A coordinate exactly on a
// face counts as clipped.
inline Vector project_box_vjp_mask(const Vector& v_pre, const BoxSet& box) {
  require_same_dim(v_pre.size(), box.dim(), "project_box_vjp_mask");
  Vector m(v_pre.size());
  for (Index i = 0; i < v_pre.size(); ++i)
    m[i] = (v_pre[i] > box.lower[i] && v_pre[i] < box.upper[i]) ? 1.0 : 0.0;
  return m;
}

inline constexpr double kDefaultFdStep = 1e-5;

// Central-difference gradient of a scalar function, one coordinate at a time.
inline Vector finite_diff_gradient(const std::function<double(const Vector&)>& fn,
                                   const Vector& at, double h = kDefaultFdStep) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  Vector g(at.size());
  Vector p = at;
  for (Index i = 0; i < at.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double fp = fn(p);
    p[i] = saved - h;
    const double fm = fn(p);
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_gradient: non-finite value at coordinate " +
                             std::to_string(i),
                         static_cast<long>(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Central difference of a vector-valued map along direction dir,
// approximately (d/dt) g(at + t dir) at t = 0. The step is scaled by |dir|.
inline Vector finite_diff_jvp(const std::function<Vector(const Vector&)>& g, const Vector& at,
                              const Vector& dir, double h = kDefaultFdStep) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_jvp: h must be positive");
  require_same_dim(dir.size(), at.size(), "finite_diff_jvp");
  const double scale = dir.norm();
  if (scale == 0.0) return Vector::Zero(at.size());
  const double t = h / scale;
  Vector gp = g(at + t * dir);
  Vector gm = g(at - t * dir);
  require_finite(gp, "finite_diff_jvp");
  require_finite(gm, "finite_diff_jvp");
  return (gp - gm) / (2.0 * t);
}

}  // namespace bilevel
