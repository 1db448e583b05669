#pragma once

#include "bilevel/numerics.hpp"

#include <memory>
#include <string>
#include <utility>

namespace bilevel {

// Evaluation contract for one bilevel problem instance
//
//   min_{x in X}  F(x, y)   subject to   y solving  min_{y in Y} f(x, y).
//
// Upper-level objective F and lower-level objective f expose values, first
// derivatives, and the second-order actions the reverse pass needs:
//   hvp_f_yy(x,y,p)  = (d2f/dy2) p
//   cross_f_xy(x,y,p) = d/dx <grad_f_y(x,y), p>
// and the same pair for F (used by aggregated dynamics only).
//
// Public entry points validate dimensions and finiteness on both sides;
// subclasses implement the raw math in the *_impl hooks.
class ProblemOracle {
 public:
  virtual ~ProblemOracle() = default;

  Index ul_dim() const { return x_set_.dim(); }
  Index ll_dim() const { return y_set_.dim(); }
  const BoxSet& x_set() const { return x_set_; }
  const BoxSet& y_set() const { return y_set_; }
  const BoxSet& z_set() const { return z_set_; }
  const std::string& name() const { return name_; }

  double eval_F(const Vector& x, const Vector& y) const {
    check_xy(x, y, "eval_F");
    double v = F_impl(x, y);
    require_finite(v, "eval_F");
    return v;
  }
  Vector grad_F_x(const Vector& x, const Vector& y) const {
    check_xy(x, y, "grad_F_x");
    Vector g = grad_F_x_impl(x, y);
    require_finite(g, "grad_F_x");
    return g;
  }
  Vector grad_F_y(const Vector& x, const Vector& y) const {
    check_xy(x, y, "grad_F_y");
    Vector g = grad_F_y_impl(x, y);
    require_finite(g, "grad_F_y");
    return g;
  }
  double eval_f(const Vector& x, const Vector& y) const {
    check_xy(x, y, "eval_f");
    double v = f_impl(x, y);
    require_finite(v, "eval_f");
    return v;
  }
  Vector grad_f_y(const Vector& x, const Vector& y) const {
    check_xy(x, y, "grad_f_y");
    Vector g = grad_f_y_impl(x, y);
    require_finite(g, "grad_f_y");
    return g;
  }
  Vector hvp_f_yy(const Vector& x, const Vector& y, const Vector& p) const {
    check_xyp(x, y, p, "hvp_f_yy");
    Vector g = hvp_f_yy_impl(x, y, p);
    require_finite(g, "hvp_f_yy");
    return g;
  }
  Vector cross_f_xy(const Vector& x, const Vector& y, const Vector& p) const {
    check_xyp(x, y, p, "cross_f_xy");
    Vector g = cross_f_xy_impl(x, y, p);
    require_finite(g, "cross_f_xy");
    return g;
  }
  Vector hvp_F_yy(const Vector& x, const Vector& y, const Vector& p) const {
    check_xyp(x, y, p, "hvp_F_yy");
    Vector g = hvp_F_yy_impl(x, y, p);
    require_finite(g, "hvp_F_yy");
    return g;
  }
  Vector cross_F_xy(const Vector& x, const Vector& y, const Vector& p) const {
    check_xyp(x, y, p, "cross_F_xy");
    Vector g = cross_F_xy_impl(x, y, p);
    require_finite(g, "cross_F_xy");
    return g;
  }

  // Smoothness estimates used for step-size sanity warnings and the AGD
  // curvature schedule. Regional bounds where no global constant exists.
  double lipschitz_f() const noexcept { return lipschitz_f_; }
  double lipschitz_F() const noexcept { return lipschitz_F_; }

 protected:
  ProblemOracle(std::string name, BoxSet X, BoxSet Y, BoxSet Z, double lf, double lF)
      : name_(std::move(name)),
        x_set_(std::move(X)),
        y_set_(std::move(Y)),
        z_set_(std::move(Z)),
        lipschitz_f_(lf),
        lipschitz_F_(lF) {
    require_same_dim(z_set_.dim(), y_set_.dim(), "ProblemOracle: Z vs Y");
  }

  virtual double F_impl(const Vector& x, const Vector& y) const = 0;
  virtual Vector grad_F_x_impl(const Vector& x, const Vector& y) const = 0;
  virtual Vector grad_F_y_impl(const Vector& x, const Vector& y) const = 0;
  virtual double f_impl(const Vector& x, const Vector& y) const = 0;
  virtual Vector grad_f_y_impl(const Vector& x, const Vector& y) const = 0;
  virtual Vector hvp_f_yy_impl(const Vector& x, const Vector& y, const Vector& p) const = 0;
  virtual Vector cross_f_xy_impl(const Vector& x, const Vector& y, const Vector& p) const = 0;
  virtual Vector hvp_F_yy_impl(const Vector& x, const Vector& y, const Vector& p) const = 0;
  virtual Vector cross_F_xy_impl(const Vector& x, const Vector& y, const Vector& p) const = 0;

  // For oracles whose smoothness estimates depend on generated data.
  void set_lipschitz(double lf, double lF) {
    lipschitz_f_ = lf;
    lipschitz_F_ = lF;
  }

 private:
  void check_xy(const Vector& x, const Vector& y, const char* op) const {
    require_same_dim(x.size(), ul_dim(), op);
    require_same_dim(y.size(), ll_dim(), op);
    require_finite(x, op);
    require_finite(y, op);
  }
  void check_xyp(const Vector& x, const Vector& y, const Vector& p, const char* op) const {
    check_xy(x, y, op);
    require_same_dim(p.size(), ll_dim(), op);
    require_finite(p, op);
  }

  std::string name_;
  BoxSet x_set_, y_set_, z_set_;
  double lipschitz_f_, lipschitz_F_;
};

// Closed-form optimum of a benchmark instance, for error curves.
struct KnownSolution {
  Vector x_star;
  Vector y_star;
  double F_star = 0.0;
};

}  // namespace bilevel
