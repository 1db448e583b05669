#pragma once

#include "bilevel/bilevel.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

namespace testsupport {

using bilevel::BoxSet;
using bilevel::Index;
using bilevel::Vector;

// Minimal analytic pair with identical dimensions upstairs and downstairs:
//   f = 0.5 ||y - x||^2, F = 0.5 ||y||^2, y*(x) = x, so the bilevel optimum
// sits at the origin. Every derivative is closed-form.
class QuadraticToy final : public bilevel::ProblemOracle {
 public:
  QuadraticToy(Index n, BoxSet ybox)
      : ProblemOracle("quadratic_toy", BoxSet::unbounded(n), ybox, ybox, 1.0, 1.0) {}
  explicit QuadraticToy(Index n) : QuadraticToy(n, BoxSet::unbounded(n)) {}

 protected:
  double F_impl(const Vector&, const Vector& y) const override { return 0.5 * y.squaredNorm(); }
  Vector grad_F_x_impl(const Vector& x, const Vector&) const override {
    return Vector::Zero(x.size());
  }
  Vector grad_F_y_impl(const Vector&, const Vector& y) const override { return y; }
  double f_impl(const Vector& x, const Vector& y) const override {
    return 0.5 * (y - x).squaredNorm();
  }
  Vector grad_f_y_impl(const Vector& x, const Vector& y) const override { return y - x; }
  Vector hvp_f_yy_impl(const Vector&, const Vector&, const Vector& p) const override { return p; }
  Vector cross_f_xy_impl(const Vector&, const Vector&, const Vector& p) const override {
    return -p;
  }
  Vector hvp_F_yy_impl(const Vector&, const Vector&, const Vector& p) const override { return p; }
  Vector cross_F_xy_impl(const Vector& x, const Vector&, const Vector&) const override {
    return Vector::Zero(x.size());
  }
};

inline Vector vec(std::initializer_list<double> vals) {
  Vector v(static_cast<Index>(vals.size()));
  Index i = 0;
  for (double d : vals) v[i++] = d;
  return v;
}

// Uniform draw inside a box; unbounded coordinates use [-halfwidth, halfwidth].
inline Vector sample_in_box(const BoxSet& box, std::mt19937_64& rng, double halfwidth = 2.0,
                            double margin = 0.0) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Vector v(box.dim());
  for (Index i = 0; i < box.dim(); ++i) {
    double lo = box.lower[i], hi = box.upper[i];
    if (!std::isfinite(lo)) lo = -halfwidth;
    if (!std::isfinite(hi)) hi = halfwidth;
    lo += margin;
    hi -= margin;
    if (!(lo < hi)) {
      lo = box.lower[i];
      hi = box.upper[i];
    }
    v[i] = lo + (hi - lo) * u01(rng);
  }
  return v;
}

// Like sample_in_box but the window also caps bounded coordinates. Derivative
// agreement checks draw from here: fixture step sizes come from the oracles'
// regional smoothness estimates, which hold near the origin, and quartic
// objectives diverge under those steps when started box-wide.
inline Vector sample_windowed(const BoxSet& box, std::mt19937_64& rng, double halfwidth,
                              double margin = 0.0) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Vector v(box.dim());
  for (Index i = 0; i < box.dim(); ++i) {
    double lo = std::max(box.lower[i], -halfwidth);
    double hi = std::min(box.upper[i], halfwidth);
    lo += margin;
    hi -= margin;
    if (!(lo < hi)) {
      lo = box.lower[i];
      hi = box.upper[i];
    }
    v[i] = lo + (hi - lo) * u01(rng);
  }
  return v;
}

inline double rel_err(const Vector& got, const Vector& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace testsupport
