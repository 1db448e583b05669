#pragma once

#include "bilevel/problem.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace bilevel {

struct ProblemWithSolution {
  std::shared_ptr<const ProblemOracle> oracle;
  KnownSolution solution;
};

namespace detail {

// min_x ||x - [y]2||^4 + ||[y]1 - e||^4   s.t.  y in argmin 1/2 ||[y]1||^2 - x^T [y]1
// y = ([y]1, [y]2) flat, blocks of size n. LL solution set is {(x, anything)},
// so the UL has to steer [y]2 through the trajectory: convex but not strongly
// convex in y.
class ConvexExample final : public ProblemOracle {
 public:
  explicit ConvexExample(int n)
      : ProblemOracle("convex", BoxSet::uniform(n, -10.0, 10.0), BoxSet::unbounded(2 * n),
                      BoxSet::unbounded(2 * n),
                      /*lf=*/1.0,
                      // quartic curvature bound within unit distance of the optimum
                      /*lF=*/12.0 * n),
        n_(n) {}

 protected:
  double F_impl(const Vector& x, const Vector& y) const override {
    const Vector u = y.head(n_) - Vector::Ones(n_);
    const Vector v = x - y.tail(n_);
    const double su = u.squaredNorm(), sv = v.squaredNorm();
    return sv * sv + su * su;
  }
  Vector grad_F_x_impl(const Vector& x, const Vector& y) const override {
    const Vector v = x - y.tail(n_);
    return 4.0 * v.squaredNorm() * v;
  }
  Vector grad_F_y_impl(const Vector& x, const Vector& y) const override {
    const Vector u = y.head(n_) - Vector::Ones(n_);
    const Vector v = x - y.tail(n_);
    Vector g(2 * n_);
    g.head(n_) = 4.0 * u.squaredNorm() * u;
    g.tail(n_) = -4.0 * v.squaredNorm() * v;
    return g;
  }
  double f_impl(const Vector& x, const Vector& y) const override {
    return 0.5 * y.head(n_).squaredNorm() - x.dot(y.head(n_));
  }
  Vector grad_f_y_impl(const Vector& x, const Vector& y) const override {
    Vector g = Vector::Zero(2 * n_);
    g.head(n_) = y.head(n_) - x;
    return g;
  }
  Vector hvp_f_yy_impl(const Vector&, const Vector&, const Vector& p) const override {
    Vector g = Vector::Zero(2 * n_);
    g.head(n_) = p.head(n_);
    return g;
  }
  Vector cross_f_xy_impl(const Vector&, const Vector&, const Vector& p) const override {
    return -p.head(n_);
  }
  Vector hvp_F_yy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    const Vector u = y.head(n_) - Vector::Ones(n_);
    const Vector v = x - y.tail(n_);
    Vector g(2 * n_);
    g.head(n_) = 8.0 * u.dot(p.head(n_)) * u + 4.0 * u.squaredNorm() * p.head(n_);
    g.tail(n_) = 8.0 * v.dot(p.tail(n_)) * v + 4.0 * v.squaredNorm() * p.tail(n_);
    return g;
  }
  Vector cross_F_xy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    const Vector v = x - y.tail(n_);
    return -8.0 * v.dot(p.tail(n_)) * v - 4.0 * v.squaredNorm() * p.tail(n_);
  }

 private:
  int n_;
};

// min_x -e^T x + ||x - [y]2||^4 + ||[y]1 - e||^4   s.t.  y in argmin ||[y]1 + [y]2 - x||^4
// Unique BLO solution x* = e (UL box face), y* = (e/2, e/2).
class LlsExample final : public ProblemOracle {
 public:
  explicit LlsExample(int n)
      : ProblemOracle("lls", BoxSet::uniform(n, -1.0, 1.0), BoxSet::unbounded(2 * n),
                      BoxSet::unbounded(2 * n),
                      // y-Hessian of ||w||^4 over both blocks is 24||w||^2 with
                      // |w_i| <= 4 over the box and the benchmark inits
                      /*lf=*/384.0 * n,
                      /*lF=*/12.0 * n),
        n_(n) {}

 protected:
  double F_impl(const Vector& x, const Vector& y) const override {
    const Vector u = y.head(n_) - Vector::Ones(n_);
    const Vector v = x - y.tail(n_);
    const double su = u.squaredNorm(), sv = v.squaredNorm();
    return -x.sum() + sv * sv + su * su;
  }
  Vector grad_F_x_impl(const Vector& x, const Vector& y) const override {
    const Vector v = x - y.tail(n_);
    return Vector::Constant(n_, -1.0) + 4.0 * v.squaredNorm() * v;
  }
  Vector grad_F_y_impl(const Vector& x, const Vector& y) const override {
    const Vector u = y.head(n_) - Vector::Ones(n_);
    const Vector v = x - y.tail(n_);
    Vector g(2 * n_);
    g.head(n_) = 4.0 * u.squaredNorm() * u;
    g.tail(n_) = -4.0 * v.squaredNorm() * v;
    return g;
  }
  double f_impl(const Vector& x, const Vector& y) const override {
    const double sw = (y.head(n_) + y.tail(n_) - x).squaredNorm();
    return sw * sw;
  }
  Vector grad_f_y_impl(const Vector& x, const Vector& y) const override {
    const Vector w = y.head(n_) + y.tail(n_) - x;
    const Vector gw = 4.0 * w.squaredNorm() * w;
    Vector g(2 * n_);
    g.head(n_) = gw;
    g.tail(n_) = gw;
    return g;
  }
  Vector hvp_f_yy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    const Vector w = y.head(n_) + y.tail(n_) - x;
    const Vector q = p.head(n_) + p.tail(n_);
    const Vector hq = 8.0 * w.dot(q) * w + 4.0 * w.squaredNorm() * q;
    Vector g(2 * n_);
    g.head(n_) = hq;
    g.tail(n_) = hq;
    return g;
  }
  Vector cross_f_xy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    const Vector w = y.head(n_) + y.tail(n_) - x;
    const Vector q = p.head(n_) + p.tail(n_);
    return -(8.0 * w.dot(q) * w + 4.0 * w.squaredNorm() * q);
  }
  Vector hvp_F_yy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    const Vector u = y.head(n_) - Vector::Ones(n_);
    const Vector v = x - y.tail(n_);
    Vector g(2 * n_);
    g.head(n_) = 8.0 * u.dot(p.head(n_)) * u + 4.0 * u.squaredNorm() * p.head(n_);
    g.tail(n_) = 8.0 * v.dot(p.tail(n_)) * v + 4.0 * v.squaredNorm() * p.tail(n_);
    return g;
  }
  Vector cross_F_xy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    const Vector v = x - y.tail(n_);
    return -8.0 * v.dot(p.tail(n_)) * v - 4.0 * v.squaredNorm() * p.tail(n_);
  }

 private:
  int n_;
};

// min_x (x-a)^2 + ||y - a - c||^2   s.t.  y in argmin_{y in [-10,10]^n} sum_i sin(x + y_i - c_i)
// x scalar. The LL problem has countably many disconnected minimizer branches,
// one per valley of sin; the closed-form optimum sits on the branch whose
// constant C = -pi/2 + 2k*pi is closest to 2a.
class NonconvexSinExample final : public ProblemOracle {
 public:
  NonconvexSinExample(int n, double a, Vector c)
      : ProblemOracle("nonconvex_sin", BoxSet::unbounded(1), BoxSet::uniform(n, -10.0, 10.0),
                      BoxSet::uniform(n, -10.0, 10.0), /*lf=*/1.0, /*lF=*/2.0),
        n_(n),
        a_(a),
        c_(std::move(c)) {}

  double a() const { return a_; }
  const Vector& c() const { return c_; }

 protected:
  double F_impl(const Vector& x, const Vector& y) const override {
    double s = (x[0] - a_) * (x[0] - a_);
    for (Index i = 0; i < n_; ++i) {
      const double d = y[i] - a_ - c_[i];
      s += d * d;
    }
    return s;
  }
  Vector grad_F_x_impl(const Vector& x, const Vector&) const override {
    Vector g(1);
    g[0] = 2.0 * (x[0] - a_);
    return g;
  }
  Vector grad_F_y_impl(const Vector&, const Vector& y) const override {
    return 2.0 * (y - Vector::Constant(n_, a_) - c_);
  }
  double f_impl(const Vector& x, const Vector& y) const override {
    double s = 0.0;
    for (Index i = 0; i < n_; ++i) s += std::sin(x[0] + y[i] - c_[i]);
    return s;
  }
  Vector grad_f_y_impl(const Vector& x, const Vector& y) const override {
    Vector g(n_);
    for (Index i = 0; i < n_; ++i) g[i] = std::cos(x[0] + y[i] - c_[i]);
    return g;
  }
  Vector hvp_f_yy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    Vector g(n_);
    for (Index i = 0; i < n_; ++i) g[i] = -std::sin(x[0] + y[i] - c_[i]) * p[i];
    return g;
  }
  Vector cross_f_xy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    double s = 0.0;
    for (Index i = 0; i < n_; ++i) s += -std::sin(x[0] + y[i] - c_[i]) * p[i];
    Vector g(1);
    g[0] = s;
    return g;
  }
  Vector hvp_F_yy_impl(const Vector&, const Vector&, const Vector& p) const override {
    return 2.0 * p;
  }
  Vector cross_F_xy_impl(const Vector&, const Vector&, const Vector&) const override {
    return Vector::Zero(1);
  }

 private:
  Index n_;
  double a_;
  Vector c_;
};

}  // namespace detail

inline ProblemWithSolution convex_example(int n) {
  if (n < 1) throw std::invalid_argument("convex_example: n must be >= 1");
  ProblemWithSolution out;
  out.oracle = std::make_shared<detail::ConvexExample>(n);
  out.solution.x_star = Vector::Ones(n);
  out.solution.y_star = Vector::Ones(2 * n);
  out.solution.F_star = 0.0;
  return out;
}

inline ProblemWithSolution lls_example(int n) {
  if (n < 1) throw std::invalid_argument("lls_example: n must be >= 1");
  ProblemWithSolution out;
  out.oracle = std::make_shared<detail::LlsExample>(n);
  out.solution.x_star = Vector::Ones(n);
  out.solution.y_star = Vector::Constant(2 * n, 0.5);
  // -e^T e + 2 ||e/2||^4: the quartic terms do not vanish at the optimum.
  out.solution.F_star = -static_cast<double>(n) + n * n / 8.0;
  return out;
}

// Valley constant C = -pi/2 + 2k*pi nearest to 2a; ties toward smaller k.
inline double solve_sin_branch_constant(double a) {
  if (!std::isfinite(a)) throw std::invalid_argument("solve_sin_branch_constant: a must be finite");
  constexpr double pi = std::numbers::pi;
  const double t = (2.0 * a + pi / 2.0) / (2.0 * pi);
  const double k = std::ceil(t - 0.5);
  return -pi / 2.0 + 2.0 * pi * k;
}

inline ProblemWithSolution nonconvex_sin_example(int n, double a, const Vector& c) {
  if (n < 1) throw std::invalid_argument("nonconvex_sin_example: n must be >= 1");
  require_same_dim(c.size(), n, "nonconvex_sin_example: c");
  require_finite(c, "nonconvex_sin_example: c");
  if (!std::isfinite(a)) throw std::invalid_argument("nonconvex_sin_example: a must be finite");
  const double C = solve_sin_branch_constant(a);
  ProblemWithSolution out;
  out.solution.x_star = Vector::Constant(1, ((1.0 - n) * a + n * C) / (1.0 + n));
  out.solution.y_star = Vector::Constant(n, C) + c - Vector::Constant(n, out.solution.x_star[0]);
  const double d = C - 2.0 * a;
  out.solution.F_star = n * d * d / (1.0 + n);
  auto oracle = std::make_shared<detail::NonconvexSinExample>(n, a, c);
  if (!oracle->y_set().contains(out.solution.y_star))
    throw std::invalid_argument("nonconvex_sin_example: closed-form optimum falls outside Y");
  out.oracle = std::move(oracle);
  return out;
}

inline ProblemWithSolution nonconvex_sin_example(int n, double a, double c_all) {
  return nonconvex_sin_example(n, a, Vector::Constant(std::max(n, 1), c_all));
}

// ---------------------------------------------------------------------------
// Synthetic data hyper-cleaning.
//
// Gaussian blobs, one per class; a corruption fraction of training labels is
// replaced by a uniformly random different class. The LL variable y is a flat
// row-major (classes x (feature_dim+1)) linear classifier with bias column;
// the UL variable x holds one logit weight per training sample:
//
//   f(x,y) = sum_train sigmoid(x_i) * ce_i(y) + ridge ||y||^2
//   F(x,y) = sum_val ce_i(y)
//
// Second-order actions of f and F use central finite differences of the
// analytic first derivatives.

struct HypercleaningParams {
  std::uint64_t seed = 0;
  int n_train = 60;
  int n_val = 40;
  int feature_dim = 5;
  int classes = 3;
  double corruption = 0.5;
  double ridge = 1e-3;  // set 0 to disable the ||y||^2 term
  double center_scale = 3.0;
  double noise_sigma = 1.0;
  std::vector<Vector> centers;  // optional override, size == classes
};

namespace detail {

// Deterministic standard normal stream: explicit Box-Muller over mt19937_64
// raw bits, so datasets are bit-identical across standard libraries.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  std::uint64_t raw() { return rng_(); }

 private:
  double uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace detail

class HypercleaningProblem final : public ProblemOracle {
 public:
  struct Sample {
    Vector u;
    int true_label = 0;
    int observed_label = 0;
  };

  explicit HypercleaningProblem(const HypercleaningParams& params)
      : ProblemOracle("hypercleaning", BoxSet::unbounded(params.n_train),
                      BoxSet::unbounded(static_cast<Index>(params.classes) *
                                        (params.feature_dim + 1)),
                      BoxSet::unbounded(static_cast<Index>(params.classes) *
                                        (params.feature_dim + 1)),
                      /*lf=*/0.0, /*lF=*/0.0),
        params_(validate(params)) {
    generate();
    // softmax cross-entropy curvature per sample is at most 0.5 ||u~||^2
    double lf = 2.0 * params_.ridge, lF = 0.0;
    for (const auto& s : train_) lf += 0.5 * (s.u.squaredNorm() + 1.0);
    for (const auto& s : val_) lF += 0.5 * (s.u.squaredNorm() + 1.0);
    set_lipschitz(lf, lF);
  }

  const std::vector<Sample>& train() const { return train_; }
  const std::vector<Sample>& val() const { return val_; }
  int classes() const { return params_.classes; }
  int feature_dim() const { return params_.feature_dim; }
  double ridge() const { return params_.ridge; }
  const HypercleaningParams& params() const { return params_; }

  // Plain sum of training cross-entropies plus ridge: the uniform-weight
  // objective used by cleaning-free baselines.
  double unweighted_train_loss(const Vector& y) const {
    require_same_dim(y.size(), ll_dim(), "unweighted_train_loss");
    double s = params_.ridge * y.squaredNorm();
    for (const auto& smp : train_) s += sample_ce(y, smp.u, smp.observed_label, nullptr);
    return s;
  }
  Vector unweighted_train_grad(const Vector& y) const {
    require_same_dim(y.size(), ll_dim(), "unweighted_train_grad");
    Vector g = 2.0 * params_.ridge * y;
    for (const auto& smp : train_) sample_ce(y, smp.u, smp.observed_label, &g);
    return g;
  }

  // Fraction of correctly classified samples against true labels.
  double accuracy(const Vector& y, const std::vector<Sample>& set) const {
    require_same_dim(y.size(), ll_dim(), "accuracy");
    if (set.empty()) return 0.0;
    int hits = 0;
    for (const auto& smp : set)
      if (predict(y, smp.u) == smp.true_label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(set.size());
  }
  double val_accuracy(const Vector& y) const { return accuracy(y, val_); }

  int predict(const Vector& y, const Vector& u) const {
    Vector logits = compute_logits(y, u);
    Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }

  // One row per sample: feature_0..feature_{d-1}, true_label, observed_label, split.
  void export_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_csv: cannot open " + path);
    for (int j = 0; j < params_.feature_dim; ++j) out << "feature_" << j << ",";
    out << "true_label,observed_label,split\n";
    char buf[64];
    auto row = [&](const Sample& s, const char* split) {
      for (int j = 0; j < params_.feature_dim; ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", s.u[j]);
        out << buf << ",";
      }
      out << s.true_label << "," << s.observed_label << "," << split << "\n";
    };
    for (const auto& s : train_) row(s, "train");
    for (const auto& s : val_) row(s, "val");
    if (!out) throw std::runtime_error("export_csv: write failed for " + path);
  }

 protected:
  double F_impl(const Vector&, const Vector& y) const override {
    double s = 0.0;
    for (const auto& smp : val_) s += sample_ce(y, smp.u, smp.true_label, nullptr);
    return s;
  }
  Vector grad_F_x_impl(const Vector&, const Vector&) const override {
    return Vector::Zero(ul_dim());
  }
  Vector grad_F_y_impl(const Vector&, const Vector& y) const override {
    Vector g = Vector::Zero(ll_dim());
    for (const auto& smp : val_) sample_ce(y, smp.u, smp.true_label, &g);
    return g;
  }
  double f_impl(const Vector& x, const Vector& y) const override {
    double s = params_.ridge * y.squaredNorm();
    for (std::size_t i = 0; i < train_.size(); ++i)
      s += sigmoid(x[static_cast<Index>(i)]) *
           sample_ce(y, train_[i].u, train_[i].observed_label, nullptr);
    return s;
  }
  Vector grad_f_y_impl(const Vector& x, const Vector& y) const override {
    Vector g = 2.0 * params_.ridge * y;
    for (std::size_t i = 0; i < train_.size(); ++i) {
      const double w = sigmoid(x[static_cast<Index>(i)]);
      if (w == 0.0) continue;
      Vector gi = Vector::Zero(ll_dim());
      sample_ce(y, train_[i].u, train_[i].observed_label, &gi);
      g += w * gi;
    }
    return g;
  }
  Vector hvp_f_yy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    return finite_diff_jvp([&](const Vector& yy) { return grad_f_y_impl(x, yy); }, y, p);
  }
  // grad_f_y depends on x only through the per-sample sigmoid weights, so the
  // central difference of grad_f_y along x_i reduces to the centered sigmoid
  // difference times the x-independent per-sample gradient dotted with p.
  Vector cross_f_xy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    Vector out(ul_dim());
    const double h = kDefaultFdStep;
    for (std::size_t i = 0; i < train_.size(); ++i) {
      const Index ii = static_cast<Index>(i);
      const double dsig = (sigmoid(x[ii] + h) - sigmoid(x[ii] - h)) / (2.0 * h);
      out[ii] = dsig * ce_grad_dot(y, train_[i].u, train_[i].observed_label, p);
    }
    return out;
  }
  Vector hvp_F_yy_impl(const Vector& x, const Vector& y, const Vector& p) const override {
    return finite_diff_jvp([&](const Vector& yy) { return grad_F_y_impl(x, yy); }, y, p);
  }
  Vector cross_F_xy_impl(const Vector&, const Vector&, const Vector&) const override {
    return Vector::Zero(ul_dim());
  }

 private:
  static const HypercleaningParams& validate(const HypercleaningParams& p) {
    if (p.n_train < 1) throw std::invalid_argument("hypercleaning: n_train must be >= 1");
    if (p.n_val < 1) throw std::invalid_argument("hypercleaning: n_val must be >= 1");
    if (p.feature_dim < 1) throw std::invalid_argument("hypercleaning: feature_dim must be >= 1");
    if (p.classes < 2) throw std::invalid_argument("hypercleaning: classes must be >= 2");
    if (!(p.corruption >= 0.0 && p.corruption <= 1.0))
      throw std::invalid_argument("hypercleaning: corruption must be in [0,1]");
    if (!(p.ridge >= 0.0)) throw std::invalid_argument("hypercleaning: ridge must be >= 0");
    if (!(p.noise_sigma > 0.0)) throw std::invalid_argument("hypercleaning: noise_sigma must be > 0");
    if (!p.centers.empty() && static_cast<int>(p.centers.size()) != p.classes)
      throw std::invalid_argument("hypercleaning: centers size must equal classes");
    return p;
  }

  void generate() {
    detail::GaussianStream g(params_.seed);
    const int d = params_.feature_dim;
    std::vector<Vector> centers = params_.centers;
    if (centers.empty()) {
      centers.resize(params_.classes);
      for (auto& c : centers) {
        c.resize(d);
        for (int j = 0; j < d; ++j) c[j] = params_.center_scale * g.normal();
      }
    } else {
      for (const auto& c : centers) require_same_dim(c.size(), d, "hypercleaning: center");
    }
    for (int a = 0; a < params_.classes; ++a)
      for (int b = a + 1; b < params_.classes; ++b)
        if ((centers[a] - centers[b]).norm() < 1e-9)
          throw std::invalid_argument("hypercleaning: degenerate blob centers " +
                                      std::to_string(a) + " and " + std::to_string(b));

    auto draw = [&](int count, std::vector<Sample>& dst) {
      dst.resize(count);
      for (int i = 0; i < count; ++i) {
        const int cls = i % params_.classes;
        Sample& s = dst[i];
        s.true_label = s.observed_label = cls;
        s.u.resize(d);
        for (int j = 0; j < d; ++j) s.u[j] = centers[cls][j] + params_.noise_sigma * g.normal();
      }
    };
    draw(params_.n_train, train_);
    draw(params_.n_val, val_);

    // Fisher-Yates over train indices, corrupt the leading fraction.
    const int m = params_.n_train;
    std::vector<int> idx(m);
    for (int i = 0; i < m; ++i) idx[i] = i;
    for (int i = m - 1; i > 0; --i) {
      const int j = static_cast<int>(g.raw() % static_cast<std::uint64_t>(i + 1));
      std::swap(idx[i], idx[j]);
    }
    const int n_corrupt =
        static_cast<int>(std::llround(params_.corruption * static_cast<double>(m)));
    for (int i = 0; i < n_corrupt && i < m; ++i) {
      Sample& s = train_[idx[i]];
      const int shift =
          1 + static_cast<int>(g.raw() % static_cast<std::uint64_t>(params_.classes - 1));
      s.observed_label = (s.true_label + shift) % params_.classes;
    }
  }

  static double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  }

  Vector compute_logits(const Vector& y, const Vector& u) const {
    const int cls = params_.classes, d = params_.feature_dim;
    Vector logits(cls);
    for (int k = 0; k < cls; ++k) {
      const auto row = y.segment(static_cast<Index>(k) * (d + 1), d);
      logits[k] = row.dot(u) + y[static_cast<Index>(k) * (d + 1) + d];
    }
    return logits;
  }

  // Cross-entropy of one sample; if grad_out is set, adds d(ce)/dy into it.
  double sample_ce(const Vector& y, const Vector& u, int label, Vector* grad_out) const {
    const int cls = params_.classes, d = params_.feature_dim;
    Vector logits = compute_logits(y, u);
    const double mx = logits.maxCoeff();
    double z = 0.0;
    for (int k = 0; k < cls; ++k) z += std::exp(logits[k] - mx);
    const double lse = mx + std::log(z);
    if (grad_out) {
      for (int k = 0; k < cls; ++k) {
        const double coef = std::exp(logits[k] - mx) / z - (k == label ? 1.0 : 0.0);
        grad_out->segment(static_cast<Index>(k) * (d + 1), d) += coef * u;
        (*grad_out)[static_cast<Index>(k) * (d + 1) + d] += coef;
      }
    }
    return lse - logits[label];
  }

  // <d(ce)/dy, p> for one sample without materialising the gradient.
  double ce_grad_dot(const Vector& y, const Vector& u, int label, const Vector& p) const {
    const int cls = params_.classes, d = params_.feature_dim;
    Vector logits = compute_logits(y, u);
    const double mx = logits.maxCoeff();
    double z = 0.0;
    for (int k = 0; k < cls; ++k) z += std::exp(logits[k] - mx);
    double dot = 0.0;
    for (int k = 0; k < cls; ++k) {
      const double coef = std::exp(logits[k] - mx) / z - (k == label ? 1.0 : 0.0);
      dot += coef * (p.segment(static_cast<Index>(k) * (d + 1), d).dot(u) +
                     p[static_cast<Index>(k) * (d + 1) + d]);
    }
    return dot;
  }

  HypercleaningParams params_;
  std::vector<Sample> train_, val_;
};

inline std::shared_ptr<const HypercleaningProblem> synthetic_hypercleaning(
    const HypercleaningParams& params) {
  return std::make_shared<HypercleaningProblem>(params);
}

}  // namespace bilevel
