#pragma once

#include "bilevel/solver.hpp"
#include "bilevel/version.hpp"

#include "json.hpp"

#include <atomic>
#include <filesystem>
#include <random>
#include <thread>
#include <variant>

namespace bilevel {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Initialization entries accept a scalar (broadcast to the problem dimension
// at run time) or an explicit coordinate list.
using InitValue = std::variant<double, std::vector<double>>;

inline Vector resolve_init(const InitValue& v, Index dim, const char* context) {
  if (std::holds_alternative<double>(v)) return Vector::Constant(dim, std::get<double>(v));
  const auto& vals = std::get<std::vector<double>>(v);
  require_same_dim(static_cast<Index>(vals.size()), dim, context);
  return Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size()));
}

struct ProblemChoice {
  enum class Kind { Convex, Lls, NonconvexSin, Hypercleaning };
  Kind kind = Kind::Convex;
  int n = 20;          // dimension of the analytic examples
  double a = 2.0;      // sin example target offset
  InitValue c = 2.0;   // sin example phases
  HypercleaningParams hc;
};

inline const char* to_string(ProblemChoice::Kind k) {
  switch (k) {
    case ProblemChoice::Kind::Convex: return "convex";
    case ProblemChoice::Kind::Lls: return "lls";
    case ProblemChoice::Kind::NonconvexSin: return "nonconvex_sin";
    case ProblemChoice::Kind::Hypercleaning: return "hypercleaning";
  }
  return "?";
}

struct BuiltProblem {
  std::shared_ptr<const ProblemOracle> oracle;
  std::optional<KnownSolution> known;
};

// The analytic examples are seed-free; the synthetic dataset shifts its
// generation seed by the run seed so distinct runs draw distinct data.
inline BuiltProblem build_problem(const ProblemChoice& pc, long run_seed) {
  switch (pc.kind) {
    case ProblemChoice::Kind::Convex: {
      ProblemWithSolution p = convex_example(pc.n);
      return {p.oracle, p.solution};
    }
    case ProblemChoice::Kind::Lls: {
      ProblemWithSolution p = lls_example(pc.n);
      return {p.oracle, p.solution};
    }
    case ProblemChoice::Kind::NonconvexSin: {
      const Vector c = resolve_init(pc.c, pc.n, "problem.c");
      ProblemWithSolution p = nonconvex_sin_example(pc.n, pc.a, c);
      return {p.oracle, p.solution};
    }
    case ProblemChoice::Kind::Hypercleaning: {
      HypercleaningParams params = pc.hc;
      params.seed += static_cast<std::uint64_t>(run_seed);
      return {synthetic_hypercleaning(params), std::nullopt};
    }
  }
  throw std::invalid_argument("build_problem: unknown problem kind");
}

struct MethodSpec {
  std::string label;
  SolverConfig cfg;  // x0/z0/prior left empty here, resolved per problem
  std::optional<InitValue> x0;
  std::optional<InitValue> z0;
  std::optional<InitValue> prior_z;
  double prior_weight = 0.0;
  bool prior_first_only = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ProblemChoice problem;
  std::vector<MethodSpec> methods;
  std::string output_dir = "out";
  std::vector<long> seeds;  // empty means a single run with seed 0
  int parallelism = 1;
  bool record_timing = false;   // timing columns stay 0 so reruns are byte-identical
  bool timing_columns = false;  // append fwd/bwd split columns to the CSVs
  std::string raw_text;         // verbatim source, echoed into the manifest
};

// ---------------------------------------------------------------------------
// Strict JSON parsing: unknown keys and out-of-range values are rejected with
// the offending path.

namespace detail {

using Json = nlohmann::json;

inline std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void check_keys(const Json& obj, std::initializer_list<const char*> allowed,
                       const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("config: unknown key " + join_path(path, it.key()));
  }
}

inline const Json* find(const Json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline double get_num(const Json& obj, const char* key, double def, const std::string& path) {
  const Json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_number()) throw ConfigError("config: " + join_path(path, key) + " must be a number");
  return v->get<double>();
}

inline int get_int(const Json& obj, const char* key, int def, const std::string& path) {
  const Json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_number_integer())
    throw ConfigError("config: " + join_path(path, key) + " must be an integer");
  return v->get<int>();
}

inline bool get_bool(const Json& obj, const char* key, bool def, const std::string& path) {
  const Json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_boolean())
    throw ConfigError("config: " + join_path(path, key) + " must be a boolean");
  return v->get<bool>();
}

inline std::string get_str(const Json& obj, const char* key, const std::string& def,
                           const std::string& path) {
  const Json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_string()) throw ConfigError("config: " + join_path(path, key) + " must be a string");
  return v->get<std::string>();
}

inline InitValue get_init(const Json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_array()) {
    std::vector<double> out;
    out.reserve(v.size());
    for (const Json& e : v) {
      if (!e.is_number())
        throw ConfigError("config: " + where + " must contain only numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  throw ConfigError("config: " + where + " must be a number or an array of numbers");
}

inline void require_at_least(double value, double bound, const std::string& where) {
  if (!(value >= bound))
    throw ConfigError("config: " + where + " must be >= " + std::to_string(bound) + ", got " +
                      std::to_string(value));
}

inline void require_name_safe(const std::string& s, const std::string& where) {
  if (s.empty()) throw ConfigError("config: " + where + " must be non-empty");
  if (s.find('/') != std::string::npos || s.find('\\') != std::string::npos ||
      s.find(' ') != std::string::npos)
    throw ConfigError("config: " + where + " must not contain '/', '\\\\', or spaces");
}

inline ProblemChoice parse_problem(const Json& p) {
  if (!p.is_object()) throw ConfigError("config: problem must be an object");
  const std::string kind = get_str(p, "kind", "", "problem");
  ProblemChoice out;
  if (kind == "convex" || kind == "lls") {
    check_keys(p, {"kind", "n"}, "problem");
    out.kind = kind == "convex" ? ProblemChoice::Kind::Convex : ProblemChoice::Kind::Lls;
    out.n = get_int(p, "n", 20, "problem");
    require_at_least(out.n, 1, "problem.n");
  } else if (kind == "nonconvex_sin") {
    check_keys(p, {"kind", "n", "a", "c"}, "problem");
    out.kind = ProblemChoice::Kind::NonconvexSin;
    out.n = get_int(p, "n", 1, "problem");
    require_at_least(out.n, 1, "problem.n");
    out.a = get_num(p, "a", 2.0, "problem");
    if (const Json* c = find(p, "c")) out.c = get_init(*c, "problem.c");
  } else if (kind == "hypercleaning") {
    check_keys(p,
               {"kind", "seed", "n_train", "n_val", "feature_dim", "classes", "corruption",
                "ridge", "center_scale", "noise_sigma"},
               "problem");
    out.kind = ProblemChoice::Kind::Hypercleaning;
    HypercleaningParams& hc = out.hc;
    const int seed = get_int(p, "seed", 0, "problem");
    require_at_least(seed, 0, "problem.seed");
    hc.seed = static_cast<std::uint64_t>(seed);
    hc.n_train = get_int(p, "n_train", hc.n_train, "problem");
    require_at_least(hc.n_train, 1, "problem.n_train");
    hc.n_val = get_int(p, "n_val", hc.n_val, "problem");
    require_at_least(hc.n_val, 1, "problem.n_val");
    hc.feature_dim = get_int(p, "feature_dim", hc.feature_dim, "problem");
    require_at_least(hc.feature_dim, 1, "problem.feature_dim");
    hc.classes = get_int(p, "classes", hc.classes, "problem");
    require_at_least(hc.classes, 2, "problem.classes");
    hc.corruption = get_num(p, "corruption", hc.corruption, "problem");
    if (!(hc.corruption >= 0.0 && hc.corruption <= 1.0))
      throw ConfigError("config: problem.corruption must be in [0,1], got " +
                        std::to_string(hc.corruption));
    hc.ridge = get_num(p, "ridge", hc.ridge, "problem");
    require_at_least(hc.ridge, 0.0, "problem.ridge");
    hc.center_scale = get_num(p, "center_scale", hc.center_scale, "problem");
    hc.noise_sigma = get_num(p, "noise_sigma", hc.noise_sigma, "problem");
    if (!(hc.noise_sigma > 0.0))
      throw ConfigError("config: problem.noise_sigma must be > 0, got " +
                        std::to_string(hc.noise_sigma));
  } else if (kind.empty()) {
    throw ConfigError("config: problem.kind is required");
  } else {
    throw ConfigError("config: problem.kind '" + kind +
                      "' is not one of convex, lls, nonconvex_sin, hypercleaning");
  }
  return out;
}

inline SchemeConfig parse_scheme(const Json& s, const std::string& path) {
  if (!s.is_object()) throw ConfigError("config: " + path + " must be an object");
  check_keys(s, {"kind", "step_alpha", "mu", "s_u", "s_l", "bda_beta", "lf_override"}, path);
  SchemeConfig out;
  const std::string kind = get_str(s, "kind", "PG", path);
  const auto parsed = scheme_kind_from(kind);
  if (!parsed)
    throw ConfigError("config: " + path + ".kind '" + kind +
                      "' is not one of PG, BDA, NESTEROV, AGD");
  out.kind = *parsed;
  out.step_alpha = get_num(s, "step_alpha", out.step_alpha, path);
  if (!(out.step_alpha > 0.0))
    throw ConfigError("config: " + path + ".step_alpha must be > 0");
  out.mu = get_num(s, "mu", out.mu, path);
  if (!(out.mu >= 0.0 && out.mu <= 1.0))
    throw ConfigError("config: " + path + ".mu must be in [0,1]");
  out.s_u = get_num(s, "s_u", out.s_u, path);
  out.s_l = get_num(s, "s_l", out.s_l, path);
  if (!(out.s_u > 0.0) || !(out.s_l > 0.0))
    throw ConfigError("config: " + path + ".s_u and .s_l must be > 0");
  out.bda_beta = get_num(s, "bda_beta", out.bda_beta, path);
  if (!(out.bda_beta > 0.0)) throw ConfigError("config: " + path + ".bda_beta must be > 0");
  if (const Json* lf = find(s, "lf_override")) {
    if (!lf->is_number()) throw ConfigError("config: " + path + ".lf_override must be a number");
    out.lf_override = lf->get<double>();
    if (!(*out.lf_override > 0.0))
      throw ConfigError("config: " + path + ".lf_override must be > 0");
  }
  return out;
}

inline MethodSpec parse_method(const Json& m, const std::string& path) {
  if (!m.is_object()) throw ConfigError("config: " + path + " must be an object");
  check_keys(m,
             {"label", "mode", "T", "K", "alpha_x", "alpha_z", "k_trunc", "scheme", "prior", "x0",
              "z0"},
             path);
  MethodSpec out;
  const std::string mode = get_str(m, "mode", "", path);
  if (mode.empty()) throw ConfigError("config: " + path + ".mode is required");
  const auto parsed_mode = solve_mode_from(mode);
  if (!parsed_mode)
    throw ConfigError("config: " + path + ".mode '" + mode +
                      "' is not one of AIT_C, AIT_NC, RHG, TRHG, BDA");
  out.cfg.mode = *parsed_mode;
  out.label = get_str(m, "label", mode, path);
  require_name_safe(out.label, path + ".label");
  out.cfg.T = get_int(m, "T", out.cfg.T, path);
  require_at_least(out.cfg.T, 1, path + ".T");
  out.cfg.K = get_int(m, "K", out.cfg.K, path);
  require_at_least(out.cfg.K, 1, path + ".K");
  out.cfg.alpha_x = get_num(m, "alpha_x", out.cfg.alpha_x, path);
  require_at_least(out.cfg.alpha_x, 0.0, path + ".alpha_x");
  out.cfg.alpha_z = get_num(m, "alpha_z", out.cfg.alpha_z, path);
  require_at_least(out.cfg.alpha_z, 0.0, path + ".alpha_z");
  out.cfg.k_trunc = get_int(m, "k_trunc", out.cfg.k_trunc, path);
  require_at_least(out.cfg.k_trunc, 0, path + ".k_trunc");
  if (const Json* s = find(m, "scheme")) out.cfg.scheme = parse_scheme(*s, path + ".scheme");
  if (const Json* p = find(m, "prior")) {
    if (!p->is_object()) throw ConfigError("config: " + path + ".prior must be an object");
    check_keys(*p, {"z_prior", "weight", "first_iteration_only"}, path + ".prior");
    const Json* zp = find(*p, "z_prior");
    if (!zp) throw ConfigError("config: " + path + ".prior.z_prior is required");
    out.prior_z = get_init(*zp, path + ".prior.z_prior");
    out.prior_weight = get_num(*p, "weight", 0.0, path + ".prior");
    require_at_least(out.prior_weight, 0.0, path + ".prior.weight");
    out.prior_first_only = get_bool(*p, "first_iteration_only", false, path + ".prior");
  }
  if (const Json* x0 = find(m, "x0")) out.x0 = get_init(*x0, path + ".x0");
  if (const Json* z0 = find(m, "z0")) out.z0 = get_init(*z0, path + ".z0");
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  detail::Json root = detail::Json::parse(text, nullptr, false);
  if (root.is_discarded()) throw ConfigError("config: not valid JSON");
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  detail::check_keys(root,
                     {"name", "problem", "methods", "output_dir", "seeds", "parallelism",
                      "record_timing", "timing_columns"},
                     "");
  ExperimentConfig out;
  out.raw_text = text;
  out.name = detail::get_str(root, "name", out.name, "");
  detail::require_name_safe(out.name, "name");
  const detail::Json* prob = detail::find(root, "problem");
  if (!prob) throw ConfigError("config: problem is required");
  out.problem = detail::parse_problem(*prob);
  const detail::Json* methods = detail::find(root, "methods");
  if (!methods || !methods->is_array() || methods->empty())
    throw ConfigError("config: methods must be a non-empty array");
  for (std::size_t i = 0; i < methods->size(); ++i)
    out.methods.push_back(
        detail::parse_method((*methods)[i], "methods[" + std::to_string(i) + "]"));
  for (std::size_t i = 0; i < out.methods.size(); ++i)
    for (std::size_t j = i + 1; j < out.methods.size(); ++j)
      if (out.methods[i].label == out.methods[j].label)
        throw ConfigError("config: methods: duplicate label '" + out.methods[i].label + "'");
  out.output_dir = detail::get_str(root, "output_dir", out.output_dir, "");
  if (out.output_dir.empty()) throw ConfigError("config: output_dir must be non-empty");
  if (const detail::Json* seeds = detail::find(root, "seeds")) {
    if (!seeds->is_array()) throw ConfigError("config: seeds must be an array of integers");
    for (const detail::Json& s : *seeds) {
      if (!s.is_number_integer())
        throw ConfigError("config: seeds must be an array of integers");
      out.seeds.push_back(s.get<long>());
    }
    for (std::size_t i = 0; i < out.seeds.size(); ++i)
      for (std::size_t j = i + 1; j < out.seeds.size(); ++j)
        if (out.seeds[i] == out.seeds[j])
          throw ConfigError("config: seeds: duplicate seed " + std::to_string(out.seeds[i]));
  }
  out.parallelism = detail::get_int(root, "parallelism", out.parallelism, "");
  detail::require_at_least(out.parallelism, 1, "parallelism");
  out.record_timing = detail::get_bool(root, "record_timing", out.record_timing, "");
  out.timing_columns = detail::get_bool(root, "timing_columns", out.timing_columns, "");
  return out;
}

// ---------------------------------------------------------------------------
// Execution.

struct RunOutcome {
  std::string method;
  long seed = 0;
  std::string file;    // CSV name within output_dir, empty if never written
  std::string status;  // "ok" | "numeric_failure" | "error"
  int failed_iteration = -1;
  std::string message;
  std::optional<RunSummary> summary;
  std::vector<std::string> warnings;
};

struct ExperimentManifest {
  std::string manifest_path;
  std::vector<RunOutcome> outcomes;
  bool any_numeric_failure = false;
  bool any_error = false;
};

namespace detail {
inline Json summary_json(const RunSummary& s) {
  Json j;
  j["final_rel_phi_err"] = s.final_rel_phi_err;
  j["final_rel_x_err"] = s.final_rel_x_err;
  auto opt = [](const std::optional<int>& v) { return v ? Json(*v) : Json(nullptr); };
  j["iterations_to"] = {{"1e-1", opt(s.iters_to_1e1)},
                        {"1e-2", opt(s.iters_to_1e2)},
                        {"1e-3", opt(s.iters_to_1e3)}};
  j["mean_k_bar_tail"] = s.mean_k_bar_tail;
  j["mean_wall_micros"] = s.mean_wall_micros;
  return j;
}
}  // namespace detail

// Runs every (method, seed) pair, writes one CSV each plus manifest.json.
// Failures are collected per run and never abort siblings.
inline ExperimentManifest run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);

  const std::vector<long> seeds = cfg.seeds.empty() ? std::vector<long>{0} : cfg.seeds;
  struct Task {
    int method_idx;
    long seed;
  };
  std::vector<Task> tasks;
  for (int m = 0; m < static_cast<int>(cfg.methods.size()); ++m)
    for (long s : seeds) tasks.push_back({m, s});

  ExperimentManifest manifest;
  manifest.outcomes.resize(tasks.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
      const Task& task = tasks[i];
      const MethodSpec& method = cfg.methods[task.method_idx];
      RunOutcome& out = manifest.outcomes[i];
      out.method = method.label;
      out.seed = task.seed;
      try {
        BuiltProblem bp = build_problem(cfg.problem, task.seed);
        SolverConfig sc = method.cfg;
        sc.seed = task.seed;
        sc.measure_time = cfg.record_timing;
        if (method.x0) sc.x0 = resolve_init(*method.x0, bp.oracle->ul_dim(), "x0");
        if (method.z0) sc.z0 = resolve_init(*method.z0, bp.oracle->ll_dim(), "z0");
        if (method.prior_z) {
          PriorConfig prior;
          prior.z_prior = resolve_init(*method.prior_z, bp.oracle->ll_dim(), "prior.z_prior");
          prior.weight = method.prior_weight;
          prior.first_iteration_only = method.prior_first_only;
          sc.prior = prior;
        }
        const RunResult run = solve(*bp.oracle, sc, bp.known ? &*bp.known : nullptr);
        const std::string fname =
            cfg.name + "_" + method.label + "_" + std::to_string(task.seed) + ".csv";
        write_csv_file((fs::path(cfg.output_dir) / fname).string(), run.records,
                       cfg.timing_columns);
        out.file = fname;
        out.warnings = run.warnings;
        if (!run.records.empty()) out.summary = summarize(run.records);
        if (run.termination == Termination::NumericFailure) {
          out.status = "numeric_failure";
          out.failed_iteration = run.failed_iteration;
        } else {
          out.status = "ok";
        }
      } catch (const std::exception& e) {
        out.status = "error";
        out.message = e.what();
      }
    }
  };

  const int workers =
      std::max(1, std::min<int>(cfg.parallelism, static_cast<int>(tasks.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  for (const RunOutcome& out : manifest.outcomes) {
    if (out.status == "numeric_failure") manifest.any_numeric_failure = true;
    if (out.status == "error") manifest.any_error = true;
  }

  detail::Json man;
  man["version"] = kVersion;
  man["experiment"] = cfg.name;
  man["config_text"] = cfg.raw_text;
  if (!cfg.raw_text.empty()) {
    detail::Json echo = detail::Json::parse(cfg.raw_text, nullptr, false);
    if (!echo.is_discarded()) man["config"] = echo;
  }
  man["runs"] = detail::Json::array();
  for (const RunOutcome& out : manifest.outcomes) {
    detail::Json r;
    r["method"] = out.method;
    r["seed"] = out.seed;
    r["file"] = out.file;
    r["status"] = out.status;
    if (out.failed_iteration >= 0) r["failed_iteration"] = out.failed_iteration;
    if (!out.message.empty()) r["message"] = out.message;
    r["warnings"] = out.warnings;
    if (out.summary) r["summary"] = detail::summary_json(*out.summary);
    man["runs"].push_back(r);
  }
  const fs::path man_path = fs::path(cfg.output_dir) / "manifest.json";
  std::ofstream man_out(man_path);
  if (!man_out) throw std::runtime_error("run_experiment: cannot open " + man_path.string());
  man_out << man.dump(2) << '\n';
  man_out.flush();
  if (!man_out) throw std::runtime_error("run_experiment: write failed for " + man_path.string());
  manifest.manifest_path = man_path.string();
  return manifest;
}

// ---------------------------------------------------------------------------
// Adjoint-vs-finite-difference agreement sweep, shared by the CLI diagnostic
// command and the acceptance harness.

struct GradientCheckResult {
  int trials_requested = 0;
  int trials_used = 0;
  int skipped = 0;  // draws whose trajectory grazed a projection kink
  double max_rel_err = 0.0;
};

inline GradientCheckResult run_gradient_check(const ProblemOracle& o, const SchemeConfig& scheme,
                                              int steps, int trials, std::uint64_t seed,
                                              double fd_step = kDefaultFdStep) {
  if (steps < 1) throw std::invalid_argument("run_gradient_check: steps must be >= 1");
  if (trials < 1) throw std::invalid_argument("run_gradient_check: trials must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  // Margin keeps z-side finite differences inside Z and trajectories away
  // from box faces; unbounded coordinates draw from a fixed window.
  auto sample_in = [&](const BoxSet& box, double margin) {
    Vector v(box.dim());
    for (Index i = 0; i < box.dim(); ++i) {
      double lo = box.lower[i], hi = box.upper[i];
      if (!std::isfinite(lo)) lo = -2.0;
      if (!std::isfinite(hi)) hi = 2.0;
      lo += margin;
      hi -= margin;
      if (!(lo < hi)) {
        lo = box.lower[i];
        hi = box.upper[i];
      }
      v[i] = lo + (hi - lo) * u01(rng);
    }
    return v;
  };
  std::uniform_int_distribution<int> pick_k(1, steps);
  GradientCheckResult res;
  res.trials_requested = trials;
  for (int trial = 0; trial < trials; ++trial) {
    const Vector x = sample_in(o.x_set(), 0.0);
    const Vector z = sample_in(o.z_set(), 0.5);
    const int k_sel = pick_k(rng);
    const TrajectoryTape tape = unroll(o, scheme, x, z, steps);
    if (tape_near_projection_kink(tape, o.y_set(), 1e-3)) {
      ++res.skipped;
      continue;
    }
    const HyperGradient rev = reverse_hypergrad(o, tape, k_sel);
    const HyperGradient fd = fd_hypergrad(o, scheme, x, z, steps, k_sel, fd_step);
    const double num =
        std::sqrt((rev.g_x - fd.g_x).squaredNorm() + (rev.g_z - fd.g_z).squaredNorm());
    const double den =
        std::max(1.0, std::sqrt(fd.g_x.squaredNorm() + fd.g_z.squaredNorm()));
    res.max_rel_err = std::max(res.max_rel_err, num / den);
    ++res.trials_used;
  }
  return res;
}

}  // namespace bilevel
