// Command-line driver: experiment runner plus diagnostics.
// Exit codes: 0 success, 1 config error, 2 numeric failure, 3 I/O error.

#include "bilevel/bilevel.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

int do_run(const std::string& config_path, const std::string& out_override, int jobs_override) {
  std::string text;
  {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "error: cannot open config " << config_path << "\n";
      return kExitIo;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }

  bilevel::ExperimentConfig cfg;
  try {
    cfg = bilevel::parse_config(text);
  } catch (const bilevel::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (const char* env = std::getenv("BILEVEL_OUT_DIR"); env && *env) cfg.output_dir = env;
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (jobs_override > 0) cfg.parallelism = jobs_override;

  bilevel::ExperimentManifest manifest;
  try {
    manifest = bilevel::run_experiment(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }

  for (const bilevel::RunOutcome& o : manifest.outcomes) {
    std::cout << o.method << " seed=" << o.seed << " status=" << o.status;
    if (!o.file.empty()) std::cout << " file=" << o.file;
    if (o.summary) {
      std::cout << " final_rel_x_err=" << o.summary->final_rel_x_err
                << " final_rel_phi_err=" << o.summary->final_rel_phi_err;
    }
    if (!o.message.empty()) std::cout << " (" << o.message << ")";
    std::cout << "\n";
    for (const std::string& w : o.warnings) std::cout << "  warning: " << w << "\n";
  }
  std::cout << "manifest: " << manifest.manifest_path << "\n";
  if (manifest.any_numeric_failure) return kExitNumeric;
  if (manifest.any_error) return kExitIo;
  return kExitOk;
}

struct NamedProblem {
  std::string name;
  std::shared_ptr<const bilevel::ProblemOracle> oracle;
};

std::vector<NamedProblem> diagnostic_problems(const std::string& filter) {
  std::vector<NamedProblem> out;
  auto want = [&](const char* name) { return filter.empty() || filter == name; };
  if (want("convex")) out.push_back({"convex", bilevel::convex_example(4).oracle});
  if (want("lls")) out.push_back({"lls", bilevel::lls_example(4).oracle});
  if (want("nonconvex_sin"))
    out.push_back({"nonconvex_sin", bilevel::nonconvex_sin_example(3, 2.0, 2.0).oracle});
  if (want("hypercleaning")) {
    bilevel::HypercleaningParams hp;
    hp.seed = 7;
    hp.n_train = 12;
    hp.n_val = 8;
    hp.feature_dim = 3;
    hp.classes = 3;
    out.push_back({"hypercleaning", bilevel::synthetic_hypercleaning(hp)});
  }
  if (out.empty())
    throw bilevel::ConfigError("unknown problem '" + filter +
                               "': expected convex, lls, nonconvex_sin, or hypercleaning");
  return out;
}

int do_check_gradients(const std::string& problem, const std::string& scheme_name, int trials,
                       int steps, unsigned long seed) {
  std::vector<bilevel::SchemeConfig> schemes;
  auto add_scheme = [&](bilevel::SchemeKind kind) {
    bilevel::SchemeConfig s;
    s.kind = kind;
    schemes.push_back(s);
  };
  if (scheme_name.empty()) {
    add_scheme(bilevel::SchemeKind::PG);
    add_scheme(bilevel::SchemeKind::BDA);
    add_scheme(bilevel::SchemeKind::Nesterov);
    add_scheme(bilevel::SchemeKind::AGD);
  } else {
    const auto kind = bilevel::scheme_kind_from(scheme_name);
    if (!kind) {
      std::cerr << "error: unknown scheme '" << scheme_name
                << "': expected PG, BDA, NESTEROV, or AGD\n";
      return kExitConfig;
    }
    add_scheme(*kind);
  }

  std::vector<NamedProblem> problems;
  try {
    problems = diagnostic_problems(problem);
  } catch (const bilevel::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  constexpr double kTolerance = 1e-5;
  double worst = 0.0;
  try {
    for (const NamedProblem& np : problems) {
      for (const bilevel::SchemeConfig& scheme : schemes) {
        const bilevel::GradientCheckResult res =
            bilevel::run_gradient_check(*np.oracle, scheme, steps, trials, seed);
        worst = std::max(worst, res.max_rel_err);
        std::cout << np.name << " " << bilevel::to_string(scheme.kind)
                  << ": max_rel_err=" << res.max_rel_err << " (" << res.trials_used << "/"
                  << res.trials_requested << " trials, " << res.skipped << " skipped)\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  std::cout << "overall max_rel_err=" << worst << " tolerance=" << kTolerance << "\n";
  return worst <= kTolerance ? kExitOk : kExitNumeric;
}

int do_list_problems() {
  std::cout
      << "convex          x in [-10,10]^n, y in R^(2n); quadratic lower level, quartic upper\n"
      << "lls             x in [-1,1]^n, y in R^(2n); quartic lower level, least-squares upper\n"
      << "nonconvex_sin   x in R, y in [-10,10]^n; oscillatory lower level, many local optima\n"
      << "hypercleaning   x: per-sample weights, y: softmax classifier; synthetic blobs with\n"
      << "                label corruption, second-order terms by finite differences\n";
  return kExitOk;
}

int do_dump_dataset(const bilevel::HypercleaningParams& params, const std::string& out_path) {
  try {
    const auto problem = bilevel::synthetic_hypercleaning(params);
    problem->export_csv(out_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilevel optimization toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bilevel::kVersion);

  std::string config_path, out_override;
  int jobs_override = 0;
  CLI::App* run = app.add_subcommand("run", "execute an experiment config and write CSVs");
  run->add_option("config", config_path, "JSON experiment config")->required();
  run->add_option("--out", out_override, "output directory override");
  run->add_option("--jobs", jobs_override, "worker count override")->check(CLI::PositiveNumber);

  std::string cg_problem, cg_scheme;
  int cg_trials = 10, cg_steps = 5;
  unsigned long cg_seed = 1234;
  CLI::App* cg = app.add_subcommand(
      "check-gradients", "compare adjoint hypergradients against finite differences");
  cg->add_option("problem", cg_problem, "problem name (default: all)");
  cg->add_option("--scheme", cg_scheme, "restrict to one scheme (PG, BDA, NESTEROV, AGD)");
  cg->add_option("--trials", cg_trials, "random draws per pair")->check(CLI::PositiveNumber);
  cg->add_option("--steps", cg_steps, "lower-level steps per draw")->check(CLI::PositiveNumber);
  cg->add_option("--seed", cg_seed, "draw seed");

  CLI::App* lp = app.add_subcommand("list-problems", "list built-in problems");

  bilevel::HypercleaningParams dd_params;
  unsigned long dd_seed = 0;
  std::string dd_out = "hypercleaning.csv";
  CLI::App* dd = app.add_subcommand("dump-dataset", "write the synthetic dataset as CSV");
  dd->add_option("--seed", dd_seed, "generation seed");
  dd->add_option("--n-train", dd_params.n_train, "training samples")->check(CLI::PositiveNumber);
  dd->add_option("--n-val", dd_params.n_val, "validation samples")->check(CLI::PositiveNumber);
  dd->add_option("--feature-dim", dd_params.feature_dim, "feature dimension")
      ->check(CLI::PositiveNumber);
  dd->add_option("--classes", dd_params.classes, "class count")->check(CLI::Range(2, 1000));
  dd->add_option("--corruption", dd_params.corruption, "label corruption rate")
      ->check(CLI::Range(0.0, 1.0));
  dd->add_option("--out", dd_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (*run) return do_run(config_path, out_override, jobs_override);
  if (*cg) return do_check_gradients(cg_problem, cg_scheme, cg_trials, cg_steps, cg_seed);
  if (*lp) return do_list_problems();
  if (*dd) {
    dd_params.seed = dd_seed;
    return do_dump_dataset(dd_params, dd_out);
  }
  return kExitConfig;
}
