#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bilevel;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

constexpr const char* kMinimalConfig = R"({
  "problem": {"kind": "convex"},
  "methods": [{"mode": "RHG"}]
})";

}  // namespace

TEST_CASE("minimal config picks documented defaults", "[experiment]") {
  const ExperimentConfig cfg = parse_config(kMinimalConfig);
  REQUIRE(cfg.name == "experiment");
  REQUIRE(cfg.problem.kind == ProblemChoice::Kind::Convex);
  REQUIRE(cfg.problem.n == 20);
  REQUIRE(cfg.methods.size() == 1);
  REQUIRE(cfg.methods[0].label == "RHG");
  REQUIRE(cfg.methods[0].cfg.mode == SolveMode::RHG);
  REQUIRE(cfg.methods[0].cfg.T == 1000);
  REQUIRE(cfg.methods[0].cfg.K == 16);
  REQUIRE(cfg.methods[0].cfg.alpha_x == 0.01);
  REQUIRE(cfg.methods[0].cfg.alpha_z == 0.01);
  REQUIRE(cfg.methods[0].cfg.scheme.kind == SchemeKind::PG);
  REQUIRE(cfg.output_dir == "out");
  REQUIRE(cfg.seeds.empty());
  REQUIRE(cfg.parallelism == 1);
  REQUIRE_FALSE(cfg.record_timing);
  REQUIRE_FALSE(cfg.timing_columns);
  REQUIRE(cfg.raw_text == kMinimalConfig);
}

TEST_CASE("config rejections name the offending path", "[experiment]") {
  using Catch::Matchers::ContainsSubstring;
  auto reject = [](const std::string& text, const std::string& needle) {
    REQUIRE_THROWS_WITH(parse_config(text), ContainsSubstring(needle));
  };

  reject("not json at all", "not valid JSON");
  reject("[1,2]", "top level must be an object");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG"}],"foo":1})", "unknown key foo");
  reject(R"({"methods":[{"mode":"RHG"}]})", "problem is required");
  reject(R"({"problem":{"kind":"banana"},"methods":[{"mode":"RHG"}]})", "problem.kind 'banana'");
  reject(R"({"problem":{},"methods":[{"mode":"RHG"}]})", "problem.kind is required");
  reject(R"({"problem":{"kind":"convex","n":0},"methods":[{"mode":"RHG"}]})", "problem.n");
  reject(R"({"problem":{"kind":"convex","a":3},"methods":[{"mode":"RHG"}]})",
         "unknown key problem.a");
  reject(R"({"problem":{"kind":"convex"},"methods":[]})", "methods must be a non-empty array");
  reject(R"({"problem":{"kind":"convex"},"methods":[{}]})", "methods[0].mode is required");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"XYZ"}]})", "methods[0].mode 'XYZ'");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","foo":1}]})",
         "unknown key methods[0].foo");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","K":-3}]})", "methods[0].K");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","T":0}]})", "methods[0].T");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","alpha_x":-1}]})",
         "methods[0].alpha_x");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","label":"a b"}]})",
         "methods[0].label");
  reject(
      R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","scheme":{"kind":"newton"}}]})",
      "methods[0].scheme.kind 'newton'");
  reject(
      R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","scheme":{"step_alpha":0}}]})",
      "methods[0].scheme.step_alpha");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","scheme":{"mu":1.2}}]})",
         "methods[0].scheme.mu");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","prior":{"weight":1}}]})",
         "methods[0].prior.z_prior is required");
  reject(
      R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","prior":{"z_prior":0,"weight":-1}}]})",
      "methods[0].prior.weight");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG","x0":"zero"}]})",
         "methods[0].x0");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG"},{"mode":"RHG"}]})",
         "duplicate label 'RHG'");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG"}],"seeds":[1,1]})",
         "duplicate seed 1");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG"}],"seeds":[1.5]})",
         "seeds must be an array of integers");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG"}],"parallelism":0})",
         "parallelism");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG"}],"name":"has space"})", "name");
  reject(R"({"problem":{"kind":"convex"},"methods":[{"mode":"RHG"}],"output_dir":""})",
         "output_dir");
  reject(R"({"problem":{"kind":"hypercleaning","corruption":1.5},"methods":[{"mode":"RHG"}]})",
         "problem.corruption");
  reject(R"({"problem":{"kind":"hypercleaning","noise_sigma":0},"methods":[{"mode":"RHG"}]})",
         "problem.noise_sigma");
  reject(R"({"problem":{"kind":"nonconvex_sin","c":"two"},"methods":[{"mode":"RHG"}]})",
         "problem.c");
}

TEST_CASE("initialization entries broadcast scalars and check lengths", "[experiment]") {
  REQUIRE(resolve_init(InitValue(2.0), 3, "x0") == Vector::Constant(3, 2.0));
  const Vector v = resolve_init(InitValue(std::vector<double>{1.0, 2.0}), 2, "x0");
  REQUIRE(v[0] == 1.0);
  REQUIRE(v[1] == 2.0);
  REQUIRE_THROWS_AS(resolve_init(InitValue(std::vector<double>{1.0, 2.0}), 3, "x0"),
                    std::invalid_argument);
}

TEST_CASE("problem construction covers every kind", "[experiment]") {
  ProblemChoice pc;
  pc.kind = ProblemChoice::Kind::Convex;
  pc.n = 4;
  auto convex = build_problem(pc, 0);
  REQUIRE(convex.oracle->name() == "convex");
  REQUIRE(convex.known.has_value());

  pc.kind = ProblemChoice::Kind::Lls;
  auto lls = build_problem(pc, 0);
  REQUIRE(lls.oracle->name() == "lls");
  REQUIRE(lls.known.has_value());

  pc.kind = ProblemChoice::Kind::NonconvexSin;
  pc.n = 2;
  pc.c = std::vector<double>{2.0, -1.0};
  auto sin_prob = build_problem(pc, 0);
  REQUIRE(sin_prob.oracle->name() == "nonconvex_sin");
  REQUIRE(sin_prob.oracle->ll_dim() == 2);
  REQUIRE(sin_prob.known.has_value());
}

TEST_CASE("synthetic dataset seed shifts with the run seed", "[experiment]") {
  ProblemChoice pc;
  pc.kind = ProblemChoice::Kind::Hypercleaning;
  pc.hc.seed = 5;
  pc.hc.n_train = 8;
  pc.hc.n_val = 4;
  pc.hc.feature_dim = 2;
  pc.hc.classes = 2;
  auto built = build_problem(pc, 3);
  REQUIRE_FALSE(built.known.has_value());

  HypercleaningParams direct = pc.hc;
  direct.seed = 8;  // 5 + run seed 3
  HypercleaningProblem expect(direct);

  const auto* got = dynamic_cast<const HypercleaningProblem*>(built.oracle.get());
  REQUIRE(got != nullptr);
  REQUIRE(got->train().size() == expect.train().size());
  for (std::size_t i = 0; i < expect.train().size(); ++i) {
    REQUIRE(got->train()[i].u == expect.train()[i].u);
    REQUIRE(got->train()[i].observed_label == expect.train()[i].observed_label);
  }
}

TEST_CASE("experiments write per-run csv files plus a manifest", "[experiment]") {
  TempDir dir("bilevel_exp_basic");
  std::string text = R"({
    "name": "smoke",
    "problem": {"kind": "convex", "n": 3},
    "methods": [
      {"mode": "RHG", "T": 5, "K": 4, "alpha_x": 0.05, "scheme": {"step_alpha": 0.5}},
      {"mode": "AIT_C", "T": 5, "K": 4, "alpha_x": 0.05, "alpha_z": 0.05,
       "scheme": {"step_alpha": 0.5}, "x0": 2.0, "z0": 2.0}
    ],
    "output_dir": ")" + dir.path.string() + R"("
  })";
  const ExperimentConfig cfg = parse_config(text);
  const ExperimentManifest man = run_experiment(cfg);

  REQUIRE(man.outcomes.size() == 2);
  REQUIRE_FALSE(man.any_numeric_failure);
  REQUIRE_FALSE(man.any_error);
  for (const RunOutcome& out : man.outcomes) {
    REQUIRE(out.status == "ok");
    REQUIRE(out.seed == 0);
    REQUIRE_FALSE(out.file.empty());
    const ParsedCsv parsed = read_csv_file((dir.path / out.file).string());
    REQUIRE(parsed.records.size() == 5);
    REQUIRE(out.summary.has_value());
  }
  REQUIRE(man.outcomes[0].file == "smoke_RHG_0.csv");
  REQUIRE(man.outcomes[1].file == "smoke_AIT_C_0.csv");

  const auto parsed_man = nlohmann::json::parse(slurp(man.manifest_path));
  REQUIRE(parsed_man["experiment"] == "smoke");
  REQUIRE(parsed_man["runs"].size() == 2);
  REQUIRE(parsed_man["runs"][0]["status"] == "ok");
  REQUIRE(parsed_man["runs"][0]["file"] == "smoke_RHG_0.csv");
  REQUIRE(parsed_man["runs"][0]["summary"]["final_rel_x_err"].is_number());
  REQUIRE(parsed_man["config"]["name"] == "smoke");
  REQUIRE(parsed_man["config_text"] == text);
}

TEST_CASE("parallel execution is byte-identical to serial", "[experiment]") {
  TempDir serial_dir("bilevel_exp_serial");
  TempDir parallel_dir("bilevel_exp_parallel");
  auto config_for = [](const fs::path& out, int parallelism) {
    return R"({
      "name": "par",
      "problem": {"kind": "lls", "n": 3},
      "methods": [
        {"mode": "RHG", "T": 4, "K": 4, "scheme": {"step_alpha": 0.002}},
        {"mode": "AIT_C", "label": "joint", "T": 4, "K": 4, "scheme": {"step_alpha": 0.002}}
      ],
      "seeds": [0, 7],
      "parallelism": )" +
           std::to_string(parallelism) + R"(,
      "output_dir": ")" + out.string() + R"("
    })";
  };
  const ExperimentManifest a = run_experiment(parse_config(config_for(serial_dir.path, 1)));
  const ExperimentManifest b = run_experiment(parse_config(config_for(parallel_dir.path, 2)));
  REQUIRE(a.outcomes.size() == 4);
  REQUIRE(b.outcomes.size() == 4);
  for (const RunOutcome& out : a.outcomes) {
    REQUIRE(out.status == "ok");
    REQUIRE(slurp(serial_dir.path / out.file) == slurp(parallel_dir.path / out.file));
  }
}

TEST_CASE("numeric failures are reported without aborting siblings", "[experiment]") {
  TempDir dir("bilevel_exp_fail");
  std::string text = R"({
    "name": "mix",
    "problem": {"kind": "lls", "n": 2},
    "methods": [
      {"mode": "RHG", "label": "explodes", "T": 5, "K": 16, "z0": 3.0,
       "scheme": {"step_alpha": 1e6}},
      {"mode": "RHG", "label": "fine", "T": 5, "K": 4, "scheme": {"step_alpha": 0.002}}
    ],
    "output_dir": ")" + dir.path.string() + R"("
  })";
  const ExperimentManifest man = run_experiment(parse_config(text));
  REQUIRE(man.outcomes.size() == 2);
  REQUIRE(man.any_numeric_failure);
  REQUIRE_FALSE(man.any_error);

  const RunOutcome& bad = man.outcomes[0];
  REQUIRE(bad.method == "explodes");
  REQUIRE(bad.status == "numeric_failure");
  REQUIRE(bad.failed_iteration == 0);
  REQUIRE_FALSE(bad.summary.has_value());  // nothing recorded before the failure
  REQUIRE(read_csv_file((dir.path / bad.file).string()).records.empty());

  REQUIRE(man.outcomes[1].status == "ok");
  REQUIRE(read_csv_file((dir.path / man.outcomes[1].file).string()).records.size() == 5);
}

TEST_CASE("per-run setup errors are collected as error outcomes", "[experiment]") {
  TempDir dir("bilevel_exp_err");
  std::string text = R"({
    "name": "bad",
    "problem": {"kind": "convex", "n": 3},
    "methods": [
      {"mode": "RHG", "T": 2, "K": 2, "x0": [1.0, 2.0], "scheme": {"step_alpha": 0.5}}
    ],
    "output_dir": ")" + dir.path.string() + R"("
  })";
  const ExperimentManifest man = run_experiment(parse_config(text));
  REQUIRE(man.outcomes.size() == 1);
  REQUIRE(man.any_error);
  REQUIRE(man.outcomes[0].status == "error");
  REQUIRE_FALSE(man.outcomes[0].message.empty());
  REQUIRE(man.outcomes[0].file.empty());
}

TEST_CASE("timing columns appear only when requested", "[experiment]") {
  TempDir dir("bilevel_exp_timing");
  std::string text = R"({
    "name": "timed",
    "problem": {"kind": "convex", "n": 3},
    "methods": [{"mode": "RHG", "T": 3, "K": 4, "scheme": {"step_alpha": 0.5}}],
    "record_timing": true,
    "timing_columns": true,
    "output_dir": ")" + dir.path.string() + R"("
  })";
  const ExperimentManifest man = run_experiment(parse_config(text));
  REQUIRE(man.outcomes[0].status == "ok");
  const ParsedCsv parsed = read_csv_file((dir.path / man.outcomes[0].file).string());
  REQUIRE(parsed.timing_columns);
  REQUIRE(parsed.records.size() == 3);
  for (const auto& rec : parsed.records) REQUIRE(rec.wall_micros >= 0.0);
}

TEST_CASE("adjoint agreement sweep stays tight on smooth draws", "[experiment]") {
  auto prob = convex_example(3);
  SchemeConfig scheme;
  scheme.kind = SchemeKind::PG;
  scheme.step_alpha = 0.45;
  const GradientCheckResult res = run_gradient_check(*prob.oracle, scheme, 5, 8, 7);
  REQUIRE(res.trials_requested == 8);
  REQUIRE(res.trials_used + res.skipped == 8);
  REQUIRE(res.trials_used >= 1);
  REQUIRE(res.max_rel_err <= 1e-5);

  REQUIRE_THROWS_AS(run_gradient_check(*prob.oracle, scheme, 0, 1, 7), std::invalid_argument);
  REQUIRE_THROWS_AS(run_gradient_check(*prob.oracle, scheme, 1, 0, 7), std::invalid_argument);
}
