#include "support.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace bilevel;

namespace {

ConvergenceRecord make_record(int t, double rel_phi, double rel_x, int k_bar, double surrogate,
                              double ll_f, double resid, double wall, double fwd = 0.0,
                              double bwd = 0.0) {
  ConvergenceRecord r;
  r.t = t;
  r.rel_phi_err = rel_phi;
  r.rel_x_err = rel_x;
  r.k_bar = k_bar;
  r.surrogate_value = surrogate;
  r.ll_final_f = ll_f;
  r.residual_min = resid;
  r.wall_micros = wall;
  r.fwd_micros = fwd;
  r.bwd_micros = bwd;
  return r;
}

bool same_double(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return a == b && std::signbit(a) == std::signbit(b);
}

bool records_equal(const ConvergenceRecord& a, const ConvergenceRecord& b) {
  return a.t == b.t && a.k_bar == b.k_bar && same_double(a.rel_phi_err, b.rel_phi_err) &&
         same_double(a.rel_x_err, b.rel_x_err) &&
         same_double(a.surrogate_value, b.surrogate_value) &&
         same_double(a.ll_final_f, b.ll_final_f) && same_double(a.residual_min, b.residual_min) &&
         same_double(a.wall_micros, b.wall_micros) && same_double(a.fwd_micros, b.fwd_micros) &&
         same_double(a.bwd_micros, b.bwd_micros);
}

}  // namespace

TEST_CASE("csv round-trip is value-exact", "[reporting]") {
  std::vector<ConvergenceRecord> recs;
  recs.push_back(make_record(0, 0.1, 1.0 / 3.0, 3, 1e-300, -1e300, 2.5e-17, 12.0));
  recs.push_back(make_record(1, std::numeric_limits<double>::quiet_NaN(),
                             std::numeric_limits<double>::infinity(), 16, -0.0, 0.0,
                             0.1234567890123456789, 0.0));
  recs.push_back(make_record(7, 6.02214076e23, 1.0 + std::numeric_limits<double>::epsilon(), 1,
                             -2.2250738585072014e-308, 3.0, 4.0, 5.0));

  SECTION("plain columns") {
    std::stringstream ss;
    emit_csv(ss, recs);
    const ParsedCsv back = parse_csv(ss);
    REQUIRE_FALSE(back.timing_columns);
    REQUIRE(back.records.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) REQUIRE(records_equal(back.records[i], recs[i]));
  }

  SECTION("timing columns") {
    recs[0].fwd_micros = 8.25;
    recs[0].bwd_micros = 3.75;
    recs[2].fwd_micros = 1e-12;
    std::stringstream ss;
    emit_csv(ss, recs, /*timing_columns=*/true);
    const ParsedCsv back = parse_csv(ss);
    REQUIRE(back.timing_columns);
    REQUIRE(back.records.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) REQUIRE(records_equal(back.records[i], recs[i]));
  }
}

TEST_CASE("csv headers are stable golden strings", "[reporting]") {
  std::stringstream plain;
  emit_csv(plain, {});
  REQUIRE(plain.str() ==
          "t,rel_phi_err,rel_x_err,k_bar,surrogate_value,ll_final_f,residual_min,wall_micros\n");

  std::stringstream timed;
  emit_csv(timed, {}, /*timing_columns=*/true);
  REQUIRE(timed.str() ==
          "t,rel_phi_err,rel_x_err,k_bar,surrogate_value,ll_final_f,residual_min,wall_micros,"
          "fwd_micros,bwd_micros\n");
}

TEST_CASE("csv rows serialize integers and shortest-exact floats", "[reporting]") {
  std::stringstream ss;
  emit_csv(ss, {make_record(4, 0.5, 0.25, 9, -2.0, 0.0, 1.0, 42.0)});
  std::string line;
  std::getline(ss, line);  // header
  std::getline(ss, line);
  REQUIRE(line == "4,0.5,0.25,9,-2,0,1,42");
}

TEST_CASE("csv parser tolerates blank lines and CRLF", "[reporting]") {
  std::stringstream ss;
  ss << kCsvHeader << "\r\n"
     << "\r\n"
     << "0,0.5,0.5,4,1,0,0,3\r\n"
     << "\n"
     << "1,0.25,0.25,4,1,0,0,3\r\n";
  const ParsedCsv back = parse_csv(ss);
  REQUIRE(back.records.size() == 2);
  REQUIRE(back.records[0].t == 0);
  REQUIRE(back.records[1].rel_phi_err == 0.25);
}

TEST_CASE("csv parse failures name the offending line", "[reporting]") {
  SECTION("missing header") {
    std::stringstream ss;
    REQUIRE_THROWS_MATCHES(parse_csv(ss), std::invalid_argument,
                           Catch::Matchers::Message("parse_csv: missing header"));
  }

  SECTION("unknown header") {
    std::stringstream ss("time,error\n");
    REQUIRE_THROWS_WITH(parse_csv(ss), Catch::Matchers::ContainsSubstring("unrecognized header"));
  }

  SECTION("wrong field count") {
    std::stringstream ss;
    ss << kCsvHeader << "\n0,1,2,3\n";
    REQUIRE_THROWS_WITH(parse_csv(ss), Catch::Matchers::ContainsSubstring("line 2"));
  }

  SECTION("malformed real") {
    std::stringstream ss;
    ss << kCsvHeader << "\n0,0.5,0.5,4,1,0,0,3\n1,abc,0.5,4,1,0,0,3\n";
    REQUIRE_THROWS_WITH(parse_csv(ss), Catch::Matchers::ContainsSubstring("bad number 'abc' on line 3"));
  }

  SECTION("malformed integer") {
    std::stringstream ss;
    ss << kCsvHeader << "\n1.5,0.5,0.5,4,1,0,0,3\n";
    REQUIRE_THROWS_WITH(parse_csv(ss),
                        Catch::Matchers::ContainsSubstring("bad integer '1.5' on line 2"));
  }
}

TEST_CASE("summaries pick out crossings, tails, and means", "[reporting]") {
  SECTION("hand-built stream") {
    std::vector<ConvergenceRecord> recs;
    const double xs[] = {0.5, 0.2, 0.09, 0.05, 0.009, 0.02};
    const int ks[] = {1, 2, 3, 4, 7, 7};
    const double ws[] = {10, 20, 30, 40, 50, 60};
    for (int i = 0; i < 6; ++i) recs.push_back(make_record(i, 0.5, xs[i], ks[i], 0, 0, 0, ws[i]));
    const RunSummary s = summarize(recs);
    REQUIRE(s.final_rel_x_err == 0.02);
    REQUIRE(s.final_rel_phi_err == 0.5);
    REQUIRE(s.iters_to_1e1.value() == 2);
    REQUIRE(s.iters_to_1e2.value() == 4);
    REQUIRE_FALSE(s.iters_to_1e3.has_value());
    REQUIRE(s.mean_k_bar_tail == 7.0);  // last fifth of 6 records = last 2
    REQUIRE(s.mean_wall_micros == 35.0);
  }

  SECTION("late crossing") {
    std::vector<ConvergenceRecord> recs;
    for (int t = 0; t < 200; ++t)
      recs.push_back(make_record(t, 1.0, t < 137 ? 1.0 : 0.005, 4, 0, 0, 0, 0));
    const RunSummary s = summarize(recs);
    REQUIRE(s.iters_to_1e1.value() == 137);
    REQUIRE(s.iters_to_1e2.value() == 137);
    REQUIRE_FALSE(s.iters_to_1e3.has_value());
  }

  SECTION("empty input refuses") {
    REQUIRE_THROWS_AS(summarize({}), std::invalid_argument);
  }

  SECTION("tail length rounds up") {
    std::vector<ConvergenceRecord> recs;
    for (int t = 0; t < 7; ++t) recs.push_back(make_record(t, 0, 1.0, t, 0, 0, 0, 0));
    // ceil(7/5) = 2 -> mean of k_bar 5 and 6.
    REQUIRE(summarize(recs).mean_k_bar_tail == 5.5);
  }
}

TEST_CASE("csv files survive a disk round-trip", "[reporting]") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "bilevel_reporting_test";
  fs::create_directories(dir);
  const std::string path = (dir / "run.csv").string();

  std::vector<ConvergenceRecord> recs;
  recs.push_back(make_record(0, 0.5, 1.0 / 7.0, 3, -1e-9, 2.0, 0.125, 11.0, 6.0, 5.0));
  recs.push_back(make_record(1, 0.25, 1.0 / 9.0, 3, 1e9, -2.0, 0.0625, 13.0, 7.0, 6.0));
  write_csv_file(path, recs, /*timing_columns=*/true);

  const ParsedCsv back = read_csv_file(path);
  REQUIRE(back.timing_columns);
  REQUIRE(back.records.size() == 2);
  for (std::size_t i = 0; i < recs.size(); ++i) REQUIRE(records_equal(back.records[i], recs[i]));
  fs::remove_all(dir);
}

TEST_CASE("csv file errors are reported", "[reporting]") {
  REQUIRE_THROWS_AS(write_csv_file("/nonexistent_dir_zz/run.csv", {}), std::runtime_error);
  REQUIRE_THROWS_AS(read_csv_file("/nonexistent_dir_zz/run.csv"), std::runtime_error);
}
