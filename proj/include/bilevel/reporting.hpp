#pragma once

#include "bilevel/numerics.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bilevel {

// One upper-level iteration's progress snapshot, taken before the update.
struct ConvergenceRecord {
  int t = 0;
  double rel_phi_err = 0.0;   // |phi - phi*| / (|phi*| + 1)
  double rel_x_err = 0.0;     // ||x - x*|| / ||x*||, absolute norm when x* = 0
  int k_bar = 0;              // selected lower-level index
  double surrogate_value = 0.0;
  double ll_final_f = 0.0;
  double residual_min = 0.0;
  double wall_micros = 0.0;
  double fwd_micros = 0.0;
  double bwd_micros = 0.0;
};

inline constexpr const char* kCsvHeader =
    "t,rel_phi_err,rel_x_err,k_bar,surrogate_value,ll_final_f,residual_min,wall_micros";
inline constexpr const char* kCsvHeaderTimed =
    "t,rel_phi_err,rel_x_err,k_bar,surrogate_value,ll_final_f,residual_min,wall_micros,"
    "fwd_micros,bwd_micros";

inline void emit_csv(std::ostream& out, const std::vector<ConvergenceRecord>& records,
                     bool timing_columns = false) {
  out << (timing_columns ? kCsvHeaderTimed : kCsvHeader) << '\n';
  char buf[340];
  for (const ConvergenceRecord& r : records) {
    int n = std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g", r.t,
                          r.rel_phi_err, r.rel_x_err, r.k_bar, r.surrogate_value, r.ll_final_f,
                          r.residual_min, r.wall_micros);
    if (timing_columns)
      std::snprintf(buf + n, sizeof(buf) - n, ",%.17g,%.17g", r.fwd_micros, r.bwd_micros);
    out << buf << '\n';
  }
}

struct ParsedCsv {
  std::vector<ConvergenceRecord> records;
  bool timing_columns = false;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_csv_double(const std::string& s, int line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw std::invalid_argument("parse_csv: bad number '" + s + "' on line " +
                                std::to_string(line_no));
  return v;
}

inline int parse_csv_int(const std::string& s, int line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  if (end == begin || *end != '\0')
    throw std::invalid_argument("parse_csv: bad integer '" + s + "' on line " +
                                std::to_string(line_no));
  return static_cast<int>(v);
}
}  // namespace detail

inline ParsedCsv parse_csv(std::istream& in) {
  ParsedCsv out;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("parse_csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line == kCsvHeaderTimed)
    out.timing_columns = true;
  else if (line != kCsvHeader)
    throw std::invalid_argument("parse_csv: unrecognized header '" + line + "'");
  const std::size_t want = out.timing_columns ? 10 : 8;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != want)
      throw std::invalid_argument("parse_csv: expected " + std::to_string(want) +
                                  " fields on line " + std::to_string(line_no) + ", got " +
                                  std::to_string(f.size()));
    ConvergenceRecord r;
    r.t = detail::parse_csv_int(f[0], line_no);
    r.rel_phi_err = detail::parse_csv_double(f[1], line_no);
    r.rel_x_err = detail::parse_csv_double(f[2], line_no);
    r.k_bar = detail::parse_csv_int(f[3], line_no);
    r.surrogate_value = detail::parse_csv_double(f[4], line_no);
    r.ll_final_f = detail::parse_csv_double(f[5], line_no);
    r.residual_min = detail::parse_csv_double(f[6], line_no);
    r.wall_micros = detail::parse_csv_double(f[7], line_no);
    if (out.timing_columns) {
      r.fwd_micros = detail::parse_csv_double(f[8], line_no);
      r.bwd_micros = detail::parse_csv_double(f[9], line_no);
    }
    out.records.push_back(r);
  }
  return out;
}

// Digest of one run's record stream.
struct RunSummary {
  double final_rel_phi_err = 0.0;
  double final_rel_x_err = 0.0;
  std::optional<int> iters_to_1e1;  // first t with rel_x_err <= 1e-1
  std::optional<int> iters_to_1e2;
  std::optional<int> iters_to_1e3;
  double mean_k_bar_tail = 0.0;  // mean selected index over the last fifth
  double mean_wall_micros = 0.0;
};

inline RunSummary summarize(const std::vector<ConvergenceRecord>& records) {
  if (records.empty()) throw std::invalid_argument("summarize: no records");
  RunSummary s;
  s.final_rel_phi_err = records.back().rel_phi_err;
  s.final_rel_x_err = records.back().rel_x_err;
  auto first_below = [&](double thresh) -> std::optional<int> {
    for (const ConvergenceRecord& r : records)
      if (r.rel_x_err <= thresh) return r.t;
    return std::nullopt;
  };
  s.iters_to_1e1 = first_below(1e-1);
  s.iters_to_1e2 = first_below(1e-2);
  s.iters_to_1e3 = first_below(1e-3);
  const std::size_t n = records.size();
  const std::size_t tail = (n + 4) / 5;
  double k_sum = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) k_sum += records[i].k_bar;
  s.mean_k_bar_tail = k_sum / static_cast<double>(tail);
  double w_sum = 0.0;
  for (const ConvergenceRecord& r : records) w_sum += r.wall_micros;
  s.mean_wall_micros = w_sum / static_cast<double>(n);
  return s;
}

inline void write_csv_file(const std::string& path, const std::vector<ConvergenceRecord>& records,
                           bool timing_columns = false) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv_file: cannot open " + path);
  emit_csv(out, records, timing_columns);
  out.flush();
  if (!out) throw std::runtime_error("write_csv_file: write failed for " + path);
}

inline ParsedCsv read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv_file: cannot open " + path);
  return parse_csv(in);
}

}  // namespace bilevel
