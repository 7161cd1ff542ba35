#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace icjm {

using Vec = Eigen::VectorXd;

enum class CensoringStatus { Exact, Left, Right, Interval };

std::string to_string(CensoringStatus s);

// classify from interval endpoints (t_right may be +inf)
CensoringStatus classify_interval(double t_left, double t_right);

struct LongRecord {
  double time = 0.0;
  Vec values;  // length q, noise-contaminated covariate measurements
};

struct Subject {
  std::string id;
  double t_left = 0.0;
  double t_right = 0.0;  // +inf for right censoring
  CensoringStatus status = CensoringStatus::Right;
  Vec x;           // time-fixed Cox covariates, length p
  Vec long_fixed;  // baseline covariates entering the longitudinal design, length pz
  std::vector<LongRecord> longitudinal;  // sorted by time, strictly increasing

  // the time the survival terms are evaluated at (largest finite endpoint)
  double obs_time() const { return status == CensoringStatus::Right ? t_left : t_right; }
};

struct Dataset {
  std::vector<Subject> subjects;
  int p = 0;   // time-fixed covariate count
  int q = 0;   // longitudinal covariate count
  int pz = 0;  // baseline covariates in the longitudinal design

  int n() const { return static_cast<int>(subjects.size()); }
  int n0() const;       // non-right-censored count
  int total_obs() const;  // N = sum n_i
  std::uint64_t digest() const;
};

struct CsvSchema {
  std::string id = "id";
  std::string start = "start";
  std::string end = "end";
  std::string status = "status";
  // empty: auto-detected from header prefixes z/x/w followed by digits
  std::vector<std::string> z_cols;
  std::vector<std::string> x_cols;
  std::vector<std::string> w_cols;
};

// Long-format reader. Status-0 rows contribute longitudinal records at their
// start time; the terminal row of each id fixes the event interval. A trailing
// status-0 row means right censoring at its end time ("inf"/empty accepted).
Dataset parse_long_csv(const std::string& path, const CsvSchema& schema = {});
Dataset parse_long_csv_text(const std::string& text, const CsvSchema& schema = {});
void write_long_csv(const Dataset& ds, const std::string& path);
std::string write_long_csv_text(const Dataset& ds);

struct ValidationReport {
  std::vector<std::string> findings;
  bool ok() const { return findings.empty(); }
};

ValidationReport validate(const Dataset& ds);

// Comparator preprocessing: interval subjects become exact events at the
// interval midpoint, left-censored at t_right/2, right-censored unchanged.
// Longitudinal records after the imputed time are dropped.
Dataset midpoint_impute(const Dataset& ds);

}  // namespace icjm
