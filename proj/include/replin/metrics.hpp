#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "replin/common.hpp"

namespace replin::metrics {

// (acc_obs - acc_int) / acc_obs; requires acc_obs > 0.
double rel_delta(double acc_obs, double acc_int);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// Kendall tau-b (tie-corrected).
double kendall(const std::vector<double>& a, const std::vector<double>& b);

// Jensen-Shannon divergence (natural log, in [0, ln 2]) between two sample
// sets binned on a shared bounding box with equal-width bins. Supports at
// most 4 dimensions. bins_per_dim == 0 picks the default: 64 bins for 1-d
// data, 16 per dimension otherwise.
double js_divergence_binned(const Mat& p, const Mat& q, int bins_per_dim = 0);

struct RunRecord {
  std::string run_id;
  std::string experiment;
  std::string method;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::string eval_target;  // intervention target evaluated; empty if single
  std::map<std::string, double> acc_obs;   // percent per attribute (or MSE for real)
  std::map<std::string, double> acc_int;
  std::map<std::string, double> rel_delta;
  double nhsic_int = std::numeric_limits<double>::quiet_NaN();
  double kcc_int = std::numeric_limits<double>::quiet_NaN();
  double js_int = std::numeric_limits<double>::quiet_NaN();
  double train_seconds = 0.0;
  int epochs = 0;

  std::string to_json() const;
  static RunRecord from_json(const std::string& line);
};

void append_records_jsonl(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> load_records_jsonl(const std::string& path);

// Aggregates records into one row per (method, beta, eval_target) with mean
// and standard deviation columns, and writes summary.csv.
void write_summary_csv(const std::vector<RunRecord>& records, const std::string& path);

struct SweepCorrelation {
  double spearman_rho = 0.0;
  double kendall_tau = 0.0;
  int n = 0;
};

// Correlation between rel_delta of `attr` and a dependence field across runs.
// field is "nhsic" or "kcc". Requires at least 10 records.
SweepCorrelation correlation_sweep(const std::vector<RunRecord>& records,
                                   const std::string& attr,
                                   const std::string& field);

}  // namespace replin::metrics
