#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "replin/experiments.hpp"
#include "replin/linear_theory.hpp"
#include "replin/training.hpp"

namespace replin::config {

// Key-value config text with [section] and [[expect]] tables; values are
// strings, numbers, booleans and flat same-line arrays. Errors carry
// "<origin>:<line>: <message>".
nlohmann::json parse_toml(const std::string& text, const std::string& origin);

// Dispatches on extension: .json files go through the JSON parser, everything
// else through parse_toml.
nlohmann::json load_file(const std::string& path);

// Assertion evaluated against the produced run records; any filter left unset
// matches everything.
struct ExpectBlock {
  std::string metric;  // acc_obs | acc_int | rel_delta | nhsic_int | kcc_int | js_int
  std::string attr;    // required for the per-attribute metrics
  std::string method;
  std::string target;
  std::optional<double> beta;
  std::string agg = "mean";  // mean | min | max
  std::optional<double> min;
  std::optional<double> max;
};

struct TheoryParams {
  int n_runs = 5000;
  int beta_points = 50;
  std::vector<double> beta_grid;  // overrides beta_points when nonempty
  std::uint64_t seed = 0;
  linear_theory::ParamSampler sampler;
};

struct LinearParams {
  std::int64_t n = 50000;
  int n_seeds = 50;
  double lambda_dep = 10.0;
  int feature_dim = 2;
  linear_theory::ScmParams scm;
};

struct ExperimentConfig {
  std::string experiment = "windmill";
  std::vector<std::string> methods;
  std::vector<double> beta_list;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";
  std::int64_t n_train = 10000;
  std::int64_t n_eval = 10000;

  training::TrainConfig train;

  std::vector<int> trunk_widths;
  std::vector<int> extractor_widths = {40};
  int erm_feature_dim = 1;
  int replin_feature_dim = 2;
  bool erm_normalize = false;

  experiments::SweepPlan sweep;
  TheoryParams theory;
  LinearParams linear;
  std::vector<ExpectBlock> expects;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);  // resolved round-trip

ExperimentConfig load(const std::string& path);

// Cross-field checks; throws Error("invalid config", ...) naming the fields.
void validate(const ExperimentConfig& cfg);

}  // namespace replin::config
