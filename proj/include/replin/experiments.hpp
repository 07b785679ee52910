#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "replin/common.hpp"
#include "replin/generators.hpp"
#include "replin/metrics.hpp"
#include "replin/training.hpp"

namespace replin::experiments {

struct MethodSpec {
  std::string name;
  bool resampled = false;
  bool replin = false;  // dependence + self-dependence losses active
};

// erm | erm-resampled | replin | replin-resampled
MethodSpec method_from_name(const std::string& name);

struct RunPlan {
  std::string experiment = "windmill";  // windmill | fivevar | highdim
  std::string method = "erm";
  double beta = 0.5;
  std::uint64_t seed = 0;  // seed index; the data split ignores the method
  std::int64_t n_train = 10000;
  std::int64_t n_eval = 10000;
  training::TrainConfig train;  // lambda weights apply to replin methods only
  std::vector<int> trunk_widths;
  std::vector<int> extractor_widths = {40};
  int erm_feature_dim = 1;
  int replin_feature_dim = 2;
  bool erm_normalize = false;
};

// The data split is a function of (experiment, seed, beta) so competing
// methods train on identical samples; the run seed additionally hashes the
// method so initialization and batch order differ.
std::uint64_t data_seed(const RunPlan& plan);
std::uint64_t run_seed(const RunPlan& plan);

// "<experiment>-<method>-b<beta>-s<seed>"; record ids append "-t<target>"
// when the experiment has several intervention targets.
std::string run_name(const RunPlan& plan);

generators::Bundle make_bundle(const std::string& experiment);
training::TrainData make_data(const RunPlan& plan, const generators::Bundle& bundle);
training::ModelSpec make_model_spec(const RunPlan& plan, const training::TrainData& data);
training::ParentSets parent_sets(const generators::Bundle& bundle);

struct RunOutput {
  std::vector<metrics::RunRecord> records;  // one per intervention target
  training::TrainResult detail;
  training::TrainConfig cfg;  // resolved per-run config (seed, lambdas, resampling)
};

RunOutput run(const RunPlan& plan);
RunOutput run_with_data(const RunPlan& plan, const generators::Bundle& bundle,
                        const training::TrainData& data);

struct SweepPlan {
  std::int64_t n_train = 3000;
  std::int64_t n_eval = 6000;
  double beta = 0.01;
  int n_models = 60;
  int min_layers = 1, max_layers = 6;
  int min_width = 20, max_width = 200;
  int min_epochs = 30, max_epochs = 240;
  int batch_size = 1000;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

// Trains n_models ERM-Resampled windmill models with randomized depth, width
// and early-stop epoch on one shared data split; records carry the relative
// accuracy drop and the interventional feature dependence.
std::vector<metrics::RunRecord> run_sweep(
    const SweepPlan& plan, int jobs = 1,
    const std::function<void(const metrics::RunRecord&)>& on_record = {});

}  // namespace replin::experiments
