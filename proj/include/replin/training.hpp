#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "replin/common.hpp"
#include "replin/dependence.hpp"
#include "replin/metrics.hpp"
#include "replin/scm_core.hpp"

namespace replin::training {

struct HeadSpec {
  std::vector<int> extractor_widths = {40};  // hidden widths, ReLU after each
  int feature_dim = 2;
  bool normalize = true;
  int num_classes = 2;     // 0 = regression head
  int regression_dim = 1;  // output width when num_classes is 0
};

struct ModelSpec {
  int input_dim = 0;
  std::vector<int> trunk_widths;  // shared affine+ReLU stack, may be empty
  std::map<std::string, HeadSpec> heads;
};

struct LayerRef {
  std::int64_t w_offset = 0, b_offset = 0;
  int in = 0, out = 0;
};

struct HeadLayout {
  std::vector<LayerRef> extractor;  // hidden layers plus the feature layer
  LayerRef classifier;
};

// Feed-forward model with per-attribute feature heads over an optional shared
// trunk. Parameters live in one flat vector; layers reference slices of it.
class MlpModel {
 public:
  MlpModel(ModelSpec spec, std::uint64_t init_seed);
  MlpModel(ModelSpec spec, Vec params);  // adopt existing parameters

  const ModelSpec& spec() const { return spec_; }
  const Vec& params() const { return params_; }
  Vec& params() { return params_; }
  const std::vector<LayerRef>& trunk_layers() const { return trunk_; }
  const std::map<std::string, HeadLayout>& head_layouts() const { return heads_; }

  struct Forward {
    std::map<std::string, Mat> features;  // post-normalization
    std::map<std::string, Mat> logits;
  };
  Forward forward(const Mat& x) const;

 private:
  void build_layout();

  ModelSpec spec_;
  std::vector<LayerRef> trunk_;
  std::map<std::string, HeadLayout> heads_;
  std::int64_t total_params_ = 0;
  Vec params_;
};

struct TrainConfig {
  double beta = 0.5;
  int epochs = 100;
  int batch_size = 1000;
  double lr = 2e-3;
  std::vector<int> lr_milestones;  // epochs at which lr is multiplied by lr_gamma
  double lr_gamma = 1.0;
  double lambda_dep = 0.0;
  double lambda_self = 0.0;
  double warmup_start_frac = 0.66;
  double warmup_end_frac = 0.99;
  bool resampled = false;
  int rff_features = 64;
  std::uint64_t seed = 0;
};

struct LossBreakdown {
  double pred = 0.0;
  double dep = 0.0;
  double self_dep = 0.0;
  double total = 0.0;
  double lambda_dep_effective = 0.0;
};

// Intervention target -> attribute parents whose features must become
// independent of the target's features on interventional batches.
using ParentSets = std::map<std::string, std::vector<std::string>>;

// Frozen random-feature maps per attribute, fixed at warm-up start so the
// dependence loss stays stationary afterwards.
struct RffBank {
  std::map<std::string, dependence::RffMap> maps;
  bool ready = false;
};

RffBank make_rff_bank(const MlpModel& model, const Mat& probe_x,
                      const std::vector<std::string>& attrs, int n_features,
                      std::uint64_t seed);

// 0 before s*epochs, full lambda_dep from e*epochs, linear ramp between.
double warmup_lambda(const TrainConfig& cfg, int epoch);

LossBreakdown loss_total(const MlpModel& model, const scm::RegimeDataset& batch,
                         const TrainConfig& cfg, int epoch, const RffBank& rff,
                         const ParentSets& parents,
                         std::vector<std::string>* warnings = nullptr);

// Exact gradient of loss_total with respect to the flat parameter vector.
Vec gradient(const MlpModel& model, const scm::RegimeDataset& batch,
             const TrainConfig& cfg, int epoch, const RffBank& rff,
             const ParentSets& parents, LossBreakdown* breakdown = nullptr,
             std::vector<std::string>* warnings = nullptr);

struct BatchRef {
  int source = -1;  // -1 observational, otherwise index into the int list
  std::vector<Eigen::Index> rows;
};

// Single-regime batches for one epoch. Vanilla: every sample exactly once,
// batch order shuffled. Resampled: interventional batches mirror the
// observational batch sizes and draw with replacement, regimes round-robin.
std::vector<BatchRef> make_batches(const scm::RegimeDataset& obs,
                                   const std::vector<scm::RegimeDataset>& ints,
                                   const TrainConfig& cfg, std::uint64_t epoch_seed);

scm::RegimeDataset take_rows(const scm::RegimeDataset& ds,
                             const std::vector<Eigen::Index>& rows);

struct TrainData {
  scm::RegimeDataset train_obs;
  std::vector<scm::RegimeDataset> train_ints;
  scm::RegimeDataset eval_obs;
  std::vector<scm::RegimeDataset> eval_ints;
};

struct TrainResult {
  MlpModel model;
  std::vector<LossBreakdown> history;  // one entry per epoch (batch means)
  metrics::RunRecord eval;             // accuracy and dependence fields filled
  std::vector<std::string> warnings;
  bool aborted = false;
  std::string abort_reason;
};

TrainResult train(const ModelSpec& spec, const TrainData& data,
                  const TrainConfig& cfg, const ParentSets& parents);

// Accuracy (percent) of the argmax prediction per class attribute; ties go to
// the lower class index. Regression heads report mean squared error instead.
std::map<std::string, double> evaluate_accuracy(const MlpModel& model,
                                                const scm::RegimeDataset& ds);

void save_checkpoint(const std::string& path, const MlpModel& model,
                     const TrainConfig& cfg, int epoch);

struct Checkpoint {
  ModelSpec spec;
  Vec params;
  TrainConfig cfg;
  int epoch = 0;
};

Checkpoint load_checkpoint(const std::string& path);

void write_history_csv(const std::string& path,
                       const std::vector<LossBreakdown>& history);

}  // namespace replin::training
