#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "replin/experiments.hpp"

using replin::Error;
using replin::Mat;
namespace scm = replin::scm;
using namespace replin::experiments;

namespace {

RunPlan tiny_windmill(const std::string& method) {
  RunPlan plan;
  plan.experiment = "windmill";
  plan.method = method;
  plan.beta = 0.25;
  plan.seed = 2;
  plan.n_train = 400;
  plan.n_eval = 300;
  plan.train.epochs = 8;
  plan.train.batch_size = 128;
  plan.extractor_widths = {8};
  return plan;
}

}  // namespace

TEST_CASE("method names parse case-insensitively and reject unknowns") {
  auto m = method_from_name("erm");
  CHECK(m.name == "erm");
  CHECK_FALSE(m.resampled);
  CHECK_FALSE(m.replin);

  m = method_from_name("ERM-Resampled");
  CHECK(m.name == "erm-resampled");
  CHECK(m.resampled);
  CHECK_FALSE(m.replin);

  m = method_from_name("replin");
  CHECK_FALSE(m.resampled);
  CHECK(m.replin);

  m = method_from_name("REPLIN-RESAMPLED");
  CHECK(m.name == "replin-resampled");
  CHECK(m.resampled);
  CHECK(m.replin);

  CHECK_THROWS_WITH_AS(method_from_name("sgd"), doctest::Contains("invalid config"),
                       Error);
}

TEST_CASE("data seeds ignore the method while run seeds do not") {
  RunPlan erm = tiny_windmill("erm");
  RunPlan rep = tiny_windmill("replin-resampled");
  CHECK(data_seed(erm) == data_seed(rep));
  CHECK(run_seed(erm) != run_seed(rep));

  RunPlan other_beta = erm;
  other_beta.beta = 0.26;
  CHECK(data_seed(erm) != data_seed(other_beta));
  RunPlan other_seed = erm;
  other_seed.seed = 3;
  CHECK(data_seed(erm) != data_seed(other_seed));
  RunPlan other_exp = erm;
  other_exp.experiment = "fivevar";
  CHECK(data_seed(erm) != data_seed(other_exp));

  // Identical splits for competing methods, down to the sampled values.
  const auto bundle = make_bundle("windmill");
  const auto d1 = make_data(erm, bundle);
  const auto d2 = make_data(rep, bundle);
  CHECK(d1.train_obs.x == d2.train_obs.x);
  CHECK(d1.train_ints[0].x == d2.train_ints[0].x);
  CHECK(d1.eval_obs.x == d2.eval_obs.x);
  CHECK(d1.train_obs.attr("A").values == d2.train_obs.attr("A").values);
}

TEST_CASE("run names spell out the experiment, method, beta, and seed") {
  RunPlan plan = tiny_windmill("erm");
  plan.beta = 0.1;
  plan.seed = 3;
  CHECK(run_name(plan) == "windmill-erm-b0.1-s3");

  plan.method = "REPLIN";
  plan.beta = 0.25;
  plan.seed = 0;
  CHECK(run_name(plan) == "windmill-replin-b0.25-s0");

  plan.experiment = "fivevar";
  plan.method = "erm-resampled";
  plan.beta = 0.01;
  plan.seed = 12;
  CHECK(run_name(plan) == "fivevar-erm-resampled-b0.01-s12");
}

TEST_CASE("make_data splits train samples by the interventional fraction") {
  const auto windmill = make_bundle("windmill");
  RunPlan plan = tiny_windmill("erm");
  plan.n_train = 1000;
  plan.n_eval = 150;
  plan.beta = 0.2;

  const auto data = make_data(plan, windmill);
  CHECK(data.train_obs.n() == 800);
  CHECK(data.train_obs.regime == scm::Regime::Observational);
  REQUIRE(data.train_ints.size() == 1);
  CHECK(data.train_ints[0].n() == 200);
  CHECK(data.train_ints[0].regime == scm::Regime::Intervened);
  CHECK(data.train_ints[0].intervened == "B");
  CHECK(data.eval_obs.n() == 150);
  REQUIRE(data.eval_ints.size() == 1);
  CHECK(data.eval_ints[0].n() == 150);
  CHECK(data.eval_ints[0].intervened == "B");

  // At least one interventional sample per target even at tiny beta.
  plan.beta = 1e-4;
  const auto scarce = make_data(plan, windmill);
  CHECK(scarce.train_ints[0].n() == 1);
  CHECK(scarce.train_obs.n() == 999);

  // Several targets share the interventional budget, remainder first.
  const auto fv = make_bundle("fivevar");
  RunPlan fplan = plan;
  fplan.experiment = "fivevar";
  fplan.beta = 0.5;
  fplan.n_train = 10;
  fplan.n_eval = 6;
  const auto fdata = make_data(fplan, fv);
  REQUIRE(fdata.train_ints.size() == 3);
  CHECK(fdata.train_obs.n() == 5);
  CHECK(fdata.train_ints[0].intervened == "C");
  CHECK(fdata.train_ints[1].intervened == "D");
  CHECK(fdata.train_ints[2].intervened == "E");
  CHECK(fdata.train_ints[0].n() == 2);
  CHECK(fdata.train_ints[1].n() == 2);
  CHECK(fdata.train_ints[2].n() == 1);

  RunPlan bad = plan;
  bad.beta = 0.0;
  CHECK_THROWS_WITH_AS(make_data(bad, windmill),
                       doctest::Contains("invalid distribution parameter"), Error);
  bad.beta = 1.0;
  CHECK_THROWS_WITH_AS(make_data(bad, windmill),
                       doctest::Contains("invalid distribution parameter"), Error);
  bad.beta = 0.5;
  bad.n_train = 1;
  CHECK_THROWS_WITH_AS(make_data(bad, windmill),
                       doctest::Contains("invalid distribution parameter"), Error);
  RunPlan starve = plan;
  starve.beta = 0.999;
  starve.n_train = 10;
  CHECK_THROWS_WITH_AS(make_data(starve, windmill),
                       doctest::Contains("no observational data"), Error);
}

TEST_CASE("model specs follow the attribute kinds and the method family") {
  const auto bundle = make_bundle("windmill");
  RunPlan plan = tiny_windmill("erm");
  plan.n_train = 40;
  plan.n_eval = 10;
  const auto data = make_data(plan, bundle);

  const auto erm_spec = make_model_spec(plan, data);
  CHECK(erm_spec.input_dim == 2);
  REQUIRE(erm_spec.heads.size() == 2);
  CHECK(erm_spec.heads.at("A").num_classes == 2);
  CHECK(erm_spec.heads.at("B").num_classes == 2);
  CHECK(erm_spec.heads.at("A").feature_dim == 1);
  CHECK_FALSE(erm_spec.heads.at("A").normalize);
  CHECK(erm_spec.heads.at("A").extractor_widths == std::vector<int>{8});

  plan.method = "replin";
  const auto rep_spec = make_model_spec(plan, data);
  CHECK(rep_spec.heads.at("A").feature_dim == 2);
  CHECK(rep_spec.heads.at("A").normalize);

  // Real-valued attributes get regression heads.
  const auto lin = make_bundle("linear2");
  RunPlan lplan = plan;
  lplan.experiment = "linear2";
  lplan.method = "erm";
  const auto ldata = make_data(lplan, lin);
  const auto lspec = make_model_spec(lplan, ldata);
  CHECK(lspec.heads.at("A").num_classes == 0);
  CHECK(lspec.heads.at("A").regression_dim == 1);
  CHECK(lspec.heads.at("B").num_classes == 0);

  CHECK_THROWS_WITH_AS(make_bundle("mystery"), doctest::Contains("invalid config"),
                       Error);
}

TEST_CASE("parent sets keep only intervention targets with known parents") {
  const auto wm = parent_sets(make_bundle("windmill"));
  REQUIRE(wm.size() == 1);
  CHECK(wm.at("B") == std::vector<std::string>{"A"});

  const auto fv = parent_sets(make_bundle("fivevar"));
  REQUIRE(fv.size() == 3);
  CHECK(fv.at("C") == std::vector<std::string>({"A", "B"}));
  CHECK(fv.at("D") == std::vector<std::string>({"A", "B"}));
  CHECK(fv.at("E") == std::vector<std::string>({"B", "C"}));
}

TEST_CASE("a run yields one reproducible record per intervention target") {
  RunPlan plan = tiny_windmill("erm");
  plan.train.lambda_dep = 3.0;  // must be ignored by the erm family
  plan.train.lambda_self = 0.5;

  const auto out = run(plan);
  CHECK(out.cfg.lambda_dep == 0.0);
  CHECK(out.cfg.lambda_self == 0.0);
  CHECK_FALSE(out.cfg.resampled);
  CHECK(out.cfg.seed == run_seed(plan));
  CHECK(out.cfg.beta == 0.25);

  REQUIRE(out.records.size() == 1);
  const auto& rec = out.records[0];
  CHECK(rec.experiment == "windmill");
  CHECK(rec.method == "erm");
  CHECK(rec.beta == 0.25);
  CHECK(rec.seed == 2);
  CHECK(rec.eval_target.empty());
  CHECK(rec.run_id == "windmill-erm-b0.25-s2");
  CHECK(rec.acc_obs.count("A") == 1);
  CHECK(rec.acc_obs.count("B") == 1);
  CHECK(rec.acc_int.count("B") == 1);
  CHECK(rec.rel_delta.count("B") == 1);
  CHECK(rec.nhsic_int >= 0.0);
  CHECK(rec.nhsic_int <= 1.0);
  CHECK(rec.kcc_int >= 0.0);
  CHECK(std::isfinite(rec.js_int));
  CHECK(rec.epochs == 8);
  CHECK(rec.train_seconds > 0.0);

  const auto again = run(plan);
  CHECK(again.records[0].acc_obs.at("A") == rec.acc_obs.at("A"));
  CHECK(again.records[0].acc_int.at("B") == rec.acc_int.at("B"));
  CHECK(again.records[0].nhsic_int == rec.nhsic_int);

  // The replin family keeps its dependence weights and resampling flag.
  RunPlan rplan = tiny_windmill("replin-resampled");
  rplan.train.epochs = 2;
  rplan.train.lambda_dep = 3.0;
  rplan.train.lambda_self = 0.5;
  rplan.n_train = 120;
  rplan.n_eval = 80;
  rplan.train.batch_size = 64;
  const auto rout = run(rplan);
  CHECK(rout.cfg.lambda_dep == 3.0);
  CHECK(rout.cfg.lambda_self == 0.5);
  CHECK(rout.cfg.resampled);
  CHECK(rout.records[0].run_id == "windmill-replin-resampled-b0.25-s2");

  // Multi-target experiments emit one record per target with suffixed ids.
  RunPlan fplan;
  fplan.experiment = "fivevar";
  fplan.method = "erm";
  fplan.beta = 0.5;
  fplan.seed = 1;
  fplan.n_train = 300;
  fplan.n_eval = 200;
  fplan.train.epochs = 3;
  fplan.train.batch_size = 128;
  fplan.extractor_widths = {8};
  const auto fout = run(fplan);
  REQUIRE(fout.records.size() == 3);
  CHECK(fout.records[0].eval_target == "C");
  CHECK(fout.records[1].eval_target == "D");
  CHECK(fout.records[2].eval_target == "E");
  CHECK(fout.records[0].run_id == "fivevar-erm-b0.5-s1-tC");
  for (const auto& r : fout.records) {
    CHECK(r.acc_obs.size() == 5);
    CHECK(std::isnan(r.js_int));
    CHECK(r.nhsic_int >= 0.0);
  }

  // Regression experiments report mse instead of accuracy and no rel delta.
  RunPlan lplan;
  lplan.experiment = "linear2";
  lplan.method = "erm";
  lplan.beta = 0.5;
  lplan.n_train = 200;
  lplan.n_eval = 100;
  lplan.train.epochs = 3;
  lplan.train.batch_size = 100;
  lplan.extractor_widths = {4};
  const auto lout = run(lplan);
  REQUIRE(lout.records.size() == 1);
  CHECK(lout.records[0].rel_delta.empty());
  CHECK(lout.records[0].acc_obs.at("A") >= 0.0);
}

TEST_CASE("sweep returns ordered records regardless of parallelism") {
  SweepPlan plan;
  plan.n_train = 240;
  plan.n_eval = 200;
  plan.beta = 0.05;
  plan.n_models = 4;
  plan.min_layers = 1;
  plan.max_layers = 2;
  plan.min_width = 8;
  plan.max_width = 16;
  plan.min_epochs = 2;
  plan.max_epochs = 4;
  plan.batch_size = 120;
  plan.seed = 9;

  std::vector<std::string> seen;
  const auto serial = run_sweep(plan, 1, [&](const replin::metrics::RunRecord& r) {
    seen.push_back(r.run_id);
  });
  REQUIRE(serial.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(serial[static_cast<std::size_t>(i)].run_id.find("-s" + std::to_string(i)) !=
          std::string::npos);
    CHECK(serial[static_cast<std::size_t>(i)].method == "erm-resampled");
    CHECK(serial[static_cast<std::size_t>(i)].epochs >= 2);
    CHECK(serial[static_cast<std::size_t>(i)].epochs <= 4);
  }
  CHECK(seen.size() == 4);

  std::vector<std::string> seen_par;
  const auto parallel = run_sweep(plan, 2, [&](const replin::metrics::RunRecord& r) {
    seen_par.push_back(r.run_id);
  });
  REQUIRE(parallel.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(parallel[i].run_id == serial[i].run_id);
    CHECK(parallel[i].acc_obs.at("A") == serial[i].acc_obs.at("A"));
    CHECK(parallel[i].acc_int.at("B") == serial[i].acc_int.at("B"));
    CHECK(parallel[i].nhsic_int == serial[i].nhsic_int);
    CHECK(parallel[i].epochs == serial[i].epochs);
  }
  CHECK(seen_par == seen);

  // Randomized widths actually vary across the sweep.
  bool any_diff = false;
  for (std::size_t i = 1; i < 4; ++i)
    any_diff = any_diff || serial[i].epochs != serial[0].epochs ||
               serial[i].acc_obs.at("A") != serial[0].acc_obs.at("A");
  CHECK(any_diff);
}
