#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "replin/config.hpp"
#include "replin/dependence.hpp"
#include "replin/experiments.hpp"
#include "replin/generators.hpp"
#include "replin/linear_theory.hpp"
#include "replin/metrics.hpp"
#include "replin/scm_core.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace replin;

namespace {

dependence::KernelSpec kernel_from(const std::string& kind, double sigma2) {
  if (kind == "linear") return dependence::KernelSpec::linear();
  if (kind == "rbf") return dependence::KernelSpec::rbf(sigma2);
  if (kind == "rbf_median") return dependence::KernelSpec::rbf_median();
  throw Error("invalid distribution parameter", "unknown kernel '" + kind + "'");
}

py::dict record_to_dict(const metrics::RunRecord& r) {
  py::dict d;
  d["run_id"] = r.run_id;
  d["experiment"] = r.experiment;
  d["method"] = r.method;
  d["beta"] = r.beta;
  d["seed"] = r.seed;
  d["eval_target"] = r.eval_target;
  d["acc_obs"] = r.acc_obs;
  d["acc_int"] = r.acc_int;
  d["rel_delta"] = r.rel_delta;
  d["nhsic_int"] = r.nhsic_int;
  d["kcc_int"] = r.kcc_int;
  d["js_int"] = r.js_int;
  d["train_seconds"] = r.train_seconds;
  d["epochs"] = r.epochs;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Representation learning robust to interventional shifts";

  py::register_exception<Error>(m, "ReplinError");

  // ---- data generation ---------------------------------------------------
  m.def(
      "sample",
      [](const std::string& experiment, std::int64_t n, std::uint64_t seed,
         const std::string& intervened) {
        const auto bundle = experiments::make_bundle(experiment);
        const scm::RegimeDataset ds = intervened.empty()
                                          ? bundle.graph.sample(n, seed)
                                          : bundle.intervened(intervened).sample(n, seed);
        py::dict attrs;
        for (const auto& [name, av] : ds.attrs) attrs[py::str(name)] = av.values;
        py::dict out;
        out["x"] = ds.x;
        out["attrs"] = attrs;
        out["intervened"] = ds.intervened;
        return out;
      },
      "experiment"_a, "n"_a, "seed"_a = 0, "intervened"_a = "",
      "Draw n samples from an experiment's causal graph; pass intervened to "
      "sample under a hard intervention on that attribute.");

  m.def(
      "windmill_decode",
      [](double x0, double x1) {
        return generators::windmill_decode(generators::WindmillParams{}, x0, x1);
      },
      "x0"_a, "x1"_a, "Invert the windmill map back to the (a, b) labels.");

  // ---- dependence measures -------------------------------------------------
  m.def("median_heuristic_sigma2", &dependence::median_heuristic_sigma2, "x"_a);
  m.def(
      "hsic",
      [](const Mat& x, const Mat& y, const std::string& kernel, double sigma2) {
        const auto k = kernel_from(kernel, sigma2);
        return dependence::hsic(x, y, k, k);
      },
      "x"_a, "y"_a, "kernel"_a = "rbf_median", "sigma2"_a = 1.0);
  m.def(
      "nhsic",
      [](const Mat& x, const Mat& y, const std::string& kernel, double sigma2) {
        const auto k = kernel_from(kernel, sigma2);
        return dependence::nhsic(x, y, k, k);
      },
      "x"_a, "y"_a, "kernel"_a = "rbf_median", "sigma2"_a = 1.0);
  m.def(
      "kcc",
      [](const Mat& x, const Mat& y, const std::string& kernel, double sigma2,
         double epsilon) {
        const auto k = kernel_from(kernel, sigma2);
        return dependence::kcc(x, y, k, k, epsilon);
      },
      "x"_a, "y"_a, "kernel"_a = "rbf_median", "sigma2"_a = 1.0, "epsilon"_a = 1e-3);
  m.def("linear_dep", &dependence::linear_dep, "fa"_a, "fb"_a);
  m.def(
      "rff_nhsic",
      [](const Mat& x, const Mat& y, int n_features, std::uint64_t seed) {
        const auto mx = dependence::make_rff_map(static_cast<int>(x.cols()), n_features,
                                                 dependence::median_heuristic_sigma2(x),
                                                 stream_key(seed, "x"));
        const auto my = dependence::make_rff_map(static_cast<int>(y.cols()), n_features,
                                                 dependence::median_heuristic_sigma2(y),
                                                 stream_key(seed, "y"));
        return dependence::rff_nhsic(x, y, mx, my);
      },
      "x"_a, "y"_a, "n_features"_a = 64, "seed"_a = 0);

  // ---- evaluation metrics --------------------------------------------------
  m.def("rel_delta", &metrics::rel_delta, "acc_obs"_a, "acc_int"_a);
  m.def("spearman", &metrics::spearman, "a"_a, "b"_a);
  m.def("kendall", &metrics::kendall, "a"_a, "b"_a);
  m.def("js_divergence_binned", &metrics::js_divergence_binned, "p"_a, "q"_a,
        "bins_per_dim"_a = 0);

  // ---- linear theory ---------------------------------------------------
  py::class_<linear_theory::ScmParams>(m, "ScmParams")
      .def(py::init<>())
      .def_readwrite("w_a", &linear_theory::ScmParams::w_a)
      .def_readwrite("w_b", &linear_theory::ScmParams::w_b)
      .def_readwrite("w_ab", &linear_theory::ScmParams::w_ab)
      .def_readwrite("var_a", &linear_theory::ScmParams::var_a)
      .def_readwrite("var_ua", &linear_theory::ScmParams::var_ua)
      .def_readwrite("var_ub", &linear_theory::ScmParams::var_ub)
      .def_readwrite("var_b_int", &linear_theory::ScmParams::var_b_int);
  py::class_<linear_theory::PsiPair>(m, "PsiPair")
      .def_readonly("psi1", &linear_theory::PsiPair::psi1)
      .def_readonly("psi2", &linear_theory::PsiPair::psi2);
  py::class_<linear_theory::RiskBreakdown>(m, "RiskBreakdown")
      .def_readonly("e1", &linear_theory::RiskBreakdown::e1)
      .def_readonly("e2", &linear_theory::RiskBreakdown::e2)
      .def_readonly("total", &linear_theory::RiskBreakdown::total);
  py::class_<linear_theory::SolutionRisks>(m, "SolutionRisks")
      .def_readonly("j1", &linear_theory::SolutionRisks::j1)
      .def_readonly("j2", &linear_theory::SolutionRisks::j2);
  py::class_<linear_theory::Prop1Result>(m, "Prop1Result")
      .def_readonly("cond1", &linear_theory::Prop1Result::cond1)
      .def_readonly("cond2", &linear_theory::Prop1Result::cond2)
      .def_readonly("satisfied", &linear_theory::Prop1Result::satisfied);
  py::class_<linear_theory::MonteCarloRow>(m, "MonteCarloRow")
      .def_readonly("beta", &linear_theory::MonteCarloRow::beta)
      .def_readonly("mean_j1", &linear_theory::MonteCarloRow::mean_j1)
      .def_readonly("mean_j2", &linear_theory::MonteCarloRow::mean_j2)
      .def_readonly("frac_j1_gt_j2", &linear_theory::MonteCarloRow::frac_j1_gt_j2);
  py::class_<linear_theory::FitResult>(m, "FitResult")
      .def_readonly("psi", &linear_theory::FitResult::psi)
      .def_readonly("se1", &linear_theory::FitResult::se1)
      .def_readonly("se2", &linear_theory::FitResult::se2);

  m.def("optimal_erm", &linear_theory::optimal_erm, "params"_a, "beta"_a);
  m.def("solution_risks", &linear_theory::solution_risks, "params"_a, "beta"_a);
  m.def("prop1_check", &linear_theory::prop1_check, "params"_a, "beta"_a);
  m.def("interventional_risk", &linear_theory::interventional_risk, "psi"_a, "params"_a);
  m.def("fit_erm_simulated", &linear_theory::fit_erm_simulated, "params"_a, "beta"_a,
        "n"_a, "seed"_a = 0);
  m.def(
      "monte_carlo_compare",
      [](int n_runs, const std::vector<double>& beta_grid, std::uint64_t seed) {
        return linear_theory::monte_carlo_compare(n_runs, beta_grid,
                                                  linear_theory::ParamSampler{}, seed);
      },
      "n_runs"_a, "beta_grid"_a, "seed"_a = 0);

  // ---- training runs -----------------------------------------------------
  m.def(
      "run_experiment",
      [](const std::string& experiment, const std::string& method, double beta,
         std::uint64_t seed, std::int64_t n_train, std::int64_t n_eval, int epochs,
         int batch_size, double lr, double lambda_dep, double lambda_self,
         double warmup_start_frac, double warmup_end_frac,
         const std::vector<int>& extractor_widths, const std::vector<int>& trunk_widths,
         int rff_features, const std::vector<int>& lr_milestones, double lr_gamma) {
        experiments::RunPlan p;
        p.experiment = experiment;
        p.method = method;
        p.beta = beta;
        p.seed = seed;
        p.n_train = n_train;
        p.n_eval = n_eval;
        p.train.epochs = epochs;
        p.train.batch_size = batch_size;
        p.train.lr = lr;
        p.train.lambda_dep = lambda_dep;
        p.train.lambda_self = lambda_self;
        p.train.warmup_start_frac = warmup_start_frac;
        p.train.warmup_end_frac = warmup_end_frac;
        p.train.rff_features = rff_features;
        p.train.lr_milestones = lr_milestones;
        p.train.lr_gamma = lr_gamma;
        p.extractor_widths = extractor_widths;
        p.trunk_widths = trunk_widths;
        const auto out = experiments::run(p);
        py::list records;
        for (const auto& r : out.records) records.append(record_to_dict(r));
        return records;
      },
      "experiment"_a, "method"_a, "beta"_a = 0.5, "seed"_a = 0, "n_train"_a = 10000,
      "n_eval"_a = 10000, "epochs"_a = 100, "batch_size"_a = 1000, "lr"_a = 2e-3,
      "lambda_dep"_a = 1.0, "lambda_self"_a = 1.0, "warmup_start_frac"_a = 0.66,
      "warmup_end_frac"_a = 0.99, "extractor_widths"_a = std::vector<int>{40},
      "trunk_widths"_a = std::vector<int>{}, "rff_features"_a = 64,
      "lr_milestones"_a = std::vector<int>{}, "lr_gamma"_a = 0.5,
      "Train one model and return the evaluation records (one per intervention "
      "target). The dependence losses apply only to the replin methods.");

  // ---- config --------------------------------------------------------------
  m.def(
      "validate_config",
      [](const std::string& text, bool is_json) {
        const auto j = is_json ? nlohmann::json::parse(text)
                               : config::parse_toml(text, "<string>");
        const auto cfg = config::config_from_json(j);
        config::validate(cfg);
        return config::config_to_json(cfg).dump(2);
      },
      "text"_a, "is_json"_a = false,
      "Parse and validate config text; returns the resolved config as JSON.");
}
