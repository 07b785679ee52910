#include "replin/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>

#include "replin/dependence.hpp"
#include "replin/rng.hpp"

namespace replin::experiments {

namespace {

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

Mat subsample_rows(const Mat& x, Eigen::Index cap) {
  if (x.rows() <= cap) return x;
  const Eigen::Index stride = x.rows() / cap;
  Mat out(cap, x.cols());
  for (Eigen::Index i = 0; i < cap; ++i) out.row(i) = x.row(i * stride);
  return out;
}

Mat gather_rows(const Mat& x, const std::vector<Eigen::Index>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = x.row(rows[i]);
  return out;
}

// Mean JS divergence between the interventional feature distributions of the
// stable attribute across the two values of the intervened attribute, holding
// the stable attribute's own label fixed.
double windmill_feature_js(const training::MlpModel& model,
                           const scm::RegimeDataset& ds) {
  const auto& a = ds.attr("A").values;
  const auto& b = ds.attr("B").values;
  const Mat feats = model.forward(ds.x).features.at("A");
  double total = 0.0;
  int used = 0;
  for (int av = 0; av < 2; ++av) {
    std::vector<Eigen::Index> lo, hi;
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
      if (std::lround(a(i, 0)) != av) continue;
      (std::lround(b(i, 0)) == 0 ? lo : hi).push_back(i);
    }
    if (lo.size() < 2 || hi.size() < 2) continue;
    total += metrics::js_divergence_binned(gather_rows(feats, lo),
                                           gather_rows(feats, hi));
    ++used;
  }
  return used > 0 ? total / used : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

MethodSpec method_from_name(const std::string& name) {
  std::string m = name;
  std::transform(m.begin(), m.end(), m.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (m == "erm") return {m, false, false};
  if (m == "erm-resampled") return {m, true, false};
  if (m == "replin") return {m, false, true};
  if (m == "replin-resampled") return {m, true, true};
  throw Error("invalid config", "unknown method: " + name);
}

std::uint64_t data_seed(const RunPlan& plan) {
  const auto beta_key = static_cast<std::uint64_t>(std::llround(plan.beta * 1e9));
  return stream_key(plan.seed, plan.experiment, beta_key);
}

std::uint64_t run_seed(const RunPlan& plan) {
  return stream_key(data_seed(plan), plan.method);
}

std::string run_name(const RunPlan& plan) {
  return plan.experiment + "-" + method_from_name(plan.method).name + "-b" +
         fmt_g(plan.beta) + "-s" + std::to_string(plan.seed);
}

generators::Bundle make_bundle(const std::string& experiment) {
  if (experiment == "windmill") return generators::windmill();
  if (experiment == "fivevar") return generators::fivevar();
  if (experiment == "linear2") return generators::linear2();
  if (experiment == "highdim") return generators::highdim_linear();
  throw Error("invalid config", "unknown experiment: " + experiment);
}

training::TrainData make_data(const RunPlan& plan, const generators::Bundle& bundle) {
  if (!(plan.beta > 0.0 && plan.beta < 1.0))
    throw Error("invalid distribution parameter", "beta must lie in (0, 1)");
  if (plan.n_train < 2 || plan.n_eval < 1)
    throw Error("invalid distribution parameter", "sample counts too small");

  std::vector<std::string> targets;
  for (const auto& [name, dist] : bundle.intervention_marginals) targets.push_back(name);
  if (targets.empty()) throw Error("degenerate SCM", "no intervention targets");

  const auto n_targets = static_cast<std::int64_t>(targets.size());
  std::int64_t n_int = std::llround(plan.beta * static_cast<double>(plan.n_train));
  n_int = std::max(n_int, n_targets);
  const std::int64_t n_obs = plan.n_train - n_int;
  if (n_obs < 1)
    throw Error("invalid distribution parameter", "beta leaves no observational data");

  const std::uint64_t dseed = data_seed(plan);
  training::TrainData data;
  data.train_obs = bundle.graph.sample(n_obs, stream_key(dseed, "train-obs"));
  data.eval_obs = bundle.graph.sample(plan.n_eval, stream_key(dseed, "eval-obs"));
  const std::int64_t base = n_int / n_targets;
  const std::int64_t rem = n_int % n_targets;
  for (std::int64_t i = 0; i < n_targets; ++i) {
    const auto graph = bundle.intervened(targets[static_cast<std::size_t>(i)]);
    const std::int64_t n_i = base + (i < rem ? 1 : 0);
    const auto u = static_cast<std::uint64_t>(i);
    data.train_ints.push_back(graph.sample(n_i, stream_key(dseed, "train-int", u)));
    data.eval_ints.push_back(graph.sample(plan.n_eval, stream_key(dseed, "eval-int", u)));
  }
  return data;
}

training::ModelSpec make_model_spec(const RunPlan& plan, const training::TrainData& data) {
  const MethodSpec method = method_from_name(plan.method);
  training::ModelSpec spec;
  spec.input_dim = static_cast<int>(data.train_obs.x.cols());
  spec.trunk_widths = plan.trunk_widths;
  for (const auto& name : data.train_obs.attr_names) {
    const auto& av = data.train_obs.attr(name);
    training::HeadSpec h;
    h.extractor_widths = plan.extractor_widths;
    h.feature_dim = method.replin ? plan.replin_feature_dim : plan.erm_feature_dim;
    h.normalize = method.replin ? true : plan.erm_normalize;
    if (av.kind == scm::AttrKind::Class) {
      h.num_classes = av.num_classes;
    } else {
      h.num_classes = 0;
      h.regression_dim = static_cast<int>(av.values.cols());
    }
    spec.heads[name] = h;
  }
  return spec;
}

training::ParentSets parent_sets(const generators::Bundle& bundle) {
  training::ParentSets out;
  for (const auto& [target, dist] : bundle.intervention_marginals) {
    auto it = bundle.attr_parents.find(target);
    if (it == bundle.attr_parents.end() || it->second.empty()) continue;
    out[target] = it->second;
  }
  return out;
}

RunOutput run(const RunPlan& plan) {
  const generators::Bundle bundle = make_bundle(plan.experiment);
  const training::TrainData data = make_data(plan, bundle);
  return run_with_data(plan, bundle, data);
}

RunOutput run_with_data(const RunPlan& plan, const generators::Bundle& bundle,
                        const training::TrainData& data) {
  const MethodSpec method = method_from_name(plan.method);
  training::TrainConfig cfg = plan.train;
  cfg.beta = plan.beta;
  cfg.resampled = method.resampled;
  cfg.seed = run_seed(plan);
  if (!method.replin) {
    cfg.lambda_dep = 0.0;
    cfg.lambda_self = 0.0;
  }

  const training::ModelSpec spec = make_model_spec(plan, data);
  const training::ParentSets parents = parent_sets(bundle);
  training::TrainResult result = training::train(spec, data, cfg, parents);

  const std::string run_base = run_name(plan);
  const bool multi = data.eval_ints.size() > 1;
  const auto acc_obs = training::evaluate_accuracy(result.model, data.eval_obs);

  std::vector<metrics::RunRecord> records;
  for (std::size_t t = 0; t < data.eval_ints.size(); ++t) {
    const auto& ds = data.eval_ints[t];
    metrics::RunRecord rec;
    rec.experiment = plan.experiment;
    rec.method = method.name;
    rec.beta = plan.beta;
    rec.seed = plan.seed;
    rec.eval_target = multi ? ds.intervened : std::string();
    rec.run_id = multi ? run_base + "-t" + ds.intervened : run_base;
    rec.acc_obs = acc_obs;
    rec.acc_int = training::evaluate_accuracy(result.model, ds);
    for (const auto& [name, head] : spec.heads) {
      if (head.num_classes <= 0) continue;
      const double obs = rec.acc_obs.at(name);
      if (obs > 0.0) rec.rel_delta[name] = metrics::rel_delta(obs, rec.acc_int.at(name));
    }
    auto pit = parents.find(ds.intervened);
    if (pit != parents.end() && !pit->second.empty()) {
      const Mat xs = subsample_rows(ds.x, 2000);
      const auto fwd = result.model.forward(xs);
      const auto spec_rbf = dependence::KernelSpec::rbf_median();
      double nh = 0.0, kc = 0.0;
      for (const auto& parent : pit->second) {
        const Mat& fp = fwd.features.at(parent);
        const Mat& ft = fwd.features.at(ds.intervened);
        nh += dependence::nhsic(fp, ft, spec_rbf, spec_rbf);
        kc += dependence::kcc(fp, ft, spec_rbf, spec_rbf);
      }
      rec.nhsic_int = nh / static_cast<double>(pit->second.size());
      rec.kcc_int = kc / static_cast<double>(pit->second.size());
    }
    if (plan.experiment == "windmill") {
      rec.js_int = windmill_feature_js(result.model, ds);
    }
    rec.train_seconds = result.eval.train_seconds;
    rec.epochs = result.eval.epochs;
    records.push_back(std::move(rec));
  }
  return RunOutput{std::move(records), std::move(result), cfg};
}

std::vector<metrics::RunRecord> run_sweep(
    const SweepPlan& plan, int jobs,
    const std::function<void(const metrics::RunRecord&)>& on_record) {
  RunPlan base;
  base.experiment = "windmill";
  base.method = "erm-resampled";
  base.beta = plan.beta;
  base.seed = plan.seed;
  base.n_train = plan.n_train;
  base.n_eval = plan.n_eval;
  base.train.batch_size = plan.batch_size;
  base.train.lr = plan.lr;
  base.erm_feature_dim = 1;
  base.erm_normalize = false;

  const generators::Bundle bundle = make_bundle(base.experiment);
  const training::TrainData data = make_data(base, bundle);

  auto plan_for = [&](int i) {
    CounterRng rng(stream_key(plan.seed, "sweep-model", static_cast<std::uint64_t>(i)));
    const int span_l = plan.max_layers - plan.min_layers + 1;
    const int span_w = plan.max_width - plan.min_width + 1;
    const int span_e = plan.max_epochs - plan.min_epochs + 1;
    const int layers = plan.min_layers +
                       static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span_l)));
    const int width = plan.min_width +
                      static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span_w)));
    const int epochs = plan.min_epochs +
                       static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span_e)));
    RunPlan p = base;
    p.seed = static_cast<std::uint64_t>(i);  // init/batch stream; data stays shared
    p.extractor_widths.assign(static_cast<std::size_t>(layers), width);
    p.train.epochs = epochs;
    return p;
  };

  auto run_one = [&](int i) {
    RunOutput out = run_with_data(plan_for(i), bundle, data);
    return out.records.at(0);
  };

  const int n = plan.n_models;
  std::vector<metrics::RunRecord> records;
  records.reserve(static_cast<std::size_t>(n));

  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) {
      records.push_back(run_one(i));
      if (on_record) on_record(records.back());
    }
    return records;
  }

  std::vector<std::optional<metrics::RunRecord>> slots(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  std::mutex emit_mu;
  int emitted = 0;

  auto emit_ready = [&]() {  // caller holds emit_mu
    while (emitted < n && slots[static_cast<std::size_t>(emitted)]) {
      const auto e = static_cast<std::size_t>(emitted);
      if (on_record && !errors[e]) on_record(*slots[e]);
      ++emitted;
    }
  };

  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      const auto idx = static_cast<std::size_t>(i);
      try {
        auto rec = run_one(i);
        std::lock_guard<std::mutex> lock(emit_mu);
        slots[idx] = std::move(rec);
        emit_ready();
      } catch (...) {
        std::lock_guard<std::mutex> lock(emit_mu);
        errors[idx] = std::current_exception();
        slots[idx] = metrics::RunRecord{};  // placeholder so the cursor moves
        emit_ready();
      }
    }
  };

  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  for (auto& slot : slots) records.push_back(std::move(*slot));
  return records;
}

}  // namespace replin::experiments
