#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "replin/config.hpp"
#include "replin/rng.hpp"
#include "replin/scm_core.hpp"

namespace fs = std::filesystem;
using replin::Error;
using replin::config::ExpectBlock;
using replin::config::ExperimentConfig;
using replin::metrics::RunRecord;

namespace {

struct Options {
  std::string config_path;
  std::string output_override;
  int jobs = 1;
  std::int64_t seed_offset = 0;
};

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("io error", "cannot open " + path.string());
  f << content;
}

ExperimentConfig load_config(const Options& opt) {
  ExperimentConfig cfg = replin::config::load(opt.config_path);
  replin::config::validate(cfg);
  if (!opt.output_override.empty()) cfg.output_dir = opt.output_override;
  if (opt.seed_offset != 0) {
    const auto off = static_cast<std::uint64_t>(opt.seed_offset);
    for (auto& s : cfg.seeds) s += off;
    cfg.sweep.seed += off;
    cfg.theory.seed += off;
  }
  return cfg;
}

void write_resolved_config(const ExperimentConfig& cfg) {
  write_text(fs::path(cfg.output_dir) / "config.json",
             replin::config::config_to_json(cfg).dump(2) + "\n");
}

// ---- expect blocks ------------------------------------------------------

std::optional<double> metric_value(const RunRecord& r, const ExpectBlock& b) {
  const std::map<std::string, double>* m = nullptr;
  if (b.metric == "acc_obs") m = &r.acc_obs;
  if (b.metric == "acc_int") m = &r.acc_int;
  if (b.metric == "rel_delta") m = &r.rel_delta;
  if (m) {
    const auto it = m->find(b.attr);
    if (it == m->end()) return std::nullopt;
    return it->second;
  }
  double v = std::numeric_limits<double>::quiet_NaN();
  if (b.metric == "nhsic_int") v = r.nhsic_int;
  if (b.metric == "kcc_int") v = r.kcc_int;
  if (b.metric == "js_int") v = r.js_int;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

bool matches(const RunRecord& r, const ExpectBlock& b) {
  if (!b.method.empty() && r.method != b.method) return false;
  if (!b.target.empty() && r.eval_target != b.target) return false;
  if (b.beta && std::abs(r.beta - *b.beta) > 1e-12) return false;
  return true;
}

// Prints one line per block; returns false if any block fails.
bool evaluate_expects(const ExperimentConfig& cfg, const std::vector<RunRecord>& records) {
  bool all_ok = true;
  for (std::size_t i = 0; i < cfg.expects.size(); ++i) {
    const auto& b = cfg.expects[i];
    std::vector<double> vals;
    for (const auto& r : records) {
      if (!matches(r, b)) continue;
      if (const auto v = metric_value(r, b)) vals.push_back(*v);
    }
    std::string label = "expect[" + std::to_string(i) + "] " + b.metric;
    if (!b.attr.empty()) label += "[" + b.attr + "]";
    if (!b.method.empty()) label += " method=" + b.method;
    if (b.beta) label += " beta=" + fmt_g(*b.beta);
    if (!b.target.empty()) label += " target=" + b.target;
    if (vals.empty()) {
      std::cout << label << ": FAIL (no matching records)\n";
      all_ok = false;
      continue;
    }
    double v = 0.0;
    if (b.agg == "mean") {
      for (double x : vals) v += x;
      v /= static_cast<double>(vals.size());
    } else if (b.agg == "min") {
      v = *std::min_element(vals.begin(), vals.end());
    } else {
      v = *std::max_element(vals.begin(), vals.end());
    }
    const bool ok = (!b.min || v >= *b.min) && (!b.max || v <= *b.max);
    std::string bounds = "[";
    bounds += b.min ? fmt_g(*b.min) : std::string("-inf");
    bounds += ", ";
    bounds += b.max ? fmt_g(*b.max) : std::string("inf");
    bounds += "]";
    std::cout << label << " " << b.agg << "=" << fmt_g(v) << " over " << vals.size()
              << " records, bounds " << bounds << ": " << (ok ? "PASS" : "FAIL") << "\n";
    all_ok = all_ok && ok;
  }
  return all_ok;
}

// ---- training grid ------------------------------------------------------

int run_training_grid(const ExperimentConfig& cfg, const Options& opt) {
  const fs::path out(cfg.output_dir);
  fs::create_directories(out / "history");
  fs::create_directories(out / "checkpoints");
  write_resolved_config(cfg);
  fs::remove(out / "records.jsonl");
  fs::remove(out / "failures.json");

  struct Cell {
    std::string method;
    double beta;
    std::uint64_t seed;
  };
  std::vector<Cell> grid;
  for (const auto& m : cfg.methods)
    for (double b : cfg.beta_list)
      for (auto s : cfg.seeds) grid.push_back({m, b, s});
  const int n = static_cast<int>(grid.size());

  auto plan_for = [&](const Cell& c) {
    replin::experiments::RunPlan plan;
    plan.experiment = cfg.experiment;
    plan.method = c.method;
    plan.beta = c.beta;
    plan.seed = c.seed;
    plan.n_train = cfg.n_train;
    plan.n_eval = cfg.n_eval;
    plan.train = cfg.train;
    plan.trunk_widths = cfg.trunk_widths;
    plan.extractor_widths = cfg.extractor_widths;
    plan.erm_feature_dim = cfg.erm_feature_dim;
    plan.replin_feature_dim = cfg.replin_feature_dim;
    plan.erm_normalize = cfg.erm_normalize;
    return plan;
  };

  struct Slot {
    std::optional<replin::experiments::RunOutput> out;
    std::string error;
    bool done = false;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  std::vector<RunRecord> all_records;
  std::vector<std::pair<std::string, std::string>> failures;
  std::atomic<int> next{0};
  std::mutex mu;
  int emitted = 0;

  auto emit_ready = [&]() {  // caller holds mu
    while (emitted < n && slots[static_cast<std::size_t>(emitted)].done) {
      auto& slot = slots[static_cast<std::size_t>(emitted)];
      const auto name = replin::experiments::run_name(plan_for(grid[static_cast<std::size_t>(emitted)]));
      if (!slot.error.empty()) {
        failures.emplace_back(name, slot.error);
        std::cout << "[" << emitted + 1 << "/" << n << "] " << name
                  << " FAILED: " << slot.error << "\n";
      } else {
        auto& o = *slot.out;
        for (const auto& w : o.detail.warnings)
          std::cerr << name << ": warning: " << w << "\n";
        if (o.detail.aborted) {
          failures.emplace_back(name, "aborted: " + o.detail.abort_reason);
          std::cout << "[" << emitted + 1 << "/" << n << "] " << name
                    << " ABORTED: " << o.detail.abort_reason << "\n";
        } else {
          replin::metrics::append_records_jsonl(o.records, (out / "records.jsonl").string());
          for (auto& r : o.records) all_records.push_back(r);
          std::cout << "[" << emitted + 1 << "/" << n << "] " << name << " ("
                    << fmt_g(o.detail.eval.train_seconds) << "s)\n";
        }
        slot.out.reset();  // free the model
      }
      ++emitted;
    }
  };

  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      const auto idx = static_cast<std::size_t>(i);
      const auto plan = plan_for(grid[idx]);
      const auto name = replin::experiments::run_name(plan);
      try {
        auto o = replin::experiments::run(plan);
        replin::training::write_history_csv((out / "history" / (name + ".csv")).string(),
                                            o.detail.history);
        if (!o.detail.aborted)
          replin::training::save_checkpoint((out / "checkpoints" / (name + ".bin")).string(),
                                            o.detail.model, o.cfg, o.detail.eval.epochs);
        std::lock_guard<std::mutex> lock(mu);
        slots[idx].out = std::move(o);
        slots[idx].done = true;
        emit_ready();
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        slots[idx].error = e.what();
        slots[idx].done = true;
        emit_ready();
      }
    }
  };

  const int jobs = std::max(1, std::min(opt.jobs, n));
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  replin::metrics::write_summary_csv(all_records, (out / "summary.csv").string());
  std::cout << "wrote " << (out / "summary.csv").string() << " (" << all_records.size()
            << " records)\n";

  if (!failures.empty()) {
    nlohmann::json j;
    j["failures"] = nlohmann::json::array();
    for (const auto& [run, err] : failures)
      j["failures"].push_back({{"run", run}, {"error", err}});
    write_text(out / "failures.json", j.dump(2) + "\n");
    std::cerr << failures.size() << " run(s) failed; see failures.json\n";
    return 2;
  }
  return evaluate_expects(cfg, all_records) ? 0 : 3;
}

// ---- sweep --------------------------------------------------------------

int run_sweep_cmd(const ExperimentConfig& cfg, const Options& opt) {
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  write_resolved_config(cfg);
  fs::remove(out / "records.jsonl");

  int done = 0;
  auto on_record = [&](const RunRecord& r) {
    replin::metrics::append_records_jsonl({r}, (out / "records.jsonl").string());
    ++done;
    std::cout << "[" << done << "/" << cfg.sweep.n_models << "] " << r.run_id << "\n";
  };
  const auto records = replin::experiments::run_sweep(cfg.sweep, opt.jobs, on_record);

  replin::metrics::write_summary_csv(records, (out / "summary.csv").string());

  std::string scatter = "run_id,rel_delta,nhsic_int,kcc_int\n";
  for (const auto& r : records) {
    const auto it = r.rel_delta.find("B");
    const double rd = it == r.rel_delta.end() ? std::numeric_limits<double>::quiet_NaN()
                                              : it->second;
    scatter += r.run_id + "," + fmt_g(rd) + "," + fmt_g(r.nhsic_int) + "," +
               fmt_g(r.kcc_int) + "\n";
  }
  write_text(out / "sweep_scatter.csv", scatter);

  std::string corr = "field,spearman_rho,kendall_tau,n\n";
  for (const char* field : {"nhsic", "kcc"}) {
    const auto c = replin::metrics::correlation_sweep(records, "B", field);
    corr += std::string(field) + "," + fmt_g(c.spearman_rho) + "," + fmt_g(c.kendall_tau) +
            "," + std::to_string(c.n) + "\n";
    std::cout << field << ": rho=" << fmt_g(c.spearman_rho)
              << " tau=" << fmt_g(c.kendall_tau) << " over " << c.n << " models\n";
  }
  write_text(out / "sweep_correlations.csv", corr);
  return evaluate_expects(cfg, records) ? 0 : 3;
}

// ---- theory -------------------------------------------------------------

int run_theory_cmd(const ExperimentConfig& cfg) {
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  write_resolved_config(cfg);

  std::vector<double> grid = cfg.theory.beta_grid;
  if (grid.empty()) {
    const int k = cfg.theory.beta_points;
    const double lo = 0.01, hi = 0.99;
    for (int i = 0; i < k; ++i)
      grid.push_back(k == 1 ? lo : lo + (hi - lo) * i / static_cast<double>(k - 1));
  }
  const auto rows = replin::linear_theory::monte_carlo_compare(
      cfg.theory.n_runs, grid, cfg.theory.sampler, cfg.theory.seed);

  std::string csv = "beta,mean_j1,mean_j2,frac_j1_gt_j2\n";
  double min_gap = std::numeric_limits<double>::infinity(), min_gap_beta = 0.0;
  for (const auto& r : rows) {
    csv += fmt_g(r.beta) + "," + fmt_g(r.mean_j1) + "," + fmt_g(r.mean_j2) + "," +
           fmt_g(r.frac_j1_gt_j2) + "\n";
    const double gap = r.mean_j1 - r.mean_j2;
    if (gap < min_gap) {
      min_gap = gap;
      min_gap_beta = r.beta;
    }
  }
  write_text(out / "theory.csv", csv);
  std::cout << "wrote " << (out / "theory.csv").string() << " (" << rows.size()
            << " rows); smallest j1-j2 gap " << fmt_g(min_gap) << " at beta="
            << fmt_g(min_gap_beta) << "\n";
  return 0;
}

// ---- linear two-variable experiment -------------------------------------

int run_linear_cmd(const ExperimentConfig& cfg) {
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  write_resolved_config(cfg);

  const std::uint64_t base_seed = cfg.seeds.empty() ? 0 : cfg.seeds[0];
  std::string risks = "beta,method,seed,e1,e2,total,psi1,psi2\n";
  std::string summary = "beta,method,e1_mean,e2_mean,total_mean\n";
  for (double beta : cfg.beta_list) {
    const auto beta_key = static_cast<std::uint64_t>(std::llround(beta * 1e9));
    const auto res = replin::linear_theory::verify_linear_experiment(
        cfg.linear.scm, cfg.linear.n, beta, cfg.linear.n_seeds, cfg.linear.feature_dim,
        cfg.linear.lambda_dep, replin::stream_key(base_seed, "linear2-beta", beta_key));
    for (std::size_t s = 0; s < res.seeds.size(); ++s) {
      const auto& r = res.seeds[s];
      risks += fmt_g(beta) + ",erm," + std::to_string(s) + "," + fmt_g(r.erm.e1) + "," +
               fmt_g(r.erm.e2) + "," + fmt_g(r.erm.total) + "," + fmt_g(r.psi_erm.psi1) +
               "," + fmt_g(r.psi_erm.psi2) + "\n";
      risks += fmt_g(beta) + ",linear-independence," + std::to_string(s) + "," +
               fmt_g(r.lin_indep.e1) + "," + fmt_g(r.lin_indep.e2) + "," +
               fmt_g(r.lin_indep.total) + "," + fmt_g(r.psi_lin_indep.psi1) + "," +
               fmt_g(r.psi_lin_indep.psi2) + "\n";
    }
    summary += fmt_g(beta) + ",erm," + fmt_g(res.erm_mean.e1) + "," +
               fmt_g(res.erm_mean.e2) + "," + fmt_g(res.erm_mean.total) + "\n";
    summary += fmt_g(beta) + ",linear-independence," + fmt_g(res.lin_indep_mean.e1) + "," +
               fmt_g(res.lin_indep_mean.e2) + "," + fmt_g(res.lin_indep_mean.total) + "\n";
    std::cout << "beta=" << fmt_g(beta) << ": erm e2=" << fmt_g(res.erm_mean.e2)
              << ", linear-independence e2=" << fmt_g(res.lin_indep_mean.e2) << "\n";
  }
  write_text(out / "linear_risks.csv", risks);
  write_text(out / "linear_summary.csv", summary);
  return 0;
}

// ---- generate -----------------------------------------------------------

int run_generate_cmd(const ExperimentConfig& cfg) {
  if (cfg.experiment == "theory" || cfg.experiment == "sweep")
    throw Error("invalid config",
                "experiment '" + cfg.experiment + "' has no datasets to generate");
  const fs::path out = fs::path(cfg.output_dir) / "datasets";
  fs::create_directories(out);
  write_resolved_config(cfg);

  const auto bundle = replin::experiments::make_bundle(cfg.experiment);
  int written = 0;
  auto emit = [&](const replin::scm::RegimeDataset& ds, const std::string& stem) {
    replin::scm::save_dataset(ds, (out / (stem + ".bin")).string());
    replin::scm::export_csv(ds, (out / (stem + ".csv")).string());
    ++written;
  };
  for (double beta : cfg.beta_list) {
    for (auto seed : cfg.seeds) {
      replin::experiments::RunPlan plan;
      plan.experiment = cfg.experiment;
      plan.beta = beta;
      plan.seed = seed;
      plan.n_train = cfg.n_train;
      plan.n_eval = cfg.n_eval;
      const auto data = replin::experiments::make_data(plan, bundle);
      char head[96];
      std::snprintf(head, sizeof(head), "%s-b%g-s%llu", cfg.experiment.c_str(), beta,
                    static_cast<unsigned long long>(seed));
      const std::string base(head);
      emit(data.train_obs, base + "-train-obs");
      emit(data.eval_obs, base + "-eval-obs");
      for (const auto& ds : data.train_ints) emit(ds, base + "-train-int-" + ds.intervened);
      for (const auto& ds : data.eval_ints) emit(ds, base + "-eval-int-" + ds.intervened);
    }
  }
  std::cout << "wrote " << written << " datasets under " << out.string() << "\n";
  return 0;
}

// ---- report -------------------------------------------------------------

int run_report_cmd(const ExperimentConfig& cfg) {
  const fs::path out(cfg.output_dir);
  const auto records = replin::metrics::load_records_jsonl((out / "records.jsonl").string());
  replin::metrics::write_summary_csv(records, (out / "summary.csv").string());
  std::cout << "rebuilt " << (out / "summary.csv").string() << " from " << records.size()
            << " records\n";
  return evaluate_expects(cfg, records) ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiment harness for interventionally robust representation learning"};
  app.require_subcommand(1);

  Options opt;
  auto add_common = [&](CLI::App* sub, bool with_jobs, bool with_offset) {
    sub->add_option("--config", opt.config_path, "config file (key-value text or JSON)")
        ->required();
    sub->add_option("--output", opt.output_override, "override the configured output_dir");
    if (with_jobs) sub->add_option("--jobs", opt.jobs, "parallel worker threads");
    if (with_offset)
      sub->add_option("--seed-offset", opt.seed_offset, "value added to every seed");
  };

  auto* c_generate = app.add_subcommand("generate", "sample datasets to disk");
  add_common(c_generate, false, true);
  auto* c_train = app.add_subcommand("train", "run the configured experiment");
  add_common(c_train, true, true);
  auto* c_sweep = app.add_subcommand("sweep", "train a randomized-hyperparameter population");
  add_common(c_sweep, true, true);
  auto* c_theory = app.add_subcommand("theory", "Monte-Carlo comparison of solution risks");
  add_common(c_theory, false, true);
  auto* c_validate = app.add_subcommand("validate", "check a config without side effects");
  c_validate->add_option("--config", opt.config_path, "config file")->required();
  auto* c_report = app.add_subcommand("report", "rebuild summary.csv from records.jsonl");
  add_common(c_report, false, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(c_validate)) {
      const auto cfg = replin::config::load(opt.config_path);
      replin::config::validate(cfg);
      std::cout << "ok: " << cfg.experiment << " config (" << cfg.methods.size()
                << " methods, " << cfg.beta_list.size() << " betas, " << cfg.seeds.size()
                << " seeds)\n";
      return 0;
    }
    const auto cfg = load_config(opt);
    if (app.got_subcommand(c_generate)) return run_generate_cmd(cfg);
    if (app.got_subcommand(c_report)) return run_report_cmd(cfg);
    if (app.got_subcommand(c_sweep)) {
      if (cfg.experiment != "sweep")
        throw Error("invalid config",
                    "subcommand 'sweep' needs experiment = \"sweep\", got '" +
                        cfg.experiment + "'");
      return run_sweep_cmd(cfg, opt);
    }
    if (app.got_subcommand(c_theory)) {
      if (cfg.experiment != "theory")
        throw Error("invalid config",
                    "subcommand 'theory' needs experiment = \"theory\", got '" +
                        cfg.experiment + "'");
      return run_theory_cmd(cfg);
    }
    // train dispatches on the configured experiment
    if (cfg.experiment == "theory") return run_theory_cmd(cfg);
    if (cfg.experiment == "sweep") return run_sweep_cmd(cfg, opt);
    if (cfg.experiment == "linear2") return run_linear_cmd(cfg);
    return run_training_grid(cfg, opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
