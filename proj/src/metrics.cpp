#include "replin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

namespace replin::metrics {

using nlohmann::json;

double rel_delta(double acc_obs, double acc_int) {
  if (acc_obs == 0.0) throw Error("undefined correlation", "zero observational accuracy");
  return (acc_obs - acc_int) / acc_obs;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw Error("undefined correlation", "constant input");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw Error("undefined correlation", "need two equally sized samples");
  return pearson(average_ranks(a), average_ranks(b));
}

double kendall(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw Error("undefined correlation", "need two equally sized samples");
  const std::size_t n = a.size();
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) {
        ++ties_a;
      } else if (db == 0.0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  double tie_term_a = 0, tie_term_b = 0;
  {
    auto count_ties = [n](const std::vector<double>& v) {
      std::vector<double> s(v);
      std::sort(s.begin(), s.end());
      double t = 0;
      std::size_t i = 0;
      while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && s[j + 1] == s[i]) ++j;
        const double m = static_cast<double>(j - i + 1);
        t += 0.5 * m * (m - 1.0);
        i = j + 1;
      }
      return t;
    };
    tie_term_a = count_ties(a);
    tie_term_b = count_ties(b);
  }
  const double denom = std::sqrt((n0 - tie_term_a) * (n0 - tie_term_b));
  if (denom <= 0.0) throw Error("undefined correlation", "constant input");
  return (static_cast<double>(concordant) - static_cast<double>(discordant)) / denom;
}

double js_divergence_binned(const Mat& p, const Mat& q, int bins_per_dim) {
  const Eigen::Index d = p.cols();
  if (d != q.cols() || d == 0) throw Error("dimension mismatch", "sample widths differ");
  if (d > 4) throw Error("binning infeasible", "more than 4 dimensions");
  if (p.rows() == 0 || q.rows() == 0) throw Error("empty sample");
  const int bins = bins_per_dim > 0 ? bins_per_dim : (d == 1 ? 64 : 16);

  Vec lo(d), hi(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    lo[j] = std::min(p.col(j).minCoeff(), q.col(j).minCoeff());
    hi[j] = std::max(p.col(j).maxCoeff(), q.col(j).maxCoeff());
    if (hi[j] <= lo[j]) hi[j] = lo[j] + 1.0;  // degenerate axis: single bin
  }

  std::size_t cells = 1;
  for (Eigen::Index j = 0; j < d; ++j) cells *= static_cast<std::size_t>(bins);
  std::vector<double> hp(cells, 0.0), hq(cells, 0.0);
  auto cell_of = [&](const Mat& m, Eigen::Index i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      int b = static_cast<int>(static_cast<double>(bins) * (m(i, j) - lo[j]) /
                               (hi[j] - lo[j]));
      b = std::clamp(b, 0, bins - 1);
      c = c * static_cast<std::size_t>(bins) + static_cast<std::size_t>(b);
    }
    return c;
  };
  for (Eigen::Index i = 0; i < p.rows(); ++i) hp[cell_of(p, i)] += 1.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) hq[cell_of(q, i)] += 1.0;
  const double np = static_cast<double>(p.rows());
  const double nq = static_cast<double>(q.rows());

  double js = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    const double pp = hp[c] / np;
    const double qq = hq[c] / nq;
    const double m = 0.5 * (pp + qq);
    if (pp > 0) js += 0.5 * pp * std::log(pp / m);
    if (qq > 0) js += 0.5 * qq * std::log(qq / m);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

std::string RunRecord::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["experiment"] = experiment;
  j["method"] = method;
  j["beta"] = beta;
  j["seed"] = seed;
  j["eval_target"] = eval_target;
  j["acc_obs"] = acc_obs;
  j["acc_int"] = acc_int;
  j["rel_delta"] = rel_delta;
  auto put_opt = [&](const char* k, double v) {
    if (std::isfinite(v)) j[k] = v;
  };
  put_opt("nhsic_int", nhsic_int);
  put_opt("kcc_int", kcc_int);
  put_opt("js_int", js_int);
  j["train_seconds"] = train_seconds;
  j["epochs"] = epochs;
  return j.dump();
}

RunRecord RunRecord::from_json(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw Error("io error", "bad record line");
  RunRecord r;
  r.run_id = j.at("run_id");
  r.experiment = j.at("experiment");
  r.method = j.at("method");
  r.beta = j.at("beta");
  r.seed = j.at("seed");
  r.eval_target = j.value("eval_target", "");
  r.acc_obs = j.at("acc_obs").get<std::map<std::string, double>>();
  r.acc_int = j.at("acc_int").get<std::map<std::string, double>>();
  r.rel_delta = j.at("rel_delta").get<std::map<std::string, double>>();
  if (j.contains("nhsic_int")) r.nhsic_int = j["nhsic_int"];
  if (j.contains("kcc_int")) r.kcc_int = j["kcc_int"];
  if (j.contains("js_int")) r.js_int = j["js_int"];
  r.train_seconds = j.value("train_seconds", 0.0);
  r.epochs = j.value("epochs", 0);
  return r;
}

void append_records_jsonl(const std::vector<RunRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw Error("io error", "cannot open " + path);
  for (const auto& r : records) f << r.to_json() << "\n";
}

std::vector<RunRecord> load_records_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("io error", "cannot open " + path);
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(RunRecord::from_json(line));
  }
  return out;
}

namespace {

struct Moments {
  std::vector<double> values;
  double mean() const {
    return std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  }
  double stddev() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double s = 0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

}  // namespace

void write_summary_csv(const std::vector<RunRecord>& records, const std::string& path) {
  std::set<std::string> attrs;
  for (const auto& r : records)
    for (const auto& [k, v] : r.acc_obs) attrs.insert(k);

  struct Key {
    std::string method, target;
    double beta;
    bool operator<(const Key& o) const {
      return std::tie(method, beta, target) < std::tie(o.method, o.beta, o.target);
    }
  };
  std::map<Key, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[{r.method, r.eval_target, r.beta}].push_back(&r);

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("io error", "cannot open " + path);
  f << "method,beta,eval_target,n_seeds";
  for (const auto& a : attrs)
    f << ",acc_obs_" << a << "_mean,acc_obs_" << a << "_std,acc_int_" << a
      << "_mean,acc_int_" << a << "_std,rel_delta_" << a << "_mean";
  f << ",nhsic_int_mean,nhsic_int_std,kcc_int_mean,js_int_mean\n";

  auto fmt = [&f](double v) {
    if (std::isnan(v)) {
      f << ",";
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.6g", v);
      f << buf;
    }
  };
  for (const auto& [key, rows] : groups) {
    f << key.method << "," << key.beta << "," << key.target << "," << rows.size();
    for (const auto& a : attrs) {
      Moments obs, intm, rd;
      for (const auto* r : rows) {
        if (r->acc_obs.count(a)) obs.values.push_back(r->acc_obs.at(a));
        if (r->acc_int.count(a)) intm.values.push_back(r->acc_int.at(a));
        if (r->rel_delta.count(a)) rd.values.push_back(r->rel_delta.at(a));
      }
      const double nan = std::numeric_limits<double>::quiet_NaN();
      fmt(obs.values.empty() ? nan : obs.mean());
      fmt(obs.values.empty() ? nan : obs.stddev());
      fmt(intm.values.empty() ? nan : intm.mean());
      fmt(intm.values.empty() ? nan : intm.stddev());
      fmt(rd.values.empty() ? nan : rd.mean());
    }
    Moments nh, kc, js;
    for (const auto* r : rows) {
      if (std::isfinite(r->nhsic_int)) nh.values.push_back(r->nhsic_int);
      if (std::isfinite(r->kcc_int)) kc.values.push_back(r->kcc_int);
      if (std::isfinite(r->js_int)) js.values.push_back(r->js_int);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    fmt(nh.values.empty() ? nan : nh.mean());
    fmt(nh.values.empty() ? nan : nh.stddev());
    fmt(kc.values.empty() ? nan : kc.mean());
    fmt(js.values.empty() ? nan : js.mean());
    f << "\n";
  }
}

SweepCorrelation correlation_sweep(const std::vector<RunRecord>& records,
                                   const std::string& attr,
                                   const std::string& field) {
  std::vector<double> drops, deps;
  for (const auto& r : records) {
    if (!r.rel_delta.count(attr)) continue;
    const double dep = field == "kcc" ? r.kcc_int : r.nhsic_int;
    if (!std::isfinite(dep)) continue;
    drops.push_back(r.rel_delta.at(attr));
    deps.push_back(dep);
  }
  if (drops.size() < 10)
    throw Error("undefined correlation", "need at least 10 records");
  SweepCorrelation c;
  c.spearman_rho = spearman(drops, deps);
  c.kendall_tau = kendall(drops, deps);
  c.n = static_cast<int>(drops.size());
  return c;
}

}  // namespace replin::metrics
