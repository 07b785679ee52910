#include "replin/scm_core.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace replin::scm {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "dataset container assumes a little-endian host");

Distribution Distribution::bernoulli(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("invalid distribution parameter", "bernoulli p");
  Distribution d;
  d.kind = Kind::Bernoulli;
  d.p = p;
  return d;
}

Distribution Distribution::uniform(double lo, double hi) {
  if (!(lo < hi)) throw Error("invalid distribution parameter", "uniform bounds");
  Distribution d;
  d.kind = Kind::Uniform;
  d.lo = lo;
  d.hi = hi;
  return d;
}

Distribution Distribution::normal(double mean, double var) {
  if (!(var >= 0.0)) throw Error("invalid distribution parameter", "normal variance");
  Distribution d;
  d.kind = Kind::Normal;
  d.mean = mean;
  d.var = var;
  return d;
}

Distribution Distribution::mv_normal_diag(Vec mu, Vec var_diag) {
  if (mu.size() != var_diag.size() || mu.size() == 0)
    throw Error("invalid distribution parameter", "mv normal shapes");
  if (var_diag.minCoeff() < 0.0)
    throw Error("invalid distribution parameter", "mv normal variance");
  Distribution d;
  d.kind = Kind::MvNormal;
  d.mu = std::move(mu);
  d.cov_diag = std::move(var_diag);
  return d;
}

Distribution Distribution::mv_normal(Vec mu, const Mat& cov) {
  if (cov.rows() != cov.cols() || cov.rows() != mu.size() || mu.size() == 0)
    throw Error("invalid distribution parameter", "mv normal shapes");
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw Error("invalid distribution parameter", "covariance not positive definite");
  Distribution d;
  d.kind = Kind::MvNormal;
  d.mu = std::move(mu);
  d.chol = llt.matrixL();
  return d;
}

Distribution Distribution::beta_dist(double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw Error("invalid distribution parameter", "beta shape");
  Distribution d;
  d.kind = Kind::Beta;
  d.alpha = alpha;
  d.beta = beta;
  return d;
}

Distribution Distribution::categorical(Vec probs) {
  if (probs.size() == 0 || probs.minCoeff() < 0.0 || probs.sum() <= 0.0)
    throw Error("invalid distribution parameter", "categorical probabilities");
  Distribution d;
  d.kind = Kind::Categorical;
  d.probs = std::move(probs);
  return d;
}

int Distribution::dim() const {
  switch (kind) {
    case Kind::MvNormal:
      return static_cast<int>(mu.size());
    default:
      return 1;
  }
}

Vec Distribution::draw(CounterRng& rng) const {
  switch (kind) {
    case Kind::Bernoulli:
      return Vec::Constant(1, rng.bernoulli(p) ? 1.0 : 0.0);
    case Kind::Uniform:
      return Vec::Constant(1, rng.uniform(lo, hi));
    case Kind::Normal:
      return Vec::Constant(1, mean + std::sqrt(var) * rng.normal());
    case Kind::MvNormal: {
      Vec z(mu.size());
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
      if (cov_diag.size() > 0)
        return mu + (cov_diag.array().sqrt() * z.array()).matrix();
      return mu + chol * z;
    }
    case Kind::Beta:
      return Vec::Constant(1, rng.beta(alpha, beta));
    case Kind::Categorical:
      return Vec::Constant(1, static_cast<double>(rng.categorical(probs)));
  }
  throw Error("invalid distribution parameter", "unknown kind");
}

const AttrValues& RegimeDataset::attr(const std::string& name) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) throw Error("no such node", name);
  return it->second;
}

void CausalGraph::add_node(NodeSpec spec) {
  if (spec.id.empty()) throw Error("invalid node", "empty id");
  if (nodes_.count(spec.id)) throw Error("invalid node", "duplicate id " + spec.id);
  for (const auto& p : spec.parents)
    if (!nodes_.count(p)) throw Error("no such node", p + " (parent of " + spec.id + ")");
  if (spec.marginal.has_value()) {
    if (!spec.parents.empty())
      throw Error("invalid node", spec.id + ": exogenous node cannot have parents");
    spec.dim = spec.marginal->dim();
  } else if (!spec.fn) {
    throw Error("invalid node", spec.id + ": mechanism missing");
  }
  if (spec.dim <= 0) throw Error("invalid node", spec.id + ": dim");
  order_.push_back(spec.id);
  nodes_.emplace(spec.id, std::move(spec));
}

bool CausalGraph::has_node(const std::string& id) const { return nodes_.count(id) > 0; }

const NodeSpec& CausalGraph::node(const std::string& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error("no such node", id);
  return it->second;
}

const std::vector<std::string>& CausalGraph::parents(const std::string& id) const {
  return node(id).parents;
}

CausalGraph intervene(const CausalGraph& g, const std::string& target,
                      const Distribution& marginal) {
  CausalGraph out = g;
  auto it = out.nodes_.find(target);
  if (it == out.nodes_.end()) throw Error("no such node", target);
  NodeSpec& n = it->second;
  if (marginal.dim() != n.dim)
    throw Error("invalid distribution parameter",
                "marginal dim does not match node " + target);
  n.parents.clear();
  n.fn = nullptr;
  n.marginal = marginal;
  out.intervened_ = target;
  return out;
}

CausalGraph intervene(const CausalGraph& g, const InterventionSpec& spec) {
  return intervene(g, spec.target, spec.marginal);
}

RegimeDataset CausalGraph::sample(std::int64_t n, std::uint64_t seed) const {
  if (n <= 0) throw Error("empty sample");
  RegimeDataset ds;
  ds.regime = regime();
  ds.intervened = intervened_;
  ds.seed = seed;
  ds.node_ids = order_;

  std::map<std::string, Mat> values;
  int x_dim = 0;
  for (const auto& id : order_) {
    const NodeSpec& spec = nodes_.at(id);
    values.emplace(id, Mat(n, spec.dim));
    if (spec.role == NodeRole::Signal) x_dim += spec.dim;
  }

  std::vector<Vec> parent_vals;
  for (const auto& id : order_) {
    const NodeSpec& spec = nodes_.at(id);
    Mat& out = values.at(id);
    const std::uint64_t node_hash = hash_string(id);
    for (std::int64_t i = 0; i < n; ++i) {
      CounterRng rng(stream_key(seed, {node_hash, static_cast<std::uint64_t>(i)}));
      Vec v;
      if (spec.marginal.has_value()) {
        v = spec.marginal->draw(rng);
      } else {
        parent_vals.clear();
        for (const auto& p : spec.parents)
          parent_vals.push_back(values.at(p).row(i).transpose());
        v = spec.fn(parent_vals, rng);
      }
      if (v.size() != spec.dim) throw Error("invalid node", id + ": mechanism dim");
      out.row(i) = v.transpose();
    }
  }

  ds.x.resize(n, x_dim);
  int col = 0;
  for (const auto& id : order_) {
    const NodeSpec& spec = nodes_.at(id);
    if (spec.role == NodeRole::Signal) {
      ds.x.middleCols(col, spec.dim) = values.at(id);
      col += spec.dim;
    } else {
      AttrValues av;
      av.kind = spec.attr_kind;
      av.num_classes = spec.attr_kind == AttrKind::Class ? spec.num_classes : 0;
      av.values = values.at(id);
      ds.attr_names.push_back(id);
      ds.attrs.emplace(id, std::move(av));
    }
  }
  return ds;
}

namespace {

constexpr char kMagic[4] = {'R', 'L', 'D', 'S'};

void write_blob(std::ofstream& f, const Mat& m) {
  // Row-major on disk so the header's [rows, cols] reads naturally.
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = m(i, j);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(sizeof(double) * row.size()));
  }
}

Mat read_blob(std::ifstream& f, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  std::vector<double> row(cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(sizeof(double) * row.size()));
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = row[j];
  }
  if (!f) throw Error("io error", "truncated dataset blob");
  return m;
}

}  // namespace

void save_dataset(const RegimeDataset& ds, const std::string& path) {
  json header;
  header["format"] = "replin-dataset";
  header["version"] = 1;
  header["regime"] = ds.regime == Regime::Observational ? "observational" : "intervened";
  header["intervened"] = ds.intervened;
  header["seed"] = ds.seed;
  header["nodes"] = ds.node_ids;
  header["x_shape"] = {ds.x.rows(), ds.x.cols()};
  json attrs = json::array();
  for (const auto& name : ds.attr_names) {
    const AttrValues& av = ds.attrs.at(name);
    attrs.push_back({{"name", name},
                     {"kind", av.kind == AttrKind::Class ? "class" : "real"},
                     {"classes", av.num_classes},
                     {"shape", {av.values.rows(), av.values.cols()}}});
  }
  header["attrs"] = attrs;
  const std::string h = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("io error", "cannot open " + path);
  f.write(kMagic, 4);
  const std::uint64_t len = h.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  write_blob(f, ds.x);
  for (const auto& name : ds.attr_names) write_blob(f, ds.attrs.at(name).values);
  if (!f) throw Error("io error", "write failed for " + path);
}

RegimeDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("io error", "cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw Error("io error", path + " is not a dataset file");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string h(len, '\0');
  f.read(h.data(), static_cast<std::streamsize>(len));
  if (!f) throw Error("io error", "truncated header in " + path);
  json header = json::parse(h, nullptr, false);
  if (header.is_discarded()) throw Error("io error", "bad header in " + path);

  RegimeDataset ds;
  ds.regime = header.at("regime") == "intervened" ? Regime::Intervened
                                                  : Regime::Observational;
  ds.intervened = header.at("intervened");
  ds.seed = header.at("seed");
  ds.node_ids = header.at("nodes").get<std::vector<std::string>>();
  const auto xs = header.at("x_shape");
  ds.x = read_blob(f, xs.at(0), xs.at(1));
  for (const auto& a : header.at("attrs")) {
    AttrValues av;
    av.kind = a.at("kind") == "class" ? AttrKind::Class : AttrKind::Real;
    av.num_classes = a.at("classes");
    av.values = read_blob(f, a.at("shape").at(0), a.at("shape").at(1));
    const std::string name = a.at("name");
    ds.attr_names.push_back(name);
    ds.attrs.emplace(name, std::move(av));
  }
  return ds;
}

void export_csv(const RegimeDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("io error", "cannot open " + path);
  for (Eigen::Index j = 0; j < ds.x.cols(); ++j) f << (j ? "," : "") << "x" << j;
  for (const auto& name : ds.attr_names) {
    const AttrValues& av = ds.attrs.at(name);
    if (av.values.cols() == 1) {
      f << "," << name;
    } else {
      for (Eigen::Index j = 0; j < av.values.cols(); ++j) f << "," << name << "_" << j;
    }
  }
  f << "\n";
  char buf[32];
  auto put = [&](double v, bool lead_comma) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    if (lead_comma) f << ",";
    f << buf;
  };
  for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.x.cols(); ++j) put(ds.x(i, j), j > 0);
    for (const auto& name : ds.attr_names) {
      const Mat& v = ds.attrs.at(name).values;
      for (Eigen::Index j = 0; j < v.cols(); ++j) put(v(i, j), true);
    }
    f << "\n";
  }
  if (!f) throw Error("io error", "write failed for " + path);
}

}  // namespace replin::scm
