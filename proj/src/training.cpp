#include "replin/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "replin/rng.hpp"
#include "replin/tape.hpp"

namespace replin::training {

namespace {

using json = nlohmann::json;

Eigen::Map<const Mat> weight_view(const Vec& params, const LayerRef& l) {
  return {params.data() + l.w_offset, l.in, l.out};
}

Eigen::Map<const Mat> bias_view(const Vec& params, const LayerRef& l) {
  return {params.data() + l.b_offset, 1, l.out};
}

Mat affine_eval(const Mat& x, const Vec& params, const LayerRef& l) {
  if (x.cols() != l.in) throw Error("dimension mismatch", "affine input width");
  Mat y = x * weight_view(params, l);
  y.rowwise() += bias_view(params, l).row(0);
  return y;
}

void normalize_rows_inplace(Mat& f) {
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    const double nrm = f.row(r).norm();
    f.row(r) /= (nrm + 1e-12);
  }
}

}  // namespace

MlpModel::MlpModel(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  build_layout();
  params_ = Vec::Zero(total_params_);
  int layer_index = 0;
  auto init_layer = [&](const LayerRef& l) {
    CounterRng rng(stream_key(init_seed, "layer", static_cast<std::uint64_t>(layer_index++)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(l.in) * l.out; ++i)
      params_[l.w_offset + i] = rng.uniform(-bound, bound);
    for (int i = 0; i < l.out; ++i) params_[l.b_offset + i] = rng.uniform(-bound, bound);
  };
  for (const auto& l : trunk_) init_layer(l);
  for (const auto& [attr, head] : heads_) {
    (void)attr;
    for (const auto& l : head.extractor) init_layer(l);
    init_layer(head.classifier);
  }
}

MlpModel::MlpModel(ModelSpec spec, Vec params) : spec_(std::move(spec)) {
  build_layout();
  if (params.size() != total_params_)
    throw Error("dimension mismatch", "parameter vector does not fit the layout");
  params_ = std::move(params);
}

void MlpModel::build_layout() {
  if (spec_.input_dim < 1) throw Error("dimension mismatch", "model input_dim");
  if (spec_.heads.empty()) throw Error("dimension mismatch", "model needs at least one head");
  std::int64_t off = 0;
  auto make_layer = [&](int in, int out) {
    LayerRef l;
    l.in = in;
    l.out = out;
    l.w_offset = off;
    off += static_cast<std::int64_t>(in) * out;
    l.b_offset = off;
    off += out;
    return l;
  };
  int width = spec_.input_dim;
  for (int w : spec_.trunk_widths) {
    if (w < 1) throw Error("dimension mismatch", "trunk width");
    trunk_.push_back(make_layer(width, w));
    width = w;
  }
  for (const auto& [attr, head] : spec_.heads) {
    if (head.feature_dim < 1) throw Error("dimension mismatch", "feature_dim");
    HeadLayout layout;
    int h = width;
    for (int w : head.extractor_widths) {
      if (w < 1) throw Error("dimension mismatch", "extractor width");
      layout.extractor.push_back(make_layer(h, w));
      h = w;
    }
    layout.extractor.push_back(make_layer(h, head.feature_dim));
    const int out = head.num_classes == 0 ? std::max(1, head.regression_dim)
                                          : head.num_classes;
    layout.classifier = make_layer(head.feature_dim, out);
    heads_.emplace(attr, std::move(layout));
  }
  total_params_ = off;
}

MlpModel::Forward MlpModel::forward(const Mat& x) const {
  Forward out;
  Mat h = x;
  for (const auto& l : trunk_) h = affine_eval(h, params_, l).cwiseMax(0.0);
  for (const auto& [attr, layout] : heads_) {
    Mat z = h;
    const std::size_t n_layers = layout.extractor.size();
    for (std::size_t i = 0; i < n_layers; ++i) {
      z = affine_eval(z, params_, layout.extractor[i]);
      if (i + 1 < n_layers) z = z.cwiseMax(0.0);
    }
    if (spec_.heads.at(attr).normalize) normalize_rows_inplace(z);
    out.logits.emplace(attr, affine_eval(z, params_, layout.classifier));
    out.features.emplace(attr, std::move(z));
  }
  return out;
}

double warmup_lambda(const TrainConfig& cfg, int epoch) {
  const double start = cfg.warmup_start_frac * cfg.epochs;
  const double end = cfg.warmup_end_frac * cfg.epochs;
  if (static_cast<double>(epoch) < start) return 0.0;
  if (static_cast<double>(epoch) >= end) return cfg.lambda_dep;
  return cfg.lambda_dep * (static_cast<double>(epoch) - start) / (end - start);
}

namespace {

struct ParamNode {
  int node = -1;
  std::int64_t offset = 0;
  std::int64_t count = 0;
  std::string name;
};

struct GraphBuild {
  autodiff::Tape tape;
  std::vector<ParamNode> params;
  std::map<std::string, int> features;
  std::map<std::string, int> logits;
  LossBreakdown breakdown;
  int total_node = -1;
};

int tape_affine(GraphBuild& gb, int x, const Vec& params, const LayerRef& l,
                const std::string& name) {
  const int w = gb.tape.input(weight_view(params, l));
  const int b = gb.tape.input(bias_view(params, l));
  gb.params.push_back({w, l.w_offset, static_cast<std::int64_t>(l.in) * l.out, name + ".w"});
  gb.params.push_back({b, l.b_offset, l.out, name + ".b"});
  return gb.tape.add_row(gb.tape.matmul(x, w), b);
}

// Linear-kernel NHSIC between two centered tape nodes, with the in-training
// guard: a vanished self-HSIC gets +1e-12 and a collapse warning instead of
// an error, so transient feature collapse cannot abort a run.
int tape_nhsic(GraphBuild& gb, int za, int zb, Eigen::Index n, const std::string& label,
               std::vector<std::string>* warnings) {
  auto& t = gb.tape;
  const double inv = 1.0 / (static_cast<double>(n - 1) * static_cast<double>(n - 1));
  const int ca = t.center_columns(za);
  const int cb = t.center_columns(zb);
  int hxy = t.s_affine(t.frob2(t.matmul_tn(ca, cb)), inv, 0.0);
  int hxx = t.s_affine(t.frob2(t.matmul_tn(ca, ca)), inv, 0.0);
  int hyy = t.s_affine(t.frob2(t.matmul_tn(cb, cb)), inv, 0.0);
  auto guard = [&](int node, const char* side) {
    if (t.scalar(node) < 1e-12) {
      if (warnings)
        warnings->push_back("collapse: zero self-HSIC (" + label + ", " + side + ")");
      return t.s_affine(node, 1.0, 1e-12);
    }
    return node;
  };
  hxx = guard(hxx, "left");
  hyy = guard(hyy, "right");
  return t.s_div(hxy, t.s_sqrt(t.s_mul(hxx, hyy)));
}

int tape_rff(GraphBuild& gb, int f, const dependence::RffMap& map) {
  auto& t = gb.tape;
  const int w = t.constant(map.w);
  const int b = t.constant(map.b.transpose());
  const double amp = std::sqrt(2.0 / static_cast<double>(map.dim_out()));
  return t.scale(t.cos_map(t.add_row(t.matmul_nt(f, w), b)), amp);
}

Mat one_hot(const Mat& labels, int classes) {
  Mat y = Mat::Zero(labels.rows(), classes);
  for (Eigen::Index r = 0; r < labels.rows(); ++r) {
    const auto c = static_cast<Eigen::Index>(std::llround(labels(r, 0)));
    if (c < 0 || c >= classes)
      throw Error("dimension mismatch", "class label outside declared range");
    y(r, c) = 1.0;
  }
  return y;
}

GraphBuild build_loss_graph(const MlpModel& model, const scm::RegimeDataset& batch,
                            const TrainConfig& cfg, int epoch, const RffBank& rff,
                            const ParentSets& parents,
                            std::vector<std::string>* warnings) {
  if (batch.n() == 0) throw Error("empty sample", "loss on an empty batch");
  const Eigen::Index n = batch.n();
  GraphBuild gb;
  auto& t = gb.tape;
  const Vec& params = model.params();

  int h = t.constant(batch.x);
  int trunk_idx = 0;
  for (const auto& l : model.trunk_layers())
    h = t.relu(tape_affine(gb, h, params, l, "trunk" + std::to_string(trunk_idx++)));

  for (const auto& [attr, layout] : model.head_layouts()) {
    int z = h;
    const std::size_t n_layers = layout.extractor.size();
    for (std::size_t i = 0; i < n_layers; ++i) {
      z = tape_affine(gb, z, params, layout.extractor[i],
                      attr + ".extract" + std::to_string(i));
      if (i + 1 < n_layers) z = t.relu(z);
    }
    if (model.spec().heads.at(attr).normalize) z = t.l2_normalize_rows(z);
    gb.features[attr] = z;
    gb.logits[attr] = tape_affine(gb, z, params, layout.classifier, attr + ".cls");
  }

  // Prediction loss: mean over heads of per-head mean cross-entropy
  // (mean squared error for regression heads).
  int pred = -1;
  for (const auto& [attr, head] : model.spec().heads) {
    const auto& values = batch.attr(attr);
    int term;
    if (head.num_classes == 0) {
      term = t.mse_mean(gb.logits[attr], t.constant(values.values));
    } else {
      std::vector<int> labels(static_cast<std::size_t>(n));
      for (Eigen::Index r = 0; r < n; ++r)
        labels[static_cast<std::size_t>(r)] =
            static_cast<int>(std::llround(values.values(r, 0)));
      term = t.cross_entropy_mean(gb.logits[attr], labels);
    }
    pred = pred < 0 ? term : t.s_add(pred, term);
  }
  pred = t.s_affine(pred, 1.0 / static_cast<double>(model.spec().heads.size()), 0.0);

  const double lambda_eff = warmup_lambda(cfg, epoch);
  const bool want_dep = lambda_eff > 0.0 && batch.regime == scm::Regime::Intervened;
  const bool want_self = cfg.lambda_self > 0.0;
  if ((want_dep || want_self) && n < 2)
    throw Error("need at least two samples", "dependence terms on a batch of one");

  int dep = -1;
  if (want_dep) {
    if (!rff.ready)
      throw Error("rff bank not ready", "dependence loss requested before warm-up freeze");
    const auto it = parents.find(batch.intervened);
    if (it == parents.end() || it->second.empty())
      throw Error("unsupported target", "no parent set for " + batch.intervened);
    const int z_target = tape_rff(gb, gb.features.at(batch.intervened),
                                  rff.maps.at(batch.intervened));
    for (const auto& parent : it->second) {
      const int z_parent = tape_rff(gb, gb.features.at(parent), rff.maps.at(parent));
      const int nh = tape_nhsic(gb, z_parent, z_target, n,
                                parent + "~" + batch.intervened, warnings);
      dep = dep < 0 ? nh : t.s_add(dep, nh);
    }
  }

  int self_dep = -1;
  if (want_self) {
    int acc = -1;
    for (const auto& [attr, head] : model.spec().heads) {
      const auto& values = batch.attr(attr);
      const Mat target =
          head.num_classes == 0 ? values.values : one_hot(values.values, values.num_classes);
      const int nh = tape_nhsic(gb, gb.features.at(attr), t.constant(target),
                                n, attr + "~self", warnings);
      acc = acc < 0 ? nh : t.s_add(acc, nh);
    }
    const double denom = 2.0 * static_cast<double>(model.spec().heads.size());
    self_dep = t.s_affine(acc, -1.0 / denom, 1.0);
  }

  gb.breakdown.pred = t.scalar(pred);
  gb.breakdown.dep = dep < 0 ? 0.0 : t.scalar(dep);
  gb.breakdown.self_dep = self_dep < 0 ? 0.0 : t.scalar(self_dep);
  gb.breakdown.lambda_dep_effective = lambda_eff;

  int total = pred;
  if (dep >= 0) total = t.s_add(total, t.s_affine(dep, lambda_eff, 0.0));
  if (self_dep >= 0) total = t.s_add(total, t.s_affine(self_dep, cfg.lambda_self, 0.0));
  gb.breakdown.total = t.scalar(total);
  gb.total_node = total;
  return gb;
}

}  // namespace

RffBank make_rff_bank(const MlpModel& model, const Mat& probe_x,
                      const std::vector<std::string>& attrs, int n_features,
                      std::uint64_t seed) {
  if (probe_x.rows() < 2)
    throw Error("need at least two samples", "rff probe batch");
  if (n_features < 1) throw Error("dimension mismatch", "rff_features");
  const auto fwd = model.forward(probe_x);
  RffBank bank;
  for (const auto& attr : attrs) {
    const auto it = fwd.features.find(attr);
    if (it == fwd.features.end()) throw Error("no such node", attr);
    const double sigma2 = dependence::median_heuristic_sigma2(it->second);
    bank.maps.emplace(attr, dependence::make_rff_map(
                                static_cast<int>(it->second.cols()), n_features,
                                sigma2, stream_key(seed, "rff", hash_string(attr))));
  }
  bank.ready = true;
  return bank;
}

LossBreakdown loss_total(const MlpModel& model, const scm::RegimeDataset& batch,
                         const TrainConfig& cfg, int epoch, const RffBank& rff,
                         const ParentSets& parents,
                         std::vector<std::string>* warnings) {
  return build_loss_graph(model, batch, cfg, epoch, rff, parents, warnings).breakdown;
}

Vec gradient(const MlpModel& model, const scm::RegimeDataset& batch,
             const TrainConfig& cfg, int epoch, const RffBank& rff,
             const ParentSets& parents, LossBreakdown* breakdown,
             std::vector<std::string>* warnings) {
  GraphBuild gb = build_loss_graph(model, batch, cfg, epoch, rff, parents, warnings);
  gb.tape.backward(gb.total_node);
  Vec flat = Vec::Zero(model.params().size());
  for (const auto& ref : gb.params) {
    const Mat& g = gb.tape.grad(ref.node);
    if (g.size() == 0) continue;
    if (!g.allFinite()) throw Error("non-finite gradient", ref.name);
    std::memcpy(flat.data() + ref.offset, g.data(),
                static_cast<std::size_t>(ref.count) * sizeof(double));
  }
  if (breakdown) *breakdown = gb.breakdown;
  return flat;
}

namespace {

std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t key) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  CounterRng rng(key);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(
        rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

std::vector<std::vector<Eigen::Index>> chunked(const std::vector<Eigen::Index>& idx,
                                               Eigen::Index batch_size) {
  std::vector<std::vector<Eigen::Index>> chunks;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
    chunks.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                        idx.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return chunks;
}

}  // namespace

std::vector<BatchRef> make_batches(const scm::RegimeDataset& obs,
                                   const std::vector<scm::RegimeDataset>& ints,
                                   const TrainConfig& cfg, std::uint64_t epoch_seed) {
  if (obs.n() == 0) throw Error("empty sample", "observational split is empty");
  const Eigen::Index bs = std::max(1, cfg.batch_size);
  std::vector<BatchRef> out;

  const auto obs_chunks =
      chunked(shuffled_indices(obs.n(), stream_key(epoch_seed, "shuffle-obs")), bs);

  if (!cfg.resampled) {
    for (const auto& rows : obs_chunks) out.push_back({-1, rows});
    for (std::size_t s = 0; s < ints.size(); ++s) {
      if (ints[s].n() == 0) continue;
      const auto chunks = chunked(
          shuffled_indices(ints[s].n(),
                           stream_key(epoch_seed, "shuffle-int", static_cast<std::uint64_t>(s))),
          bs);
      for (const auto& rows : chunks) out.push_back({static_cast<int>(s), rows});
    }
    const auto order = shuffled_indices(static_cast<Eigen::Index>(out.size()),
                                        stream_key(epoch_seed, "order"));
    std::vector<BatchRef> shuffled;
    shuffled.reserve(out.size());
    for (const auto i : order) shuffled.push_back(std::move(out[static_cast<std::size_t>(i)]));
    return shuffled;
  }

  if (ints.empty())
    throw Error("empty sample", "resampled batching needs interventional data");
  for (const auto& ds : ints)
    if (ds.n() == 0)
      throw Error("empty sample", "resampled batching needs interventional data");

  for (std::size_t j = 0; j < obs_chunks.size(); ++j) {
    out.push_back({-1, obs_chunks[j]});
    for (std::size_t s = 0; s < ints.size(); ++s) {
      CounterRng rng(stream_key(epoch_seed, "resample", static_cast<std::uint64_t>(s),
                                static_cast<std::uint64_t>(j)));
      std::vector<Eigen::Index> rows(obs_chunks[j].size());
      for (auto& r : rows)
        r = static_cast<Eigen::Index>(
            rng.uniform_int(static_cast<std::uint64_t>(ints[s].n())));
      out.push_back({static_cast<int>(s), std::move(rows)});
    }
  }
  return out;
}

scm::RegimeDataset take_rows(const scm::RegimeDataset& ds,
                             const std::vector<Eigen::Index>& rows) {
  scm::RegimeDataset out;
  out.regime = ds.regime;
  out.intervened = ds.intervened;
  out.seed = ds.seed;
  out.node_ids = ds.node_ids;
  out.attr_names = ds.attr_names;
  out.x = Mat(static_cast<Eigen::Index>(rows.size()), ds.x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.x.row(static_cast<Eigen::Index>(i)) = ds.x.row(rows[i]);
  for (const auto& [name, values] : ds.attrs) {
    scm::AttrValues v;
    v.kind = values.kind;
    v.num_classes = values.num_classes;
    v.values = Mat(static_cast<Eigen::Index>(rows.size()), values.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      v.values.row(static_cast<Eigen::Index>(i)) = values.values.row(rows[i]);
    out.attrs.emplace(name, std::move(v));
  }
  return out;
}

std::map<std::string, double> evaluate_accuracy(const MlpModel& model,
                                                const scm::RegimeDataset& ds) {
  if (ds.n() == 0) throw Error("empty sample", "evaluation split is empty");
  const auto fwd = model.forward(ds.x);
  std::map<std::string, double> out;
  for (const auto& [attr, head] : model.spec().heads) {
    const auto& truth = ds.attr(attr);
    const Mat& logits = fwd.logits.at(attr);
    if (head.num_classes == 0) {
      out[attr] = (logits - truth.values).squaredNorm() / static_cast<double>(ds.n());
      continue;
    }
    Eigen::Index hits = 0;
    for (Eigen::Index r = 0; r < ds.n(); ++r) {
      int best = 0;
      for (int c = 1; c < logits.cols(); ++c)
        if (logits(r, c) > logits(r, best)) best = c;
      if (best == static_cast<int>(std::llround(truth.values(r, 0)))) ++hits;
    }
    out[attr] = 100.0 * static_cast<double>(hits) / static_cast<double>(ds.n());
  }
  return out;
}

namespace {

Mat subsample_rows(const Mat& x, Eigen::Index cap) {
  if (x.rows() <= cap) return x;
  const Eigen::Index stride = x.rows() / cap;
  Mat out(cap, x.cols());
  for (Eigen::Index i = 0; i < cap; ++i) out.row(i) = x.row(i * stride);
  return out;
}

void push_warnings(std::vector<std::string>& sink, std::vector<std::string>& batch_warnings) {
  constexpr std::size_t kMaxKept = 16;
  for (auto& w : batch_warnings)
    if (sink.size() < kMaxKept) sink.push_back(std::move(w));
  batch_warnings.clear();
}

}  // namespace

TrainResult train(const ModelSpec& spec, const TrainData& data,
                  const TrainConfig& cfg, const ParentSets& parents) {
  if (!(cfg.warmup_start_frac >= 0.0 && cfg.warmup_start_frac <= cfg.warmup_end_frac &&
        cfg.warmup_end_frac <= 1.0))
    throw Error("invalid distribution parameter", "warmup fractions must satisfy 0 <= s <= e <= 1");
  if (cfg.epochs < 1) throw Error("empty sample", "epochs must be positive");

  const auto t_start = std::chrono::steady_clock::now();
  TrainResult result{MlpModel(spec, stream_key(cfg.seed, "init")), {}, {}, {}, false, ""};
  MlpModel& model = result.model;

  Vec m = Vec::Zero(model.params().size());
  Vec v = Vec::Zero(model.params().size());
  std::int64_t step = 0;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  std::set<std::string> rff_attrs;
  for (const auto& [target, ps] : parents) {
    rff_attrs.insert(target);
    rff_attrs.insert(ps.begin(), ps.end());
  }
  RffBank bank;
  const bool needs_bank = cfg.lambda_dep > 0.0 && !rff_attrs.empty() &&
                          !data.train_ints.empty();
  const double warm_start = cfg.warmup_start_frac * cfg.epochs;

  result.history.reserve(static_cast<std::size_t>(cfg.epochs));
  std::vector<std::string> batch_warnings;
  double lr_now = cfg.lr;
  int completed = 0;

  for (int epoch = 0; epoch < cfg.epochs && !result.aborted; ++epoch) {
    lr_now = cfg.lr;
    for (const int milestone : cfg.lr_milestones)
      if (epoch >= milestone) lr_now *= cfg.lr_gamma;

    if (needs_bank && !bank.ready && static_cast<double>(epoch) >= warm_start) {
      Eigen::Index probe_rows = 0;
      for (const auto& ds : data.train_ints)
        probe_rows += std::min<Eigen::Index>(ds.n(), cfg.batch_size);
      Mat probe(probe_rows, data.train_ints.front().x.cols());
      Eigen::Index at = 0;
      for (const auto& ds : data.train_ints) {
        const Eigen::Index take = std::min<Eigen::Index>(ds.n(), cfg.batch_size);
        probe.middleRows(at, take) = ds.x.topRows(take);
        at += take;
      }
      bank = make_rff_bank(model, probe,
                           {rff_attrs.begin(), rff_attrs.end()}, cfg.rff_features,
                           stream_key(cfg.seed, "bank"));
    }

    const auto batches = make_batches(data.train_obs, data.train_ints, cfg,
                                      stream_key(cfg.seed, "epoch",
                                                 static_cast<std::uint64_t>(epoch)));
    LossBreakdown epoch_mean;
    for (const auto& bref : batches) {
      const scm::RegimeDataset batch =
          take_rows(bref.source < 0 ? data.train_obs
                                    : data.train_ints[static_cast<std::size_t>(bref.source)],
                    bref.rows);
      LossBreakdown b;
      const Vec g = gradient(model, batch, cfg, epoch, bank, parents, &b, &batch_warnings);
      push_warnings(result.warnings, batch_warnings);
      if (!std::isfinite(b.total)) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
        break;
      }
      ++step;
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      const double mc = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double vc = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      model.params().array() -=
          lr_now * (m.array() / mc) / ((v.array() / vc).sqrt() + kAdamEps);

      epoch_mean.pred += b.pred;
      epoch_mean.dep += b.dep;
      epoch_mean.self_dep += b.self_dep;
      epoch_mean.total += b.total;
      epoch_mean.lambda_dep_effective = b.lambda_dep_effective;
    }
    if (!batches.empty()) {
      const double inv = 1.0 / static_cast<double>(batches.size());
      epoch_mean.pred *= inv;
      epoch_mean.dep *= inv;
      epoch_mean.self_dep *= inv;
      epoch_mean.total *= inv;
    }
    result.history.push_back(epoch_mean);
    if (!result.aborted) completed = epoch + 1;
  }

  result.eval.epochs = completed;
  if (!result.aborted) {
    result.eval.acc_obs = evaluate_accuracy(model, data.eval_obs);
    std::map<std::string, double> acc_int;
    double nhsic_sum = 0.0, kcc_sum = 0.0;
    int dep_terms = 0;
    for (const auto& ds : data.eval_ints) {
      for (const auto& [attr, acc] : evaluate_accuracy(model, ds))
        acc_int[attr] += acc / static_cast<double>(data.eval_ints.size());
      const auto it = parents.find(ds.intervened);
      if (it == parents.end()) continue;
      const auto fwd = model.forward(subsample_rows(ds.x, 2000));
      for (const auto& parent : it->second) {
        const auto rbf = dependence::KernelSpec::rbf_median();
        nhsic_sum += dependence::nhsic(fwd.features.at(parent),
                                       fwd.features.at(ds.intervened), rbf, rbf);
        kcc_sum += dependence::kcc(fwd.features.at(parent),
                                   fwd.features.at(ds.intervened), rbf, rbf);
        ++dep_terms;
      }
    }
    result.eval.acc_int = acc_int;
    for (const auto& [attr, acc] : result.eval.acc_obs)
      if (acc > 0.0 && acc_int.count(attr) && spec.heads.at(attr).num_classes > 0)
        result.eval.rel_delta[attr] = (acc - acc_int.at(attr)) / acc;
    if (dep_terms > 0) {
      result.eval.nhsic_int = nhsic_sum / dep_terms;
      result.eval.kcc_int = kcc_sum / dep_terms;
    }
  }
  result.eval.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

namespace {

json spec_to_json(const ModelSpec& spec) {
  json heads = json::object();
  for (const auto& [attr, head] : spec.heads)
    heads[attr] = {{"extractor_widths", head.extractor_widths},
                   {"feature_dim", head.feature_dim},
                   {"normalize", head.normalize},
                   {"num_classes", head.num_classes},
                   {"regression_dim", head.regression_dim}};
  return {{"input_dim", spec.input_dim},
          {"trunk_widths", spec.trunk_widths},
          {"heads", heads}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.trunk_widths = j.at("trunk_widths").get<std::vector<int>>();
  for (const auto& [attr, h] : j.at("heads").items()) {
    HeadSpec head;
    head.extractor_widths = h.at("extractor_widths").get<std::vector<int>>();
    head.feature_dim = h.at("feature_dim").get<int>();
    head.normalize = h.at("normalize").get<bool>();
    head.num_classes = h.at("num_classes").get<int>();
    head.regression_dim = h.value("regression_dim", 1);
    spec.heads.emplace(attr, std::move(head));
  }
  return spec;
}

json cfg_to_json(const TrainConfig& cfg) {
  return {{"beta", cfg.beta},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"lr_milestones", cfg.lr_milestones},
          {"lr_gamma", cfg.lr_gamma},
          {"lambda_dep", cfg.lambda_dep},
          {"lambda_self", cfg.lambda_self},
          {"warmup_start_frac", cfg.warmup_start_frac},
          {"warmup_end_frac", cfg.warmup_end_frac},
          {"resampled", cfg.resampled},
          {"rff_features", cfg.rff_features},
          {"seed", cfg.seed}};
}

TrainConfig cfg_from_json(const json& j) {
  TrainConfig cfg;
  cfg.beta = j.at("beta").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.lr_milestones = j.at("lr_milestones").get<std::vector<int>>();
  cfg.lr_gamma = j.at("lr_gamma").get<double>();
  cfg.lambda_dep = j.at("lambda_dep").get<double>();
  cfg.lambda_self = j.at("lambda_self").get<double>();
  cfg.warmup_start_frac = j.at("warmup_start_frac").get<double>();
  cfg.warmup_end_frac = j.at("warmup_end_frac").get<double>();
  cfg.resampled = j.at("resampled").get<bool>();
  cfg.rff_features = j.at("rff_features").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

constexpr char kCheckpointMagic[4] = {'R', 'L', 'C', 'K'};

}  // namespace

void save_checkpoint(const std::string& path, const MlpModel& model,
                     const TrainConfig& cfg, int epoch) {
  json meta = {{"spec", spec_to_json(model.spec())},
               {"config", cfg_to_json(cfg)},
               {"epoch", epoch},
               {"n_params", model.params().size()}};
  const std::string header = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io error", "cannot open " + path);
  out.write(kCheckpointMagic, 4);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(sizeof(double) *
                                         static_cast<std::size_t>(model.params().size())));
  if (!out) throw Error("io error", "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io error", "cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw Error("io error", "not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("io error", "truncated checkpoint header");
  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::exception& e) {
    throw Error("io error", std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  ck.spec = spec_from_json(meta.at("spec"));
  ck.cfg = cfg_from_json(meta.at("config"));
  ck.epoch = meta.at("epoch").get<int>();
  const auto n_params = meta.at("n_params").get<std::int64_t>();
  ck.params = Vec(n_params);
  in.read(reinterpret_cast<char*>(ck.params.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(n_params)));
  if (!in) throw Error("io error", "truncated checkpoint parameters");
  return ck;
}

void write_history_csv(const std::string& path,
                       const std::vector<LossBreakdown>& history) {
  std::ofstream out(path);
  if (!out) throw Error("io error", "cannot open " + path);
  out << "epoch,pred,dep,self,total,lambda_eff\n";
  char line[256];
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i,
                  h.pred, h.dep, h.self_dep, h.total, h.lambda_dep_effective);
    out << line;
  }
  if (!out) throw Error("io error", "short write to " + path);
}

}  // namespace replin::training
