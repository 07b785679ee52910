#include "replin/generators.hpp"

#include <memory>

namespace replin::generators {

using scm::AttrKind;
using scm::CausalGraph;
using scm::Distribution;
using scm::NodeRole;
using scm::NodeSpec;

scm::CausalGraph Bundle::intervened(const std::string& target) const {
  auto it = intervention_marginals.find(target);
  if (it == intervention_marginals.end()) throw Error("unsupported target", target);
  return scm::intervene(graph, target, it->second);
}

Bundle windmill(const WindmillParams& p) {
  if (p.n_arms < 1 || !(p.r_max > 0.0)) throw Error("invalid generator parameter", "windmill");
  Bundle b;

  NodeSpec a;
  a.id = "A";
  a.role = NodeRole::Attribute;
  a.attr_kind = AttrKind::Class;
  a.num_classes = 2;
  a.marginal = Distribution::bernoulli(p.p_a);
  b.graph.add_node(std::move(a));

  NodeSpec bn;
  bn.id = "B";
  bn.parents = {"A"};
  bn.role = NodeRole::Attribute;
  bn.attr_kind = AttrKind::Class;
  bn.num_classes = 2;
  bn.dim = 1;
  bn.fn = [](std::span<const Vec> par, CounterRng&) { return par[0]; };
  b.graph.add_node(std::move(bn));

  NodeSpec x;
  x.id = "X";
  x.parents = {"A", "B"};
  x.role = NodeRole::Signal;
  x.dim = 2;
  const WindmillParams wp = p;
  x.fn = [wp](std::span<const Vec> par, CounterRng& rng) {
    const double av = par[0][0];
    const double bv = par[1][0];
    const double r_b = rng.beta(wp.radius_beta_alpha, wp.radius_beta_beta);
    const double r = 0.5 * wp.r_max * (bv * r_b + (1.0 - bv) * (2.0 - r_b));
    const double arm = 2.0 * M_PI * static_cast<double>(rng.uniform_int(wp.n_arms)) /
                           wp.n_arms +
                       av * M_PI / wp.n_arms;
    const double off = wp.theta_max_off * std::sin(M_PI * wp.lambda_off * r / wp.r_max);
    const double theta = wp.theta_wid * (rng.uniform() - 0.5) + arm + off;
    Vec out(2);
    out << r * std::cos(theta), r * std::sin(theta);
    return out;
  };
  b.graph.add_node(std::move(x));

  b.intervention_marginals["B"] = Distribution::bernoulli(p.p_b_int);
  b.attr_parents = {{"A", {}}, {"B", {"A"}}};
  return b;
}

std::pair<int, int> windmill_decode(const WindmillParams& p, double x0, double x1) {
  const double r = std::hypot(x0, x1);
  const int bv = r <= 0.5 * p.r_max ? 1 : 0;
  const double off = p.theta_max_off * std::sin(M_PI * p.lambda_off * r / p.r_max);
  const double theta = std::atan2(x1, x0) - off;
  const double pitch = 2.0 * M_PI / p.n_arms;
  double m = std::fmod(theta, pitch);
  if (m < 0) m += pitch;
  // Distance to the nearest even-arm center (multiples of pitch) vs the
  // offset centers at pitch/2.
  const double d_even = std::min(m, pitch - m);
  const double d_odd = std::abs(m - 0.5 * pitch);
  return {d_odd < d_even ? 1 : 0, bv};
}

namespace {

struct MlpWeights {
  std::vector<Mat> w;
  std::vector<Vec> b;
};

MlpWeights make_mlp(std::uint64_t seed, const std::string& attr, int depth,
                    int hidden, int out_dim) {
  MlpWeights m;
  int in_dim = 1;
  for (int layer = 0; layer < depth; ++layer) {
    const int out = layer == depth - 1 ? out_dim : hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    Mat w(out, in_dim);
    Vec b(out);
    CounterRng rng(stream_key(seed, "fivevar-mlp", hash_string(attr),
                              static_cast<std::uint64_t>(layer)));
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in_dim; ++j) w(i, j) = rng.uniform(-bound, bound);
      b[i] = rng.uniform(-bound, bound);
    }
    m.w.push_back(std::move(w));
    m.b.push_back(std::move(b));
    in_dim = out;
  }
  return m;
}

Vec mlp_apply(const MlpWeights& m, double v) {
  Vec h = Vec::Constant(1, v);
  for (std::size_t layer = 0; layer < m.w.size(); ++layer)
    h = ((m.w[layer] * h + m.b[layer]).array().max(0.0)).matrix();
  return h;
}

NodeSpec binary_attr(std::string id, std::vector<std::string> parents,
                     scm::MechanismFn fn) {
  NodeSpec n;
  n.id = std::move(id);
  n.parents = std::move(parents);
  n.role = NodeRole::Attribute;
  n.attr_kind = AttrKind::Class;
  n.num_classes = 2;
  n.dim = 1;
  n.fn = std::move(fn);
  return n;
}

}  // namespace

Bundle fivevar(const FivevarParams& p) {
  if (p.hidden_width < 1 || p.block_dim < 1 || !(p.noise_var >= 0.0))
    throw Error("invalid generator parameter", "fivevar");
  Bundle b;

  NodeSpec a;
  a.id = "A";
  a.role = NodeRole::Attribute;
  a.num_classes = 2;
  a.marginal = Distribution::bernoulli(p.p_root);
  b.graph.add_node(std::move(a));

  NodeSpec bb;
  bb.id = "B";
  bb.role = NodeRole::Attribute;
  bb.num_classes = 2;
  bb.marginal = Distribution::bernoulli(p.p_root);
  b.graph.add_node(std::move(bb));

  b.graph.add_node(binary_attr("C", {"A", "B"}, [](std::span<const Vec> par, CounterRng&) {
    return Vec::Constant(1, par[0][0] > 0.5 || par[1][0] > 0.5 ? 1.0 : 0.0);
  }));
  b.graph.add_node(binary_attr("D", {"A", "B"}, [](std::span<const Vec> par, CounterRng&) {
    return Vec::Constant(1, par[0][0] > 0.5 && par[1][0] > 0.5 ? 1.0 : 0.0);
  }));
  b.graph.add_node(binary_attr("E", {"B", "C"}, [](std::span<const Vec> par, CounterRng&) {
    return Vec::Constant(1, par[0][0] < 0.5 && par[1][0] > 0.5 ? 1.0 : 0.0);
  }));

  const std::vector<std::string> latents = {"A", "B", "C", "D", "E"};
  auto mlps = std::make_shared<std::map<std::string, MlpWeights>>();
  for (const auto& id : latents)
    mlps->emplace(id, make_mlp(p.mixing_seed, id, p.depths.at(id), p.hidden_width,
                               p.block_dim));

  NodeSpec x;
  x.id = "X";
  x.parents = latents;
  x.role = NodeRole::Signal;
  x.dim = p.block_dim * static_cast<int>(latents.size());
  const double noise_sd = std::sqrt(p.noise_var);
  const int block = p.block_dim;
  x.fn = [mlps, latents, block, noise_sd](std::span<const Vec> par, CounterRng& rng) {
    Vec out(block * static_cast<int>(latents.size()));
    for (std::size_t k = 0; k < latents.size(); ++k) {
      Vec h = mlp_apply(mlps->at(latents[k]), par[k][0]);
      for (int j = 0; j < block; ++j)
        out[static_cast<int>(k) * block + j] = h[j] + noise_sd * rng.normal();
    }
    return out;
  };
  b.graph.add_node(std::move(x));

  for (const auto& t : {"C", "D", "E"})
    b.intervention_marginals[t] = Distribution::bernoulli(p.p_int);
  b.attr_parents = {{"A", {}},
                    {"B", {}},
                    {"C", {"A", "B"}},
                    {"D", {"A", "B"}},
                    {"E", {"B", "C"}}};
  return b;
}

Vec fivevar_mixing(const FivevarParams& p, const std::map<std::string, double>& latents) {
  const std::vector<std::string> order = {"A", "B", "C", "D", "E"};
  Vec out(p.block_dim * static_cast<int>(order.size()));
  for (std::size_t k = 0; k < order.size(); ++k) {
    const MlpWeights m = make_mlp(p.mixing_seed, order[k], p.depths.at(order[k]),
                                  p.hidden_width, p.block_dim);
    out.segment(static_cast<int>(k) * p.block_dim, p.block_dim) =
        mlp_apply(m, latents.at(order[k]));
  }
  return out;
}

Bundle linear2(const Linear2Params& p) {
  if (!(p.var_a > 0.0) || !(p.var_ua > 0.0) || !(p.var_ub > 0.0) || !(p.var_b_int > 0.0))
    throw Error("invalid generator parameter", "linear2 variances");
  Bundle b;

  NodeSpec a;
  a.id = "A";
  a.role = NodeRole::Attribute;
  a.attr_kind = AttrKind::Real;
  a.marginal = Distribution::normal(0.0, p.var_a);
  b.graph.add_node(std::move(a));

  NodeSpec bn;
  bn.id = "B";
  bn.parents = {"A"};
  bn.role = NodeRole::Attribute;
  bn.attr_kind = AttrKind::Real;
  bn.dim = 1;
  const double w_ab = p.w_ab;
  bn.fn = [w_ab](std::span<const Vec> par, CounterRng&) {
    return Vec::Constant(1, w_ab * par[0][0]);
  };
  b.graph.add_node(std::move(bn));

  NodeSpec x;
  x.id = "X";
  x.parents = {"A", "B"};
  x.role = NodeRole::Signal;
  x.dim = 2;
  const double w_a = p.w_a, w_b = p.w_b;
  const double sd_ua = std::sqrt(p.var_ua), sd_ub = std::sqrt(p.var_ub);
  x.fn = [w_a, w_b, sd_ua, sd_ub](std::span<const Vec> par, CounterRng& rng) {
    Vec out(2);
    out << w_a * par[0][0] + sd_ua * rng.normal(),
        w_b * par[1][0] + sd_ub * rng.normal();
    return out;
  };
  b.graph.add_node(std::move(x));

  b.intervention_marginals["B"] = Distribution::normal(0.0, p.var_b_int);
  b.attr_parents = {{"A", {}}, {"B", {"A"}}};
  return b;
}

Bundle highdim_linear(const HighdimParams& p) {
  if (p.attr_dim < 1 || p.pad_dim < 0 || !(p.rho2 > 0.0 && p.rho2 <= 1.0))
    throw Error("invalid generator parameter", "highdim");
  const int k = p.attr_dim;
  const int total = 2 * k + p.pad_dim;

  Mat w(total, total);
  Vec z(total);
  bool full_rank = false;
  for (int attempt = 0; attempt < p.max_retries && !full_rank; ++attempt) {
    CounterRng rng(stream_key(p.mixing_seed, "highdim-mixing",
                              static_cast<std::uint64_t>(attempt)));
    for (int i = 0; i < total; ++i)
      for (int j = 0; j < total; ++j) w(i, j) = rng.normal();
    for (int i = 0; i < total; ++i) z[i] = rng.normal();
    full_rank = Eigen::ColPivHouseholderQR<Mat>(w).rank() == total;
  }
  if (!full_rank) throw Error("mixing matrix rank deficient");

  Bundle b;
  NodeSpec a;
  a.id = "A";
  a.role = NodeRole::Attribute;
  a.attr_kind = AttrKind::Real;
  a.marginal = Distribution::mv_normal_diag(Vec::Zero(k), Vec::Ones(k));
  b.graph.add_node(std::move(a));

  NodeSpec bn;
  bn.id = "B";
  bn.parents = {"A"};
  bn.role = NodeRole::Attribute;
  bn.attr_kind = AttrKind::Real;
  bn.dim = k;
  const double w_obs = std::sqrt(p.rho2);
  const double sd_obs = std::sqrt(1.0 - p.rho2);
  bn.fn = [w_obs, sd_obs, k](std::span<const Vec> par, CounterRng& rng) {
    Vec out(k);
    for (int i = 0; i < k; ++i) out[i] = w_obs * par[0][i] + sd_obs * rng.normal();
    return out;
  };
  b.graph.add_node(std::move(bn));

  NodeSpec x;
  x.id = "X";
  x.parents = {"A", "B"};
  x.role = NodeRole::Signal;
  x.dim = total;
  const double attr_noise_sd = std::sqrt(p.attr_noise_var);
  const int pad = p.pad_dim;
  x.fn = [w, z, attr_noise_sd, k, pad](std::span<const Vec> par, CounterRng& rng) {
    Vec stacked(2 * k + pad);
    for (int i = 0; i < k; ++i) stacked[i] = par[0][i] + attr_noise_sd * rng.normal();
    stacked.segment(k, k) = par[1];
    for (int i = 0; i < pad; ++i) stacked[2 * k + i] = rng.normal();
    return Vec(w * stacked + z);
  };
  b.graph.add_node(std::move(x));

  b.intervention_marginals["B"] =
      Distribution::mv_normal_diag(Vec::Zero(k), Vec::Ones(k));
  b.attr_parents = {{"A", {}}, {"B", {"A"}}};
  return b;
}

}  // namespace replin::generators
