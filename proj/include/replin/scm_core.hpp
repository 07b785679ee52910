#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "replin/common.hpp"
#include "replin/rng.hpp"

namespace replin::scm {

struct Distribution {
  enum class Kind { Bernoulli, Uniform, Normal, MvNormal, Beta, Categorical };

  Kind kind = Kind::Normal;
  double p = 0.5;                 // Bernoulli
  double lo = 0.0, hi = 1.0;      // Uniform
  double mean = 0.0, var = 1.0;   // Normal
  Vec mu;                         // MvNormal
  Vec cov_diag;                   // MvNormal with diagonal covariance
  Mat chol;                       // MvNormal with full covariance (L factor)
  double alpha = 1.0, beta = 1.0; // Beta
  Vec probs;                      // Categorical

  static Distribution bernoulli(double p);
  static Distribution uniform(double lo, double hi);
  static Distribution normal(double mean, double var);
  static Distribution mv_normal_diag(Vec mu, Vec var_diag);
  static Distribution mv_normal(Vec mu, const Mat& cov);
  static Distribution beta_dist(double alpha, double beta);
  static Distribution categorical(Vec probs);

  int dim() const;
  Vec draw(CounterRng& rng) const;
};

enum class NodeRole { Attribute, Signal };
enum class AttrKind { Class, Real };

using MechanismFn = std::function<Vec(std::span<const Vec>, CounterRng&)>;

struct NodeSpec {
  std::string id;
  std::vector<std::string> parents;
  NodeRole role = NodeRole::Attribute;
  AttrKind attr_kind = AttrKind::Class;
  int num_classes = 2;
  int dim = 1;
  // Exactly one of `marginal` (exogenous node) or `fn` must be set. `fn` must
  // be pure given the parent values and the provided random stream.
  std::optional<Distribution> marginal;
  MechanismFn fn;
};

enum class Regime { Observational, Intervened };

struct AttrValues {
  AttrKind kind = AttrKind::Class;
  int num_classes = 0;  // Class only
  Mat values;           // N x dim; Class stores labels in column 0
};

struct RegimeDataset {
  Regime regime = Regime::Observational;
  std::string intervened;  // node id; empty when observational
  std::uint64_t seed = 0;
  std::vector<std::string> node_ids;  // all nodes, topological order
  Mat x;                              // N x d, concatenated Signal nodes
  std::vector<std::string> attr_names;
  std::map<std::string, AttrValues> attrs;

  Eigen::Index n() const { return x.rows(); }
  const AttrValues& attr(const std::string& name) const;
};

// Directed acyclic graph of mechanisms. Nodes must be added parents-first,
// which makes insertion order a topological order.
class CausalGraph {
 public:
  void add_node(NodeSpec spec);

  bool has_node(const std::string& id) const;
  const NodeSpec& node(const std::string& id) const;
  const std::vector<std::string>& order() const { return order_; }
  const std::vector<std::string>& parents(const std::string& id) const;
  const std::string& intervened_node() const { return intervened_; }
  Regime regime() const {
    return intervened_.empty() ? Regime::Observational : Regime::Intervened;
  }

  RegimeDataset sample(std::int64_t n, std::uint64_t seed) const;

 private:
  friend CausalGraph intervene(const CausalGraph&, const std::string&,
                               const Distribution&);
  std::vector<std::string> order_;
  std::map<std::string, NodeSpec> nodes_;
  std::string intervened_;
};

struct InterventionSpec {
  std::string target;
  Distribution marginal;
};

// Hard intervention: severs the target's parent edges and replaces its
// mechanism with an exogenous draw from `marginal`. Descendants keep their
// mechanisms and see the intervened values.
CausalGraph intervene(const CausalGraph& g, const std::string& target,
                      const Distribution& marginal);
CausalGraph intervene(const CausalGraph& g, const InterventionSpec& spec);

// Binary container: "RLDS" magic, little-endian u64 header length, JSON
// header, then row-major float64 blobs (x, then each attribute in order).
void save_dataset(const RegimeDataset& ds, const std::string& path);
RegimeDataset load_dataset(const std::string& path);
void export_csv(const RegimeDataset& ds, const std::string& path);

}  // namespace replin::scm
