#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "replin/scm_core.hpp"

namespace replin::generators {

// A generator bundle ties the observational graph to the marginals used for
// hard interventions and to the attribute parent sets consumed by training.
struct Bundle {
  scm::CausalGraph graph;
  std::map<std::string, scm::Distribution> intervention_marginals;
  std::map<std::string, std::vector<std::string>> attr_parents;

  scm::CausalGraph intervened(const std::string& target) const;
};

struct WindmillParams {
  int n_arms = 4;
  double r_max = 2.0;
  double theta_wid = 0.9 * M_PI / 4.0;
  double lambda_off = 6.0;
  double theta_max_off = M_PI / 6.0;
  double p_a = 0.6;
  double p_b_int = 0.5;
  double radius_beta_alpha = 1.0;
  double radius_beta_beta = 2.5;
};

Bundle windmill(const WindmillParams& p = {});

// Analytic inverse of the windmill map; returns (a, b). The map is injective:
// the radius threshold r_max/2 separates b and the arm grid separates a.
std::pair<int, int> windmill_decode(const WindmillParams& p, double x0, double x1);

struct FivevarParams {
  double p_root = 0.5;
  double p_int = 0.5;
  int hidden_width = 16;
  int block_dim = 8;
  double noise_var = 0.01;
  std::uint64_t mixing_seed = 0;
  std::map<std::string, int> depths = {
      {"A", 6}, {"B", 4}, {"C", 1}, {"D", 1}, {"E", 1}};
};

// A, B ~ Bernoulli(1/2); C = A or B; D = A and B; E = (not B) and C.
// Interventions are supported on C, D, E only.
Bundle fivevar(const FivevarParams& p = {});

// Pre-noise mixing output for one latent assignment; used to check that both
// regimes share the same mixing weights.
Vec fivevar_mixing(const FivevarParams& p, const std::map<std::string, double>& latents);

struct Linear2Params {
  double w_a = 1.0, w_b = 1.0, w_ab = 1.0;
  double var_a = 1.0, var_ua = 1.0, var_ub = 1.0;
  double var_b_int = 1.0;
};

// Two-variable linear SCM: A ~ N(0, var_a); B = w_ab A observationally,
// B ~ N(0, var_b_int) under intervention; x = (w_a A + U_A, w_b B + U_B).
Bundle linear2(const Linear2Params& p = {});

struct HighdimParams {
  int attr_dim = 10;
  int pad_dim = 80;
  double rho2 = 0.9;
  double attr_noise_var = 0.25;
  std::uint64_t mixing_seed = 0;
  int max_retries = 8;
};

// A ~ N(0, I); B = sqrt(rho2) A + sqrt(1-rho2) eps observationally and
// N(0, I) under intervention; x = W [A + n | B | U] + Z with a fixed
// full-rank mixing W and offset Z drawn from mixing_seed.
Bundle highdim_linear(const HighdimParams& p = {});

}  // namespace replin::generators
