#pragma once

#include <cstdint>
#include <vector>

#include "replin/common.hpp"

namespace replin::linear_theory {

struct ScmParams {
  double w_a = 1.0, w_b = 1.0, w_ab = 1.0;
  double var_a = 1.0, var_ua = 1.0, var_ub = 1.0;
  double var_b_int = 1.0;
};

struct PsiPair {
  double psi1 = 0.0, psi2 = 0.0;
};

struct RiskBreakdown {
  double e1 = 0.0, e2 = 0.0, total = 0.0;
};

// Interventional squared-error decomposition of the A predictor:
// e1 = (1 - w_a psi1)^2 var_a + psi1^2 var_ua; e2 = (w_b psi2)^2 var_b_int
// + psi2^2 var_ub.
RiskBreakdown interventional_risk(const PsiPair& psi, const ScmParams& p);

// Exact solution of the beta-mixture normal equations for the A predictor.
PsiPair optimal_erm(const ScmParams& p, double beta);

struct SolutionRisks {
  double j1 = 0.0, j2 = 0.0;
};

// Combined training risks of the two constrained solution families:
// S1 predicts each attribute through the other's channel (psi_a1 = 0,
// psi_b2 = 0), S2 keeps channels separate (psi_a2 = 0, psi_b1 = 0).
SolutionRisks solution_risks(const ScmParams& p, double beta);

struct Prop1Result {
  bool cond1 = false, cond2 = false, satisfied = false;
};

// Sufficient conditions under which the cross-channel solution S1 has
// strictly larger training risk than S2.
Prop1Result prop1_check(const ScmParams& p, double beta);

struct ParamSampler {
  double w_lo = -2.0, w_hi = 2.0, w_min_abs = 0.05;
  double var_lo = 0.1, var_hi = 2.0;
};

ScmParams sample_params(const ParamSampler& sampler, std::uint64_t key);

struct MonteCarloRow {
  double beta = 0.0, mean_j1 = 0.0, mean_j2 = 0.0, frac_j1_gt_j2 = 0.0;
};

std::vector<MonteCarloRow> monte_carlo_compare(int n_runs,
                                               const std::vector<double>& beta_grid,
                                               const ParamSampler& sampler,
                                               std::uint64_t seed);

struct FitResult {
  PsiPair psi;
  double se1 = 0.0, se2 = 0.0;  // sandwich standard errors of the fit
};

// Streaming least-squares fit of the A predictor on n simulated mixture
// samples (round(beta*n) interventional). Matches optimal_erm up to
// sampling noise; the standard errors quantify that noise.
FitResult fit_erm_simulated(const ScmParams& p, double beta, std::int64_t n,
                            std::uint64_t seed);

struct LinearExperimentSeed {
  RiskBreakdown erm;
  RiskBreakdown lin_indep;
  PsiPair psi_erm, psi_lin_indep;
};

struct LinearExperimentResult {
  std::vector<LinearExperimentSeed> seeds;
  RiskBreakdown erm_mean, lin_indep_mean;
};

// Trains linear feature extractors (unit-norm columns) plus linear heads on
// mixed linear2 data: ERM by least squares, LinearIndependence by projected
// gradient descent with the cross-covariance penalty on the interventional
// part. Reports the risk decomposition of the A predictor per seed.
LinearExperimentResult verify_linear_experiment(const ScmParams& p, std::int64_t n,
                                                double beta, int n_seeds,
                                                int feature_dim = 2,
                                                double lambda_dep = 10.0,
                                                std::uint64_t seed = 0);

}  // namespace replin::linear_theory
