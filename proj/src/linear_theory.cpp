#include "replin/linear_theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "replin/generators.hpp"
#include "replin/rng.hpp"
#include "replin/scm_core.hpp"

namespace replin::linear_theory {

namespace {

void require_beta(double beta, bool open) {
  const bool ok = open ? (beta > 0.0 && beta < 1.0) : (beta >= 0.0 && beta <= 1.0);
  if (!ok)
    throw Error("invalid distribution parameter",
                open ? "beta must lie in (0, 1)" : "beta must lie in [0, 1]");
}

}  // namespace

RiskBreakdown interventional_risk(const PsiPair& psi, const ScmParams& p) {
  RiskBreakdown r;
  const double miss = 1.0 - p.w_a * psi.psi1;
  r.e1 = miss * miss * p.var_a + psi.psi1 * psi.psi1 * p.var_ua;
  const double leak = p.w_b * psi.psi2;
  r.e2 = leak * leak * p.var_b_int + psi.psi2 * psi.psi2 * p.var_ub;
  r.total = r.e1 + r.e2;
  return r;
}

PsiPair optimal_erm(const ScmParams& p, double beta) {
  require_beta(beta, /*open=*/true);
  const double u1 = p.w_a * p.w_a * p.var_a + p.var_ua;
  const double v1 = (1.0 - beta) * p.w_a * p.w_b * p.w_ab * p.var_a;
  const double r1 = p.w_a * p.var_a;
  const double u2 = v1;
  const double v2 = beta * p.w_b * p.w_b * p.var_b_int +
                    (1.0 - beta) * p.w_b * p.w_b * p.w_ab * p.w_ab * p.var_a +
                    p.var_ub;
  const double r2 = (1.0 - beta) * p.w_b * p.w_ab * p.var_a;
  const double det = u1 * v2 - v1 * u2;
  const double scale =
      std::max({std::abs(u1), std::abs(v1), std::abs(v2), 1e-300});
  if (std::abs(det) <= 1e-14 * scale * scale)
    throw Error("degenerate SCM", "normal equations for the mixture are singular");
  return {(r1 * v2 - v1 * r2) / det, (u1 * r2 - r1 * u2) / det};
}

SolutionRisks solution_risks(const ScmParams& p, double beta) {
  require_beta(beta, /*open=*/false);
  const double wa2 = p.w_a * p.w_a;
  const double wb2 = p.w_b * p.w_b;
  const double wab2 = p.w_ab * p.w_ab;
  const double den_b =
      (1.0 - beta) * wb2 * wab2 * p.var_a + beta * wb2 * p.var_b_int + p.var_ub;
  const double den_a = wa2 * p.var_a + p.var_ua;
  if (den_a <= 0.0 || den_b <= 0.0)
    throw Error("degenerate SCM", "zero-variance channel in solution risks");
  SolutionRisks s;
  s.j1 = (1.0 - beta) * p.var_a * (beta * wb2 * p.var_b_int + p.var_ub) / den_b +
         beta * p.var_a +
         (1.0 - beta) * wab2 * p.var_a * (beta * wa2 * p.var_a + p.var_ua) / den_a +
         beta * p.var_b_int;
  s.j2 = p.var_a * p.var_ua / den_a +
         ((1.0 - beta) * wab2 * p.var_a + beta * p.var_b_int) * p.var_ub / den_b;
  return s;
}

Prop1Result prop1_check(const ScmParams& p, double beta) {
  Prop1Result r;
  const double wab = std::abs(p.w_ab);
  r.cond1 = wab == 0.0 || beta >= 1.0 - 1.0 / wab;
  const double shift_term = p.var_a / (2.0 * p.var_b_int + p.var_a);
  const double noise_den = p.w_a * p.w_a * p.w_ab * p.w_ab * p.var_a;
  const double noise_term = noise_den > 0.0
                                ? p.var_ua / noise_den
                                : std::numeric_limits<double>::infinity();
  r.cond2 = beta >= std::min(shift_term, noise_term);
  r.satisfied = r.cond1 && r.cond2;
  return r;
}

ScmParams sample_params(const ParamSampler& sampler, std::uint64_t key) {
  CounterRng rng(key);
  auto weight = [&] {
    double w = 0.0;
    do {
      w = rng.uniform(sampler.w_lo, sampler.w_hi);
    } while (std::abs(w) < sampler.w_min_abs);
    return w;
  };
  ScmParams p;
  p.w_a = weight();
  p.w_b = weight();
  p.w_ab = weight();
  p.var_a = rng.uniform(sampler.var_lo, sampler.var_hi);
  p.var_ua = rng.uniform(sampler.var_lo, sampler.var_hi);
  p.var_ub = rng.uniform(sampler.var_lo, sampler.var_hi);
  p.var_b_int = rng.uniform(sampler.var_lo, sampler.var_hi);
  return p;
}

std::vector<MonteCarloRow> monte_carlo_compare(int n_runs,
                                               const std::vector<double>& beta_grid,
                                               const ParamSampler& sampler,
                                               std::uint64_t seed) {
  if (n_runs < 1) throw Error("empty sample", "monte_carlo_compare needs n_runs >= 1");
  std::vector<MonteCarloRow> rows(beta_grid.size());
  for (std::size_t j = 0; j < beta_grid.size(); ++j) rows[j].beta = beta_grid[j];
  for (int run = 0; run < n_runs; ++run) {
    const ScmParams p = sample_params(
        sampler, stream_key(seed, "theory-draw", static_cast<std::uint64_t>(run)));
    for (std::size_t j = 0; j < beta_grid.size(); ++j) {
      const SolutionRisks s = solution_risks(p, beta_grid[j]);
      rows[j].mean_j1 += s.j1;
      rows[j].mean_j2 += s.j2;
      if (s.j1 > s.j2) rows[j].frac_j1_gt_j2 += 1.0;
    }
  }
  const double inv = 1.0 / static_cast<double>(n_runs);
  for (auto& row : rows) {
    row.mean_j1 *= inv;
    row.mean_j2 *= inv;
    row.frac_j1_gt_j2 *= inv;
  }
  return rows;
}

FitResult fit_erm_simulated(const ScmParams& p, double beta, std::int64_t n,
                            std::uint64_t seed) {
  require_beta(beta, /*open=*/false);
  if (n < 2) throw Error("need at least two samples", "fit_erm_simulated");
  const std::int64_t n_int = std::llround(beta * static_cast<double>(n));
  const std::int64_t n_obs = n - n_int;
  const double sd_a = std::sqrt(p.var_a);
  const double sd_ua = std::sqrt(p.var_ua);
  const double sd_ub = std::sqrt(p.var_ub);
  const double sd_bint = std::sqrt(p.var_b_int);

  double s11 = 0, s12 = 0, s22 = 0, sa1 = 0, sa2 = 0;
  double p11 = 0, p12 = 0, p22 = 0;                       // E[x_i x_j a^2]
  double t111 = 0, t112 = 0, t122 = 0, t222 = 0;          // E[x_i x_j x_k a]
  double q1111 = 0, q1112 = 0, q1122 = 0, q1222 = 0, q2222 = 0;

  CounterRng rng(stream_key(seed, "erm-fit"));
  constexpr std::int64_t kBlock = 8192;
  Arr a(kBlock), b(kBlock), z(kBlock), x1(kBlock), x2(kBlock);
  Arr x1sq(kBlock), x2sq(kBlock), x1x2(kBlock), asq(kBlock), ax1(kBlock), ax2(kBlock);

  auto accumulate = [&](std::int64_t count, bool intervened) {
    std::int64_t done = 0;
    while (done < count) {
      const auto m = static_cast<Eigen::Index>(std::min(kBlock, count - done));
      if (m != a.size()) {
        a.resize(m); b.resize(m); z.resize(m); x1.resize(m); x2.resize(m);
        x1sq.resize(m); x2sq.resize(m); x1x2.resize(m);
        asq.resize(m); ax1.resize(m); ax2.resize(m);
      }
      fill_normal(rng, a);
      a *= sd_a;
      if (intervened) {
        fill_normal(rng, b);
        b *= sd_bint;
      } else {
        b = p.w_ab * a;
      }
      fill_normal(rng, z);
      x1 = p.w_a * a + sd_ua * z;
      fill_normal(rng, z);
      x2 = p.w_b * b + sd_ub * z;

      x1sq = x1 * x1;
      x2sq = x2 * x2;
      x1x2 = x1 * x2;
      asq = a * a;
      ax1 = x1 * a;
      ax2 = x2 * a;

      s11 += x1sq.sum();
      s12 += x1x2.sum();
      s22 += x2sq.sum();
      sa1 += ax1.sum();
      sa2 += ax2.sum();
      p11 += (x1sq * asq).sum();
      p12 += (x1x2 * asq).sum();
      p22 += (x2sq * asq).sum();
      t111 += (x1sq * ax1).sum();
      t112 += (x1x2 * ax1).sum();
      t122 += (x2sq * ax1).sum();
      t222 += (x2sq * ax2).sum();
      q1111 += (x1sq * x1sq).sum();
      q1112 += (x1sq * x1x2).sum();
      q1122 += (x1sq * x2sq).sum();
      q1222 += (x1x2 * x2sq).sum();
      q2222 += (x2sq * x2sq).sum();
      done += m;
    }
  };
  accumulate(n_obs, false);
  accumulate(n_int, true);

  const double dn = static_cast<double>(n);
  Eigen::Matrix2d mom;
  mom << s11 / dn, s12 / dn, s12 / dn, s22 / dn;
  const Eigen::Vector2d rhs(sa1 / dn, sa2 / dn);
  const double det = mom(0, 0) * mom(1, 1) - mom(0, 1) * mom(1, 0);
  if (std::abs(det) <= 1e-14 * std::max(1.0, mom.cwiseAbs().maxCoeff()))
    throw Error("degenerate SCM", "sample moment matrix is singular");
  const Eigen::Vector2d psi = mom.inverse() * rhs;

  // Sandwich covariance: Cov = M^-1 E[x x' eps^2] M^-1 / n, with the middle
  // term expanded through third and fourth moments of (x, a).
  auto mid = [&](double pij, double tij1, double tij2, double qij11,
                 double qij12, double qij22) {
    return (pij - 2.0 * (psi(0) * tij1 + psi(1) * tij2) + psi(0) * psi(0) * qij11 +
            2.0 * psi(0) * psi(1) * qij12 + psi(1) * psi(1) * qij22) /
           dn;
  };
  Eigen::Matrix2d meat;
  meat(0, 0) = mid(p11, t111, t112, q1111, q1112, q1122);
  meat(0, 1) = mid(p12, t112, t122, q1112, q1122, q1222);
  meat(1, 0) = meat(0, 1);
  meat(1, 1) = mid(p22, t122, t222, q1122, q1222, q2222);
  const Eigen::Matrix2d minv = mom.inverse();
  const Eigen::Matrix2d cov = minv * meat * minv / dn;

  FitResult out;
  out.psi = {psi(0), psi(1)};
  out.se1 = std::sqrt(std::max(cov(0, 0), 0.0));
  out.se2 = std::sqrt(std::max(cov(1, 1), 0.0));
  return out;
}

namespace {

struct MixtureMoments {
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();      // E[x x'] over the mixture
  Eigen::Matrix2d c_int = Eigen::Matrix2d::Zero();  // centered interventional cov
  Eigen::Vector2d va = Eigen::Vector2d::Zero();
  Eigen::Vector2d vb = Eigen::Vector2d::Zero();
};

MixtureMoments mixture_moments(const Mat& x_obs, const Vec& a_obs, const Vec& b_obs,
                               const Mat& x_int, const Vec& a_int, const Vec& b_int) {
  MixtureMoments mm;
  const double dn = static_cast<double>(x_obs.rows() + x_int.rows());
  mm.m = (x_obs.transpose() * x_obs + x_int.transpose() * x_int) / dn;
  mm.va = (x_obs.transpose() * a_obs + x_int.transpose() * a_int) / dn;
  mm.vb = (x_obs.transpose() * b_obs + x_int.transpose() * b_int) / dn;
  const Eigen::RowVector2d mu = x_int.colwise().mean();
  const Mat centered = x_int.rowwise() - mu;
  mm.c_int = centered.transpose() * centered / static_cast<double>(x_int.rows());
  return mm;
}

void normalize_columns(Mat& theta) {
  for (Eigen::Index j = 0; j < theta.cols(); ++j) {
    const double nrm = theta.col(j).norm();
    if (nrm > 0.0) theta.col(j) /= nrm;
  }
}

}  // namespace

LinearExperimentResult verify_linear_experiment(const ScmParams& p, std::int64_t n,
                                                double beta, int n_seeds,
                                                int feature_dim, double lambda_dep,
                                                std::uint64_t seed) {
  require_beta(beta, /*open=*/true);
  if (feature_dim < 1)
    throw Error("dimension mismatch", "feature_dim must be at least 1");
  if (n < 4) throw Error("need at least two samples", "verify_linear_experiment");
  if (n_seeds < 1) throw Error("empty sample", "verify_linear_experiment needs seeds");

  generators::Linear2Params gp;
  gp.w_a = p.w_a;
  gp.w_b = p.w_b;
  gp.w_ab = p.w_ab;
  gp.var_a = p.var_a;
  gp.var_ua = p.var_ua;
  gp.var_ub = p.var_ub;
  gp.var_b_int = p.var_b_int;
  const generators::Bundle bundle = generators::linear2(gp);
  const scm::CausalGraph graph_int = bundle.intervened("B");

  const std::int64_t n_int = std::max<std::int64_t>(2, std::llround(beta * static_cast<double>(n)));
  const std::int64_t n_obs = std::max<std::int64_t>(2, n - n_int);
  const int d = feature_dim;

  constexpr double kStep = 1e-2;
  constexpr int kMaxIters = 100000;
  constexpr double kGradTol = 1e-8;

  LinearExperimentResult out;
  out.seeds.reserve(static_cast<std::size_t>(n_seeds));

  for (int s = 0; s < n_seeds; ++s) {
    const std::uint64_t run_key = stream_key(seed, "linear-expt", static_cast<std::uint64_t>(s));
    const auto ds_obs = bundle.graph.sample(n_obs, stream_key(run_key, "obs"));
    const auto ds_int = graph_int.sample(n_int, stream_key(run_key, "int"));
    const Vec a_obs = ds_obs.attr("A").values.col(0);
    const Vec b_obs = ds_obs.attr("B").values.col(0);
    const Vec a_int = ds_int.attr("A").values.col(0);
    const Vec b_int = ds_int.attr("B").values.col(0);
    const MixtureMoments mm =
        mixture_moments(ds_obs.x, a_obs, b_obs, ds_int.x, a_int, b_int);

    const Eigen::Vector2d psi_erm_a = mm.m.ldlt().solve(mm.va);

    // LinearIndependence: two linear extractors with unit-norm columns, one
    // linear head each; the cross-covariance of the interventional features
    // is penalized. All terms are quadratic forms in the moment matrices, so
    // the descent never touches the raw samples.
    CounterRng init_rng(stream_key(run_key, "init"));
    Mat th_a(2, d), th_b(2, d);
    for (Eigen::Index i = 0; i < 2; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        th_a(i, j) = init_rng.normal();
        th_b(i, j) = init_rng.normal();
      }
    normalize_columns(th_a);
    normalize_columns(th_b);
    auto head_lsq = [&](const Mat& th, const Eigen::Vector2d& v) -> Vec {
      const Mat gram = th.transpose() * mm.m * th + 1e-12 * Mat::Identity(d, d);
      return gram.ldlt().solve(th.transpose() * v);
    };
    Vec phi_a = head_lsq(th_a, mm.va);
    Vec phi_b = head_lsq(th_b, mm.vb);

    for (int iter = 0; iter < kMaxIters; ++iter) {
      const Eigen::Vector2d psi_a = th_a * phi_a;
      const Eigen::Vector2d psi_b = th_b * phi_b;
      const Eigen::Vector2d ga = 2.0 * (mm.m * psi_a - mm.va);
      const Eigen::Vector2d gb = 2.0 * (mm.m * psi_b - mm.vb);
      const Mat cross = th_a.transpose() * mm.c_int * th_b;  // d x d
      Mat grad_tha = ga * phi_a.transpose() +
                     2.0 * lambda_dep * (mm.c_int * th_b) * cross.transpose();
      Mat grad_thb = gb * phi_b.transpose() +
                     2.0 * lambda_dep * (mm.c_int * th_a) * cross;
      const Vec grad_phia = th_a.transpose() * ga;
      const Vec grad_phib = th_b.transpose() * gb;

      double gnorm2 = grad_phia.squaredNorm() + grad_phib.squaredNorm();
      for (Eigen::Index j = 0; j < d; ++j) {
        const Vec ta = grad_tha.col(j) - grad_tha.col(j).dot(th_a.col(j)) * th_a.col(j);
        const Vec tb = grad_thb.col(j) - grad_thb.col(j).dot(th_b.col(j)) * th_b.col(j);
        gnorm2 += ta.squaredNorm() + tb.squaredNorm();
      }
      if (std::sqrt(gnorm2) < kGradTol) break;

      th_a -= kStep * grad_tha;
      th_b -= kStep * grad_thb;
      normalize_columns(th_a);
      normalize_columns(th_b);
      phi_a -= kStep * grad_phia;
      phi_b -= kStep * grad_phib;
    }

    const Eigen::Vector2d psi_li_a = th_a * phi_a;
    LinearExperimentSeed row;
    row.psi_erm = {psi_erm_a(0), psi_erm_a(1)};
    row.psi_lin_indep = {psi_li_a(0), psi_li_a(1)};
    row.erm = interventional_risk(row.psi_erm, p);
    row.lin_indep = interventional_risk(row.psi_lin_indep, p);
    out.seeds.push_back(row);
  }

  auto mean_of = [&](auto pick) {
    RiskBreakdown m;
    for (const auto& row : out.seeds) {
      const RiskBreakdown& r = pick(row);
      m.e1 += r.e1;
      m.e2 += r.e2;
    }
    m.e1 /= static_cast<double>(out.seeds.size());
    m.e2 /= static_cast<double>(out.seeds.size());
    m.total = m.e1 + m.e2;
    return m;
  };
  out.erm_mean = mean_of([](const LinearExperimentSeed& r) -> const RiskBreakdown& { return r.erm; });
  out.lin_indep_mean =
      mean_of([](const LinearExperimentSeed& r) -> const RiskBreakdown& { return r.lin_indep; });
  return out;
}

}  // namespace replin::linear_theory
