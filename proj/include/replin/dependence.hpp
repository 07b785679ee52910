#pragma once

#include <cstdint>
#include <optional>

#include "replin/common.hpp"

namespace replin::dependence {

struct KernelSpec {
  enum class Kind { Linear, Rbf };
  Kind kind = Kind::Rbf;
  // Rbf only: fixed bandwidth sigma^2, or empty for the median heuristic
  // (median of pairwise squared distances on a subsample of min(N, 2000)).
  std::optional<double> sigma2;

  static KernelSpec linear() { return {Kind::Linear, std::nullopt}; }
  static KernelSpec rbf(double sigma2);
  static KernelSpec rbf_median() { return {Kind::Rbf, std::nullopt}; }
};

double median_heuristic_sigma2(const Mat& x);

// Gram matrix; rows of x are samples. Requires N >= 2.
Mat gram(const Mat& x, const KernelSpec& k);

// H K H with H = I - (1/N) 11^T.
Mat center_gram(const Mat& k);

// Biased estimator (1/(N-1)^2) Tr[Kx H Ky H].
double hsic(const Mat& x, const Mat& y, const KernelSpec& kx, const KernelSpec& ky);
double hsic_from_grams(const Mat& kx, const Mat& ky);

// hsic(x,y) / sqrt(hsic(x,x) hsic(y,y)), in [0, 1] up to numerical clamp.
double nhsic(const Mat& x, const Mat& y, const KernelSpec& kx, const KernelSpec& ky);

// Largest kernel canonical correlation with ridge regularization N*epsilon,
// computed from the whitened centered Grams; clamped to [0, 1].
double kcc(const Mat& x, const Mat& y, const KernelSpec& kx, const KernelSpec& ky,
           double epsilon = 1e-3);

// Squared Frobenius norm of the cross-covariance (1/N) Fa^T H Fb.
double linear_dep(const Mat& fa, const Mat& fb);

// Random Fourier feature map for the RBF kernel: rows of w ~ N(0, I/sigma2),
// phases ~ U[0, 2pi); z(v) = sqrt(2/D) cos(w v + b).
struct RffMap {
  Mat w;       // D x d
  Vec b;       // D
  double sigma2 = 1.0;

  Mat features(const Mat& x) const;  // N x D
  int dim_in() const { return static_cast<int>(w.cols()); }
  int dim_out() const { return static_cast<int>(w.rows()); }
};

RffMap make_rff_map(int d, int n_features, double sigma2, std::uint64_t seed);

// ||Zx^T H Zy||_F^2 / (N-1)^2 with Z the mapped features.
double rff_hsic(const Mat& x, const Mat& y, const RffMap& mx, const RffMap& my);
double rff_nhsic(const Mat& x, const Mat& y, const RffMap& mx, const RffMap& my);

}  // namespace replin::dependence
