#include "replin/dependence.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "replin/rng.hpp"

namespace replin::dependence {

KernelSpec KernelSpec::rbf(double sigma2) {
  if (!(sigma2 > 0.0)) throw Error("invalid kernel", "sigma2 must be > 0");
  return {Kind::Rbf, sigma2};
}

double median_heuristic_sigma2(const Mat& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw Error("need at least two samples");
  const Eigen::Index m = std::min<Eigen::Index>(n, 2000);
  Mat sub(m, x.cols());
  for (Eigen::Index k = 0; k < m; ++k) sub.row(k) = x.row(k * n / m);
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j)
      d2.push_back((sub.row(i) - sub.row(j)).squaredNorm());
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
  double med = d2[mid];
  if (d2.size() % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), d2.begin() + mid);
    med = 0.5 * (med + lower);
  }
  return std::max(med, 1e-12);
}

Mat gram(const Mat& x, const KernelSpec& k) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw Error("need at least two samples");
  if (k.kind == KernelSpec::Kind::Linear) return x * x.transpose();
  const double s2 = k.sigma2 ? *k.sigma2 : median_heuristic_sigma2(x);
  if (!(s2 > 0.0)) throw Error("invalid kernel", "sigma2 must be > 0");
  const Vec sq = x.rowwise().squaredNorm();
  Mat d2 = (-2.0 * x * x.transpose()).colwise() + sq;
  d2.rowwise() += sq.transpose();
  return (d2.array().max(0.0) * (-0.5 / s2)).exp().matrix();
}

Mat center_gram(const Mat& k) {
  const Vec row_mean = k.rowwise().mean();
  const double total = row_mean.mean();
  Mat out = k;
  out.colwise() -= row_mean;
  out.rowwise() -= row_mean.transpose();
  out.array() += total;
  return out;
}

double hsic_from_grams(const Mat& kx, const Mat& ky) {
  const Eigen::Index n = kx.rows();
  if (n < 2 || kx.cols() != n || ky.rows() != n || ky.cols() != n)
    throw Error("need at least two samples");
  const Mat kxc = center_gram(kx);
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return kxc.cwiseProduct(ky).sum() / denom;
}

double hsic(const Mat& x, const Mat& y, const KernelSpec& kx, const KernelSpec& ky) {
  if (x.rows() != y.rows()) throw Error("dimension mismatch", "sample counts differ");
  return hsic_from_grams(gram(x, kx), gram(y, ky));
}

namespace {

bool centered_degenerate(const Mat& k, const Mat& kc) {
  return kc.norm() <= 1e-12 * std::max(k.norm(), 1e-300);
}

}  // namespace

double nhsic(const Mat& x, const Mat& y, const KernelSpec& kx, const KernelSpec& ky) {
  if (x.rows() != y.rows()) throw Error("dimension mismatch", "sample counts differ");
  const Mat gx = gram(x, kx);
  const Mat gy = gram(y, ky);
  const Mat gxc = center_gram(gx);
  const Mat gyc = center_gram(gy);
  if (centered_degenerate(gx, gxc) || centered_degenerate(gy, gyc))
    throw Error("degenerate input: zero self-HSIC");
  const Eigen::Index n = x.rows();
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  const double hxy = gxc.cwiseProduct(gyc).sum() / denom;
  const double hxx = gxc.squaredNorm() / denom;
  const double hyy = gyc.squaredNorm() / denom;
  return std::clamp(hxy / std::sqrt(hxx * hyy), 0.0, 1.0);
}

double kcc(const Mat& x, const Mat& y, const KernelSpec& kx, const KernelSpec& ky,
           double epsilon) {
  if (!(epsilon > 0.0)) throw Error("regularizer must be positive");
  if (x.rows() != y.rows()) throw Error("dimension mismatch", "sample counts differ");
  const Eigen::Index n = x.rows();
  const Mat gxc = center_gram(gram(x, kx));
  const Mat gyc = center_gram(gram(y, ky));
  const double ridge = static_cast<double>(n) * epsilon;

  Eigen::LLT<Mat> lx(gxc + ridge * Mat::Identity(n, n));
  Eigen::LLT<Mat> ly(gyc + ridge * Mat::Identity(n, n));
  if (lx.info() != Eigen::Success || ly.info() != Eigen::Success)
    throw Error("degenerate input: zero self-HSIC", "gram factorization failed");

  // Whitened operators Rx = Kxc (Kxc + ridge I)^-1 applied matrix-free; the
  // top singular value of Rx Ry is found by power iteration on (Rx Ry)^T Rx Ry.
  auto apply_r = [&](const Eigen::LLT<Mat>& llt, const Mat& g, const Vec& v) -> Vec {
    return g * llt.solve(v);
  };
  Vec v = Vec::Ones(n);
  v.normalize();
  double sigma2_est = 0.0;
  for (int it = 0; it < 200; ++it) {
    Vec w = apply_r(ly, gyc, v);
    w = apply_r(lx, gxc, w);
    w = apply_r(lx, gxc, w);
    w = apply_r(ly, gyc, w);
    const double lambda = v.dot(w);
    const double norm = w.norm();
    if (norm <= 0.0) return 0.0;
    w /= norm;
    const bool converged = (w - v).norm() < 1e-10 || (w + v).norm() < 1e-10;
    v = w;
    sigma2_est = lambda;
    if (converged && it > 2) break;
  }
  const double sigma = std::sqrt(std::max(sigma2_est, 0.0));
  return std::clamp(sigma, 0.0, 1.0);
}

double linear_dep(const Mat& fa, const Mat& fb) {
  const Eigen::Index n = fa.rows();
  if (n < 2 || fb.rows() != n) throw Error("need at least two samples");
  const Mat fac = fa.rowwise() - fa.colwise().mean();
  return ((fac.transpose() * fb) / static_cast<double>(n)).squaredNorm();
}

Mat RffMap::features(const Mat& x) const {
  if (x.cols() != w.cols()) throw Error("dimension mismatch", "rff input width");
  Mat z = x * w.transpose();
  z.rowwise() += b.transpose();
  const double scale = std::sqrt(2.0 / static_cast<double>(w.rows()));
  return scale * z.array().cos().matrix();
}

RffMap make_rff_map(int d, int n_features, double sigma2, std::uint64_t seed) {
  if (d <= 0 || n_features <= 0) throw Error("invalid kernel", "rff shape");
  if (!(sigma2 > 0.0)) throw Error("invalid kernel", "sigma2 must be > 0");
  RffMap m;
  m.sigma2 = sigma2;
  m.w.resize(n_features, d);
  m.b.resize(n_features);
  const double inv_sigma = 1.0 / std::sqrt(sigma2);
  CounterRng wr(stream_key(seed, "rff-w"));
  for (int i = 0; i < n_features; ++i)
    for (int j = 0; j < d; ++j) m.w(i, j) = inv_sigma * wr.normal();
  CounterRng br(stream_key(seed, "rff-b"));
  for (int i = 0; i < n_features; ++i) m.b[i] = br.uniform(0.0, 2.0 * M_PI);
  return m;
}

double rff_hsic(const Mat& x, const Mat& y, const RffMap& mx, const RffMap& my) {
  const Eigen::Index n = x.rows();
  if (n < 2 || y.rows() != n) throw Error("need at least two samples");
  Mat zx = mx.features(x);
  Mat zy = my.features(y);
  zx.rowwise() -= zx.colwise().mean();
  zy.rowwise() -= zy.colwise().mean();
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return (zx.transpose() * zy).squaredNorm() / denom;
}

double rff_nhsic(const Mat& x, const Mat& y, const RffMap& mx, const RffMap& my) {
  const Eigen::Index n = x.rows();
  if (n < 2 || y.rows() != n) throw Error("need at least two samples");
  Mat zx = mx.features(x);
  Mat zy = my.features(y);
  zx.rowwise() -= zx.colwise().mean();
  zy.rowwise() -= zy.colwise().mean();
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  const double hxy = (zx.transpose() * zy).squaredNorm() / denom;
  const double hxx = (zx.transpose() * zx).squaredNorm() / denom;
  const double hyy = (zy.transpose() * zy).squaredNorm() / denom;
  if (hxx <= 1e-300 || hyy <= 1e-300)
    throw Error("degenerate input: zero self-HSIC");
  return std::clamp(hxy / std::sqrt(hxx * hyy), 0.0, 1.0);
}

}  // namespace replin::dependence
