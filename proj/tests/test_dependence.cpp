#include <doctest.h>

#include <cmath>
#include <vector>

#include "replin/dependence.hpp"
#include "replin/rng.hpp"

using replin::Error;
using replin::Mat;
using replin::Vec;
using namespace replin::dependence;

namespace {

Mat random_mat(Eigen::Index n, Eigen::Index d, std::uint64_t key) {
  replin::CounterRng rng(key);
  Mat m(n, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < n; ++i) m(i, j) = rng.normal();
  return m;
}

// Literal double-loop version of the biased estimator, kept independent of
// the production code paths.
double hsic_reference(const Mat& kx, const Mat& ky) {
  const Eigen::Index n = kx.rows();
  Mat h = Mat::Identity(n, n) - Mat::Constant(n, n, 1.0 / static_cast<double>(n));
  Mat a = h * kx * h;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) acc += a(i, j) * ky(i, j);
  const double nm1 = static_cast<double>(n - 1);
  return acc / (nm1 * nm1);
}

double rbf_entry(const Mat& x, Eigen::Index i, Eigen::Index j, double s2) {
  return std::exp(-0.5 * (x.row(i) - x.row(j)).squaredNorm() / s2);
}

}  // namespace

TEST_CASE("gram matches elementwise kernel evaluation") {
  const Mat x = random_mat(17, 3, 11);

  Mat gl = gram(x, KernelSpec::linear());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      CHECK(gl(i, j) == doctest::Approx(x.row(i).dot(x.row(j))).epsilon(1e-12));

  const double s2 = 0.7;
  Mat gr = gram(x, KernelSpec::rbf(s2));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      CHECK(gr(i, j) == doctest::Approx(rbf_entry(x, i, j, s2)).epsilon(1e-12));
  CHECK(gr.diagonal().isApproxToConstant(1.0, 1e-12));
}

TEST_CASE("hsic agrees with the double-loop reference") {
  const Mat x = random_mat(40, 2, 21);
  const Mat y = random_mat(40, 2, 22);
  for (const auto& kx : {KernelSpec::linear(), KernelSpec::rbf(1.3)}) {
    for (const auto& ky : {KernelSpec::linear(), KernelSpec::rbf(0.6)}) {
      const double got = hsic(x, y, kx, ky);
      const double want = hsic_reference(gram(x, kx), gram(y, ky));
      CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("hsic is symmetric and nonnegative for identical kernels") {
  const Mat x = random_mat(30, 1, 31);
  const Mat y = random_mat(30, 1, 32);
  const KernelSpec k = KernelSpec::rbf(1.0);
  CHECK(hsic(x, y, k, k) == doctest::Approx(hsic(y, x, k, k)).epsilon(1e-12));
  CHECK(hsic(x, x, k, k) > 0.0);
}

TEST_CASE("nhsic is 1 for a variable against itself and small under independence") {
  const Mat x = random_mat(300, 1, 41);
  const Mat y = random_mat(300, 1, 42);
  const KernelSpec k = KernelSpec::rbf_median();
  CHECK(nhsic(x, x, k, k) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(nhsic(x, y, k, k) < 0.05);

  // A deterministic relationship scores far above the independent pair.
  Mat z = x.array().sin().matrix();
  CHECK(nhsic(x, z, k, k) > 10.0 * nhsic(x, y, k, k));
  CHECK(nhsic(x, z, k, k) <= 1.0);
}

TEST_CASE("nhsic ranks noisier copies lower") {
  const Eigen::Index n = 400;
  Mat x = random_mat(n, 1, 52);
  Mat noise = random_mat(n, 1, 53);
  const KernelSpec k = KernelSpec::rbf_median();
  double prev = 2.0;
  for (double s : {0.0, 0.5, 2.0}) {
    Mat y = x + s * noise;
    const double v = nhsic(x, y, k, k);
    CHECK(v < prev + 1e-12);
    prev = v;
  }
}

TEST_CASE("nhsic invariance under shift and positive scaling with linear kernel removed by centering") {
  // Centering makes the linear-kernel statistic shift invariant; scale shows
  // up in hsic but cancels in nhsic.
  const Mat x = random_mat(60, 1, 61);
  const Mat y0 = random_mat(60, 1, 62);
  const Mat y = x + 0.3 * y0;
  const KernelSpec k = KernelSpec::linear();
  const double base = nhsic(x, y, k, k);
  Mat ys = 5.0 * y;
  Mat yt = y.array() + 7.0;
  CHECK(nhsic(x, ys, k, k) == doctest::Approx(base).epsilon(1e-10));
  CHECK(nhsic(x, yt, k, k) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("permutation destroys dependence") {
  const Eigen::Index n = 500;
  Mat x = random_mat(n, 1, 71);
  Mat y = (2.0 * x.array() + 0.1).matrix();
  // Deterministic Fisher-Yates driven by the counter rng.
  Mat yp = y;
  replin::CounterRng rng(72);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    yp.row(i).swap(yp.row(j));
  }
  const KernelSpec k = KernelSpec::rbf_median();
  CHECK(nhsic(x, y, k, k) > 0.5);
  CHECK(nhsic(x, yp, k, k) < 0.05);
}

TEST_CASE("median heuristic equals the median of pairwise squared distances") {
  // Five points on a line: pairwise squared distances are {1,4,9,16,1,4,9,1,4,1},
  // sorted {1,1,1,1,4,4,4,9,9,16}; even count, so the midpoint average is 4.
  Mat x(5, 1);
  x << 0, 1, 2, 3, 4;
  CHECK(median_heuristic_sigma2(x) == doctest::Approx(4.0).epsilon(1e-12));

  Mat y(3, 1);
  y << 0, 1, 3;
  // Distances {1, 9, 4} -> median 4.
  CHECK(median_heuristic_sigma2(y) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("kcc basic properties") {
  const Mat x = random_mat(200, 1, 81);
  const Mat y = random_mat(200, 1, 82);
  const KernelSpec k = KernelSpec::rbf_median();

  const double self = kcc(x, x, k, k);
  CHECK(self > 0.9);
  CHECK(self <= 1.0);

  const double indep = kcc(x, y, k, k);
  CHECK(indep >= 0.0);
  CHECK(indep < 0.5);

  Mat z = (x.array() * 2.0 - 1.0).matrix();
  const double dep = kcc(x, z, k, k);
  CHECK(dep > indep);

  CHECK(kcc(x, y, k, k) == doctest::Approx(kcc(y, x, k, k)).epsilon(1e-6));
  CHECK_THROWS_WITH_AS(kcc(x, y, k, k, 0.0), doctest::Contains("regularizer must be positive"),
                       Error);
}

TEST_CASE("kcc shrinks as the ridge grows") {
  const Mat x = random_mat(150, 1, 91);
  Mat y = x + 0.2 * random_mat(150, 1, 92);
  const KernelSpec k = KernelSpec::rbf_median();
  const double tight = kcc(x, y, k, k, 1e-4);
  const double loose = kcc(x, y, k, k, 1e-1);
  CHECK(tight > loose);
}

TEST_CASE("linear_dep matches the explicit cross-covariance norm") {
  const Mat fa = random_mat(80, 3, 101);
  const Mat fb = random_mat(80, 2, 102);
  Mat fac = fa.rowwise() - fa.colwise().mean();
  Mat cross = (fac.transpose() * fb) / 80.0;
  CHECK(linear_dep(fa, fb) == doctest::Approx(cross.squaredNorm()).epsilon(1e-12));

  // Independent columns in the population sense give a small value.
  CHECK(linear_dep(fa, fb) < 0.1);
  // Identical features give the squared Frobenius norm of the covariance.
  Mat cov = (fac.transpose() * fa) / 80.0;
  CHECK(linear_dep(fa, fa) == doctest::Approx(cov.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("rff features approximate the rbf kernel") {
  const double s2 = 1.5;
  const Mat x = random_mat(60, 2, 111);
  RffMap m = make_rff_map(2, 8192, s2, 7);
  CHECK(m.dim_in() == 2);
  CHECK(m.dim_out() == 8192);
  Mat z = m.features(x);
  Mat approx = z * z.transpose();
  Mat exact = gram(x, KernelSpec::rbf(s2));
  CHECK((approx - exact).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("rff hsic and nhsic converge to the exact statistics") {
  const Eigen::Index n = 250;
  Mat x = random_mat(n, 1, 121);
  Mat y = x + 0.5 * random_mat(n, 1, 122);
  const double sx = median_heuristic_sigma2(x);
  const double sy = median_heuristic_sigma2(y);
  RffMap mx = make_rff_map(1, 4096, sx, 1);
  RffMap my = make_rff_map(1, 4096, sy, 2);

  const double exact_h = hsic(x, y, KernelSpec::rbf(sx), KernelSpec::rbf(sy));
  const double exact_n = nhsic(x, y, KernelSpec::rbf(sx), KernelSpec::rbf(sy));
  CHECK(rff_hsic(x, y, mx, my) == doctest::Approx(exact_h).epsilon(0.15));
  CHECK(rff_nhsic(x, y, mx, my) == doctest::Approx(exact_n).epsilon(0.1));
  CHECK(rff_nhsic(x, y, mx, my) >= 0.0);
  CHECK(rff_nhsic(x, y, mx, my) <= 1.0);
}

TEST_CASE("rff map is deterministic in the seed") {
  RffMap a = make_rff_map(3, 32, 1.0, 42);
  RffMap b = make_rff_map(3, 32, 1.0, 42);
  RffMap c = make_rff_map(3, 32, 1.0, 43);
  CHECK(a.w == b.w);
  CHECK(a.b == b.b);
  CHECK(a.w != c.w);
}

TEST_CASE("input validation") {
  Mat one(1, 1);
  one << 0.5;
  Mat x = random_mat(10, 1, 131);
  Mat y = random_mat(12, 1, 132);
  const KernelSpec k = KernelSpec::rbf(1.0);

  CHECK_THROWS_WITH_AS(gram(one, k), doctest::Contains("need at least two samples"), Error);
  CHECK_THROWS_WITH_AS(median_heuristic_sigma2(one),
                       doctest::Contains("need at least two samples"), Error);
  CHECK_THROWS_WITH_AS(hsic(x, y, k, k), doctest::Contains("dimension mismatch"), Error);
  CHECK_THROWS_WITH_AS(nhsic(x, y, k, k), doctest::Contains("dimension mismatch"), Error);
  CHECK_THROWS_AS(KernelSpec::rbf(0.0), Error);
  CHECK_THROWS_AS(make_rff_map(0, 16, 1.0, 0), Error);
  CHECK_THROWS_AS(make_rff_map(2, 16, -1.0, 0), Error);

  Mat c = Mat::Constant(20, 1, 3.0);
  CHECK_THROWS_WITH_AS(nhsic(c, c, KernelSpec::linear(), KernelSpec::linear()),
                       doctest::Contains("degenerate input"), Error);

  RffMap m = make_rff_map(2, 16, 1.0, 0);
  CHECK_THROWS_WITH_AS(m.features(x), doctest::Contains("dimension mismatch"), Error);
  Mat x2 = random_mat(10, 2, 133);
  Mat y2 = random_mat(12, 2, 134);
  CHECK_THROWS_WITH_AS(rff_hsic(x2, y2, m, m),
                       doctest::Contains("need at least two samples"), Error);
}
