#include <cmath>
#include <cstdint>
#include <vector>

#include <doctest.h>

#include "featprobe/errors.hpp"
#include "featprobe/kernels.hpp"
#include "featprobe/metrics.hpp"
#include "featprobe/rng.hpp"

using namespace featprobe;
using i64 = std::int64_t;

namespace {

FeatureSet make_set(i64 n, i64 d, std::vector<double> data,
                    const std::string& name = "s") {
  return FeatureSet{{n, d}, std::move(data), npy::Dtype::f64, name, name, "test"};
}

FeatureSet gaussian_set(Rng& rng, i64 n, i64 d, double shift = 0.0,
                        double scale = 1.0) {
  std::vector<double> v(n * d);
  rng.fill_normal(v.data(), n * d);
  for (auto& x : v) x = shift + scale * x;
  return make_set(n, d, std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("summarize computes the unbiased moments by hand") {
  auto fs = make_set(3, 2, {1, 2, 3, 4, 5, 12});
  auto s = summarize(fs);
  CHECK(s.count == 3);
  CHECK(s.dim == 2);
  CHECK(s.mean == std::vector<double>{3, 6});
  // Deviations (-2,-4), (0,-2), (2,6) with the N-1 divisor.
  CHECK(s.cov[0] == doctest::Approx(4.0));
  CHECK(s.cov[1] == doctest::Approx(10.0));
  CHECK(s.cov[2] == doctest::Approx(10.0));
  CHECK(s.cov[3] == doctest::Approx(28.0));
  // The mirrored triangle must be exactly symmetric, not just close.
  CHECK(s.cov[1] == s.cov[2]);

  auto two = make_set(2, 1, {0, 1});
  CHECK(summarize(two).cov[0] == doctest::Approx(0.5));
}

TEST_CASE("frechet distance of identical summaries is exactly zero") {
  Rng rng(3);
  auto fs = gaussian_set(rng, 50, 4);
  auto s = summarize(fs);
  CHECK(frechet_distance(s, s) == 0.0);
}

TEST_CASE("frechet distance matches the diagonal closed form") {
  GaussianSummary a, b;
  a.dim = b.dim = 2;
  a.count = b.count = 100;
  a.mean = {0, 0};
  b.mean = {1, 1};
  a.cov = {1, 0, 0, 4};
  b.cov = {9, 0, 0, 16};
  // |mu|^2 + (1-3)^2 + (2-4)^2 = 2 + 4 + 4
  CHECK(frechet_distance(a, b) == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(frechet_distance(b, a) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("frechet distance is rotation invariant") {
  // Rotate both diagonal covariances by the same angle; the distance is
  // unchanged because the trace term only sees the eigenvalue mismatch.
  double th = 0.6;
  double c = std::cos(th), s = std::sin(th);
  auto rot = [&](double l1, double l2) {
    return std::vector<double>{c * c * l1 + s * s * l2, c * s * (l1 - l2),
                               c * s * (l1 - l2), s * s * l1 + c * c * l2};
  };
  GaussianSummary a, b;
  a.dim = b.dim = 2;
  a.count = b.count = 10;
  a.mean = {0, 0};
  b.mean = {0, 0};
  a.cov = rot(1, 4);
  b.cov = rot(9, 16);
  CHECK(frechet_distance(a, b) == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("frechet distance grows with the mean gap") {
  Rng rng(17);
  auto base = gaussian_set(rng, 400, 6);
  auto near = gaussian_set(rng, 400, 6, 0.1);
  auto far = gaussian_set(rng, 400, 6, 2.0);
  auto sb = summarize(base);
  double d_near = frechet_distance(sb, summarize(near));
  double d_far = frechet_distance(sb, summarize(far));
  CHECK(d_near >= 0.0);
  CHECK(d_far > d_near);
  // The mean term alone contributes |shift|^2 * dim = 24.
  CHECK(d_far > 20.0);

  GaussianSummary other;
  other.dim = 3;
  other.count = 2;
  other.mean = {0, 0, 0};
  other.cov = std::vector<double>(9, 0.0);
  CHECK_THROWS_AS(frechet_distance(sb, other), DimensionError);
}

TEST_CASE("unbiased mmd assembly matches a direct computation") {
  Rng rng(21);
  const i64 nx = 31, ny = 24, d = 3;
  auto x = gaussian_set(rng, nx, d);
  auto y = gaussian_set(rng, ny, d, 0.5);

  KernelConfig cfg;
  cfg.gamma = 0.7;
  auto res = kernel_distance(x, y, cfg);
  CHECK(res.gamma_used == 0.7);

  auto kf = [&](const double* a, const double* b) {
    double s = 0.0;
    for (i64 j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::exp(-0.7 * s);
  };
  double sxx = 0, syy = 0, sxy = 0;
  for (i64 i = 0; i < nx; ++i)
    for (i64 j = 0; j < nx; ++j)
      if (i != j) sxx += kf(x.row(i), x.row(j));
  for (i64 i = 0; i < ny; ++i)
    for (i64 j = 0; j < ny; ++j)
      if (i != j) syy += kf(y.row(i), y.row(j));
  for (i64 i = 0; i < nx; ++i)
    for (i64 j = 0; j < ny; ++j) sxy += kf(x.row(i), y.row(j));
  double want = sxx / double(nx * (nx - 1)) + syy / double(ny * (ny - 1)) -
                2.0 * sxy / double(nx * ny);
  CHECK(res.value == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("identical samples give an mmd estimate near zero") {
  Rng rng(22);
  auto x = gaussian_set(rng, 200, 4);
  KernelConfig cfg;
  cfg.gamma = 0.5;
  auto res = kernel_distance(x, x, cfg);
  // The unbiased estimate may dip below zero; it must stay tiny.
  CHECK(std::abs(res.value) < 0.05);
}

TEST_CASE("median heuristic picks a positive deterministic bandwidth") {
  Rng rng(23);
  auto x = gaussian_set(rng, 150, 5);
  auto y = gaussian_set(rng, 150, 5, 0.3);
  auto r1 = kernel_distance(x, y);
  auto r2 = kernel_distance(x, y);
  CHECK(r1.gamma_used > 0.0);
  CHECK(r1.gamma_used == r2.gamma_used);
  CHECK(r1.value == r2.value);

  // All points identical: every pairwise distance is zero and no bandwidth
  // exists.
  auto flat = make_set(10, 2, std::vector<double>(20, 1.0));
  CHECK_THROWS_WITH_AS(kernel_distance(flat, flat),
                       doctest::Contains("degenerate"), NumericError);
}

TEST_CASE("separated clouds score a much larger mmd than matched ones") {
  Rng rng(24);
  auto a1 = gaussian_set(rng, 150, 4);
  auto a2 = gaussian_set(rng, 150, 4);
  auto far = gaussian_set(rng, 150, 4, 4.0);
  KernelConfig cfg;
  cfg.gamma = 0.25;
  double matched = kernel_distance(a1, a2, cfg).value;
  double split = kernel_distance(a1, far, cfg).value;
  CHECK(split > 50.0 * std::max(std::abs(matched), 1e-6));
}

TEST_CASE("polynomial kernel distance matches a direct computation") {
  Rng rng(25);
  const i64 n = 20, d = 4;
  auto x = gaussian_set(rng, n, d);
  auto y = gaussian_set(rng, n, d, 0.4);
  KernelConfig cfg;
  cfg.kind = KernelConfig::Kind::poly;
  auto res = kernel_distance(x, y, cfg);
  CHECK(res.gamma_used == 0.0);

  double scale = 1.0 / d;
  auto kf = [&](const double* a, const double* b) {
    double dot = 0.0;
    for (i64 j = 0; j < d; ++j) dot += a[j] * b[j];
    return std::pow(scale * dot + 1.0, 3);
  };
  double sxx = 0, syy = 0, sxy = 0;
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < n; ++j) {
      if (i != j) {
        sxx += kf(x.row(i), x.row(j));
        syy += kf(y.row(i), y.row(j));
      }
      sxy += kf(x.row(i), y.row(j));
    }
  double want = (sxx + syy) / double(n * (n - 1)) - 2.0 * sxy / double(n * n);
  CHECK(res.value == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("paired cosine hits the exact endpoints") {
  auto x = make_set(3, 2, {1, 0, 0, 2, 3, 3});
  auto same = cosine_similarity_paired(x, x);
  CHECK(same.value == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(same.zero_pairs == 0);

  auto neg = make_set(3, 2, {-1, 0, 0, -2, -3, -3});
  CHECK(cosine_similarity_paired(x, neg).value ==
        doctest::Approx(-1.0).epsilon(1e-14));

  auto orth = make_set(3, 2, {0, 1, -2, 0, 3, -3});
  CHECK(cosine_similarity_paired(x, orth).value ==
        doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("paired cosine skips zero vectors and reports them") {
  auto x = make_set(3, 2, {1, 0, 0, 0, 0, 1});
  auto y = make_set(3, 2, {1, 0, 1, 1, 0, 1});
  auto res = cosine_similarity_paired(x, y);
  CHECK(res.zero_pairs == 1);
  CHECK(res.value == doctest::Approx(1.0).epsilon(1e-14));

  auto zeros = make_set(2, 2, {0, 0, 0, 0});
  CHECK_THROWS_AS(cosine_similarity_paired(zeros, zeros), DataError);

  auto wide = make_set(3, 3, std::vector<double>(9, 1.0));
  CHECK_THROWS_AS(cosine_similarity_paired(x, wide), DimensionError);
}

TEST_CASE("per-dimension gaussian mi matches the correlation formula") {
  auto x = make_set(4, 1, {1, 2, 3, 4});
  auto y = make_set(4, 1, {1, 2, 3, 5});
  auto res = mi_1d_gauss(x, y);

  // Pearson rho computed separately.
  double mx = 2.5, my = 2.75;
  double vxx = 0, vyy = 0, vxy = 0;
  for (int i = 0; i < 4; ++i) {
    double cx = x.data[i] - mx, cy = y.data[i] - my;
    vxx += cx * cx;
    vyy += cy * cy;
    vxy += cx * cy;
  }
  double rho = vxy / std::sqrt(vxx * vyy);
  CHECK(res.per_dim[0] ==
        doctest::Approx(-0.5 * std::log1p(-rho * rho)).epsilon(1e-14));
  CHECK(res.total == res.per_dim[0]);
}

TEST_CASE("gaussian mi of independent columns is near zero") {
  Rng rng(31);
  auto x = gaussian_set(rng, 4000, 3);
  auto y = gaussian_set(rng, 4000, 3);
  auto res = mi_1d_gauss(x, y);
  CHECK(res.total < 0.01);
  CHECK(res.degenerate_dims.empty());
}

TEST_CASE("a constant column is flagged degenerate and contributes nothing") {
  auto x = make_set(3, 2, {1, 5, 2, 5, 3, 5});
  auto y = make_set(3, 2, {1, 1, 2, 2, 3, 4});
  auto res = mi_1d_gauss(x, y);
  REQUIRE(res.degenerate_dims.size() == 1);
  CHECK(res.degenerate_dims[0] == 1);
  CHECK(res.per_dim[1] == 0.0);
  CHECK(res.per_dim[0] > 0.0);
}

TEST_CASE("perfectly dependent columns saturate at the clamp") {
  auto x = make_set(3, 1, {1, 2, 3});
  auto res = mi_1d_gauss(x, x);
  // rho clamps at 1 - 1e-12; the resulting MI is large but finite.
  CHECK(std::isfinite(res.total));
  CHECK(res.total > 10.0);
}

TEST_SUITE_END();
