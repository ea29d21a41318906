#include "featprobe/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "featprobe/errors.hpp"
#include "featprobe/kernels.hpp"
#include "featprobe/rng.hpp"

namespace featprobe {

using i64 = std::int64_t;
using Matrix = Eigen::MatrixXd;

namespace {

void require_flat(const FeatureSet& fs, const char* op) {
  if (fs.shape.size() != 2)
    throw ConfigError(std::string(op) +
                      ": expects [N, D] input; pool or flatten tokenised "
                      "features first");
}

void require_same_dim(const FeatureSet& x, const FeatureSet& y, const char* op) {
  if (x.dim() != y.dim())
    throw DimensionError(std::string(op) + ": feature dimensions disagree: " +
                         std::to_string(x.dim()) + " vs " +
                         std::to_string(y.dim()));
}

}  // namespace

GaussianSummary summarize(const FeatureSet& fs) {
  require_flat(fs, "summarize");
  i64 n = fs.n(), d = fs.dim();
  if (n < 2)
    throw DataError("summarize: need at least 2 samples for a covariance");
  GaussianSummary s;
  s.dim = d;
  s.count = n;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (i64 i = 0; i < n; ++i) {
    const double* row = fs.data.data() + i * d;
    for (i64 j = 0; j < d; ++j) s.mean[static_cast<std::size_t>(j)] += row[j];
  }
  for (double& v : s.mean) v /= static_cast<double>(n);

  s.cov.assign(static_cast<std::size_t>(d * d), 0.0);
  // Upper triangle, mirrored afterwards, so symmetry is exact by
  // construction rather than up to rounding.
  for (i64 i = 0; i < n; ++i) {
    const double* row = fs.data.data() + i * d;
    for (i64 a = 0; a < d; ++a) {
      double ca = row[a] - s.mean[static_cast<std::size_t>(a)];
      for (i64 b = a; b < d; ++b) {
        s.cov[static_cast<std::size_t>(a * d + b)] +=
            ca * (row[b] - s.mean[static_cast<std::size_t>(b)]);
      }
    }
  }
  double denom = static_cast<double>(n - 1);
  for (i64 a = 0; a < d; ++a)
    for (i64 b = a; b < d; ++b) {
      double v = s.cov[static_cast<std::size_t>(a * d + b)] / denom;
      s.cov[static_cast<std::size_t>(a * d + b)] = v;
      s.cov[static_cast<std::size_t>(b * d + a)] = v;
    }
  return s;
}

namespace {

// Symmetric PSD square root with relative clamping of small eigenvalues.
Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success)
    throw NumericError("frechet_distance: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  double top = ev.cwiseAbs().maxCoeff();
  double floor = 1e-8 * top;
  Eigen::VectorXd root(ev.size());
  for (i64 i = 0; i < ev.size(); ++i)
    root(i) = ev(i) > floor ? std::sqrt(ev(i)) : 0.0;
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dim != b.dim)
    throw DimensionError("frechet_distance: summary dimensions disagree: " +
                         std::to_string(a.dim) + " vs " + std::to_string(b.dim));
  // A distribution is at distance zero from itself; identical moments skip
  // the eigensolver so the zero is exact.
  if (a.mean == b.mean && a.cov == b.cov) return 0.0;

  i64 d = a.dim;
  double mean_term = 0.0;
  for (i64 i = 0; i < d; ++i) {
    double diff = a.mean[static_cast<std::size_t>(i)] -
                  b.mean[static_cast<std::size_t>(i)];
    mean_term += diff * diff;
  }
  Eigen::Map<const Matrix> ca(a.cov.data(), d, d);
  Eigen::Map<const Matrix> cb(b.cov.data(), d, d);
  Matrix sa = psd_sqrt(ca);
  Matrix inner = sa * cb * sa;
  // Symmetrise away the rounding skew before the second root.
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(inner);
  if (es.info() != Eigen::Success)
    throw NumericError("frechet_distance: eigendecomposition failed");
  double cross = 0.0;
  for (i64 i = 0; i < d; ++i) {
    double ev = es.eigenvalues()(i);
    if (ev > 0.0) cross += std::sqrt(ev);
  }
  double value = mean_term + ca.trace() + cb.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

namespace {

double median_heuristic_gamma(const FeatureSet& x, const FeatureSet& y,
                              const KernelConfig& cfg) {
  i64 d = x.dim();
  i64 total = x.n() + y.n();
  i64 take = std::min<i64>(cfg.bandwidth_samples, total);
  // Pool both sets, subsample without replacement when over budget.
  std::vector<double> pool(static_cast<std::size_t>(take * d));
  if (take == total) {
    std::copy(x.data.begin(), x.data.end(), pool.begin());
    std::copy(y.data.begin(), y.data.end(),
              pool.begin() + static_cast<std::ptrdiff_t>(x.data.size()));
  } else {
    Rng rng(cfg.bandwidth_seed);
    std::vector<i64> perm = rng.permutation(total);
    for (i64 i = 0; i < take; ++i) {
      i64 src = perm[static_cast<std::size_t>(i)];
      const double* row = src < x.n() ? x.data.data() + src * d
                                      : y.data.data() + (src - x.n()) * d;
      std::copy(row, row + d, pool.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
  }
  i64 pairs = take * (take - 1) / 2;
  std::vector<double> dists(static_cast<std::size_t>(pairs));
  kernels::pairwise_sq_dists(pool.data(), take, d, dists.data());
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(pairs / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double median_sq = *mid;
  if (!(median_sq > 0.0))
    throw NumericError(
        "kernel_distance: degenerate bandwidth (median pairwise distance is "
        "zero)");
  return 1.0 / (2.0 * median_sq);
}

}  // namespace

KernelDistanceResult kernel_distance(const FeatureSet& x, const FeatureSet& y,
                                     const KernelConfig& cfg) {
  require_flat(x, "kernel_distance");
  require_flat(y, "kernel_distance");
  require_same_dim(x, y, "kernel_distance");
  i64 nx = x.n(), ny = y.n(), d = x.dim();
  if (nx < 2 || ny < 2)
    throw DataError("kernel_distance: the unbiased estimate needs at least 2 "
                    "samples per side");

  KernelDistanceResult res;
  kernels::MmdTerms terms;
  if (cfg.kind == KernelConfig::Kind::rbf) {
    double gamma = cfg.gamma;
    if (gamma < 0.0)
      throw ConfigError("kernel_distance: gamma must be non-negative");
    if (gamma == 0.0) {
      // Median of *squared* distances; the heuristic is stated directly in
      // terms of the squared median below.
      gamma = median_heuristic_gamma(x, y, cfg);
    }
    res.gamma_used = gamma;
    terms = kernels::mmd_terms_rbf(x.data.data(), nx, y.data.data(), ny, d,
                                   gamma);
  } else {
    if (cfg.poly_degree < 1)
      throw ConfigError("kernel_distance: poly_degree must be >= 1");
    double scale =
        cfg.poly_scale != 0.0 ? cfg.poly_scale : 1.0 / static_cast<double>(d);
    terms = kernels::mmd_terms_poly(x.data.data(), nx, y.data.data(), ny, d,
                                    scale, cfg.poly_offset, cfg.poly_degree);
  }
  res.value = terms.sum_kxx_offdiag / (static_cast<double>(nx) * (nx - 1)) +
              terms.sum_kyy_offdiag / (static_cast<double>(ny) * (ny - 1)) -
              2.0 * terms.sum_kxy / (static_cast<double>(nx) * ny);
  return res;
}

CosineResult cosine_similarity_paired(const FeatureSet& x, const FeatureSet& y) {
  if (x.shape != y.shape)
    throw DimensionError(
        "cosine_similarity_paired: shapes must match exactly for paired "
        "samples");
  require_flat(x, "cosine_similarity_paired");
  i64 n = x.n(), d = x.dim();
  CosineResult res;
  double sum = 0.0;
  i64 used = 0;
  for (i64 i = 0; i < n; ++i) {
    const double* a = x.data.data() + i * d;
    const double* b = y.data.data() + i * d;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (i64 j = 0; j < d; ++j) {
      dot += a[j] * b[j];
      na += a[j] * a[j];
      nb += b[j] * b[j];
    }
    if (na == 0.0 || nb == 0.0) {
      ++res.zero_pairs;
      continue;
    }
    sum += dot / (std::sqrt(na) * std::sqrt(nb));
    ++used;
  }
  if (used == 0)
    throw DataError("cosine_similarity_paired: every pair has a zero vector");
  res.value = sum / static_cast<double>(used);
  return res;
}

Mi1dResult mi_1d_gauss(const FeatureSet& x, const FeatureSet& y) {
  if (x.shape != y.shape)
    throw DimensionError("mi_1d_gauss: shapes must match exactly for paired "
                         "samples");
  require_flat(x, "mi_1d_gauss");
  i64 n = x.n(), d = x.dim();
  if (n < 2) throw DataError("mi_1d_gauss: need at least 2 samples");

  Mi1dResult res;
  res.per_dim.assign(static_cast<std::size_t>(d), 0.0);
  for (i64 j = 0; j < d; ++j) {
    double mx = 0.0, my = 0.0;
    for (i64 i = 0; i < n; ++i) {
      mx += x.data[static_cast<std::size_t>(i * d + j)];
      my += y.data[static_cast<std::size_t>(i * d + j)];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double vxx = 0.0, vyy = 0.0, vxy = 0.0;
    for (i64 i = 0; i < n; ++i) {
      double cx = x.data[static_cast<std::size_t>(i * d + j)] - mx;
      double cy = y.data[static_cast<std::size_t>(i * d + j)] - my;
      vxx += cx * cx;
      vyy += cy * cy;
      vxy += cx * cy;
    }
    if (vxx == 0.0 || vyy == 0.0) {
      // A constant column carries no information; flag it rather than fail.
      res.degenerate_dims.push_back(j);
      continue;
    }
    double rho = vxy / std::sqrt(vxx * vyy);
    double cap = 1.0 - 1e-12;
    rho = std::clamp(rho, -cap, cap);
    res.per_dim[static_cast<std::size_t>(j)] = -0.5 * std::log1p(-rho * rho);
  }
  for (double v : res.per_dim) res.total += v;
  return res;
}

}  // namespace featprobe
