#include "featprobe/synth.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "featprobe/errors.hpp"
#include "featprobe/rng.hpp"

namespace featprobe {

using i64 = std::int64_t;
using Matrix = Eigen::MatrixXd;

std::vector<double> paired_correlation_cov(i64 dx, i64 dy, double rho) {
  if (dx < 1 || dy < 1)
    throw ConfigError("paired_correlation_cov: dimensions must be positive");
  if (!(rho > -1.0 && rho < 1.0))
    throw ConfigError("paired_correlation_cov: rho must lie in (-1, 1)");
  i64 d = dx + dy;
  std::vector<double> cov(static_cast<std::size_t>(d * d), 0.0);
  for (i64 i = 0; i < d; ++i) cov[static_cast<std::size_t>(i * d + i)] = 1.0;
  for (i64 i = 0; i < std::min(dx, dy); ++i) {
    cov[static_cast<std::size_t>(i * d + dx + i)] = rho;
    cov[static_cast<std::size_t>((dx + i) * d + i)] = rho;
  }
  return cov;
}

double rho_for_target_mi(double mi_nats, i64 pairs) {
  if (pairs < 1) throw ConfigError("rho_for_target_mi: need at least one pair");
  if (mi_nats < 0.0)
    throw ConfigError("rho_for_target_mi: target MI must be non-negative");
  // Per correlated pair, I = -0.5 ln(1 - rho^2); invert for mi/pairs.
  return std::sqrt(1.0 - std::exp(-2.0 * mi_nats / static_cast<double>(pairs)));
}

double gaussian_pair_true_mi(const std::vector<double>& cov, i64 dx, i64 dy) {
  i64 d = dx + dy;
  if (static_cast<i64>(cov.size()) != d * d)
    throw ConfigError("gaussian_pair_true_mi: covariance size does not match " +
                      std::to_string(dx) + "+" + std::to_string(dy));
  Eigen::Map<const Matrix> sigma(cov.data(), d, d);
  auto logdet = [](const Matrix& m, const char* which) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success)
      throw ConfigError(std::string("gaussian_pair_true_mi: ") + which +
                        " block is not positive definite");
    double s = 0.0;
    for (i64 i = 0; i < m.rows(); ++i)
      s += std::log(llt.matrixL()(i, i));
    return 2.0 * s;
  };
  double lxx = logdet(sigma.topLeftCorner(dx, dx), "X");
  double lyy = logdet(sigma.bottomRightCorner(dy, dy), "Y");
  double lall = logdet(sigma, "joint");
  return 0.5 * (lxx + lyy - lall);
}

GaussianPair synth_gaussian_pair(const SynthSpec& spec, i64 n) {
  i64 dx = spec.gauss_dx, dy = spec.gauss_dy;
  if (dx < 1 || dy < 1)
    throw ConfigError("synth_gaussian_pair: gauss_dx and gauss_dy must be set");
  if (n < 2) throw ConfigError("synth_gaussian_pair: need at least 2 samples");
  i64 d = dx + dy;
  if (static_cast<i64>(spec.joint_cov.size()) != d * d)
    throw ConfigError("synth_gaussian_pair: joint_cov must be (" +
                      std::to_string(d) + ")^2 values, got " +
                      std::to_string(spec.joint_cov.size()));

  Eigen::Map<const Matrix> sigma(spec.joint_cov.data(), d, d);
  if (!sigma.isApprox(sigma.transpose(), 1e-12))
    throw ConfigError("synth_gaussian_pair: joint_cov is not symmetric");
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw ConfigError(
        "synth_gaussian_pair: joint_cov is not positive definite "
        "(Cholesky factorisation failed)");
  Matrix L = llt.matrixL();

  double true_mi = gaussian_pair_true_mi(spec.joint_cov, dx, dy);

  Rng rng(spec.seed);
  // Draw order: all N rows of the joint sample, then the lift maps.
  std::vector<double> xs(static_cast<std::size_t>(n * dx));
  std::vector<double> ys(static_cast<std::size_t>(n * dy));
  Eigen::VectorXd z(d), s(d);
  for (i64 i = 0; i < n; ++i) {
    for (i64 j = 0; j < d; ++j) z(j) = rng.normal();
    s.noalias() = L * z;
    for (i64 j = 0; j < dx; ++j) xs[static_cast<std::size_t>(i * dx + j)] = s(j);
    for (i64 j = 0; j < dy; ++j)
      ys[static_cast<std::size_t>(i * dy + j)] = s(dx + j);
  }

  GaussianPair out;
  out.true_mi = true_mi;
  auto make_set = [&](std::vector<double> data, i64 cols, const char* role) {
    FeatureSet fs;
    fs.shape = {n, cols};
    fs.data = std::move(data);
    fs.role = role;
    fs.name = role;
    fs.source = "synth:gaussian_pair:seed=" + std::to_string(spec.seed);
    return fs;
  };

  if (spec.lift_dim > 0) {
    if (spec.lift_dim < std::max(dx, dy))
      throw ConfigError(
          "synth_gaussian_pair: lift_dim must be at least the source "
          "dimension to preserve information");
    i64 ld = spec.lift_dim;
    auto lift = [&](const std::vector<double>& src, i64 cols) {
      std::vector<double> map(static_cast<std::size_t>(cols * ld));
      for (double& v : map) v = rng.normal() / std::sqrt(double(cols));
      std::vector<double> dst(static_cast<std::size_t>(n * ld), 0.0);
      for (i64 i = 0; i < n; ++i)
        for (i64 c = 0; c < cols; ++c) {
          double v = src[static_cast<std::size_t>(i * cols + c)];
          const double* mrow = map.data() + c * ld;
          double* drow = dst.data() + i * ld;
          for (i64 o = 0; o < ld; ++o) drow[o] += v * mrow[o];
        }
      return dst;
    };
    auto lx = lift(xs, dx);
    auto ly = lift(ys, dy);
    out.x = make_set(std::move(lx), ld, "x");
    out.y = make_set(std::move(ly), ld, "y");
  } else {
    out.x = make_set(std::move(xs), dx, "x");
    out.y = make_set(std::move(ys), dy, "y");
  }
  validate_feature_set(out.x, "synth_gaussian_pair x");
  validate_feature_set(out.y, "synth_gaussian_pair y");
  return out;
}

TaskPipelineData synth_task_pipeline(const SynthSpec& spec, i64 n) {
  i64 m = spec.latent_dim, t = spec.token_count, de = spec.encoder_dim,
      r = spec.expert_dim;
  if (m < 1 || t < 1 || de < 1 || r < 1)
    throw ConfigError("synth_task_pipeline: dimensions must be positive");
  if (n < 2) throw ConfigError("synth_task_pipeline: need at least 2 samples");
  if (!(spec.overlap >= 0.0 && spec.overlap <= 1.0))
    throw ConfigError("synth_task_pipeline: overlap must lie in [0, 1]");
  if (spec.noise < 0.0)
    throw ConfigError("synth_task_pipeline: noise must be non-negative");
  if (spec.encoder_depth < 1)
    throw ConfigError("synth_task_pipeline: encoder_depth must be >= 1");
  i64 shared = static_cast<i64>(std::ceil(spec.overlap * double(r)));
  if (shared > r) shared = r;
  i64 basis_rows = 2 * r - shared;
  if (basis_rows > m)
    throw ConfigError(
        "synth_task_pipeline: latent_dim " + std::to_string(m) +
        " too small for expert_dim " + std::to_string(r) + " at overlap " +
        std::to_string(spec.overlap) + " (needs " + std::to_string(basis_rows) +
        ")");

  Rng rng(spec.seed);
  // Draw order: task basis, encoder weights (token-major, layer-major),
  // latent samples, then expert noise (skipped entirely when noise is 0).

  // Orthonormal rows via QR of a square Gaussian matrix.
  Matrix raw(m, m);
  for (i64 i = 0; i < m; ++i)
    for (i64 j = 0; j < m; ++j) raw(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(raw);
  Matrix q = qr.householderQ();
  Matrix b1 = q.leftCols(r).transpose();  // r x m
  Matrix b2(r, m);
  b2.topRows(shared) = b1.topRows(shared);
  b2.bottomRows(r - shared) = q.middleCols(r, r - shared).transpose();

  // Per-token tanh stacks. Depth 1 maps straight from the latent; deeper
  // stacks pass through encoder_dim-wide hidden layers.
  std::vector<std::vector<Matrix>> enc(static_cast<std::size_t>(t));
  for (i64 tok = 0; tok < t; ++tok) {
    for (int layer = 0; layer < spec.encoder_depth; ++layer) {
      i64 in = layer == 0 ? m : de;
      Matrix w(de, in);
      double scale = 1.0 / std::sqrt(static_cast<double>(in));
      for (i64 i = 0; i < de; ++i)
        for (i64 j = 0; j < in; ++j) w(i, j) = rng.normal() * scale;
      enc[static_cast<std::size_t>(tok)].push_back(std::move(w));
    }
  }

  Matrix z(n, m);
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < m; ++j) z(i, j) = rng.normal();

  TaskPipelineData out;
  out.encoder.shape = {n, t, de};
  out.encoder.data.resize(static_cast<std::size_t>(n * t * de));
  Eigen::VectorXd h;
  for (i64 i = 0; i < n; ++i) {
    for (i64 tok = 0; tok < t; ++tok) {
      h = z.row(i).transpose();
      for (const Matrix& w : enc[static_cast<std::size_t>(tok)]) {
        h = (w * h).array().tanh().matrix();
      }
      for (i64 j = 0; j < de; ++j)
        out.encoder.data[static_cast<std::size_t>((i * t + tok) * de + j)] =
            h(j);
    }
  }

  auto project = [&](const Matrix& b) {
    std::vector<double> data(static_cast<std::size_t>(n * r));
    Matrix f = z * b.transpose();  // n x r
    for (i64 i = 0; i < n; ++i)
      for (i64 j = 0; j < r; ++j)
        data[static_cast<std::size_t>(i * r + j)] = f(i, j);
    return data;
  };
  out.expert1.data = project(b1);
  out.expert2.data = project(b2);
  if (spec.noise > 0.0) {
    for (double& v : out.expert1.data) v += spec.noise * rng.normal();
    for (double& v : out.expert2.data) v += spec.noise * rng.normal();
  }
  out.expert1.shape = {n, r};
  out.expert2.shape = {n, r};

  out.latent.shape = {n, m};
  out.latent.data.resize(static_cast<std::size_t>(n * m));
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < m; ++j)
      out.latent.data[static_cast<std::size_t>(i * m + j)] = z(i, j);

  std::string src = "synth:task_pipeline:seed=" + std::to_string(spec.seed);
  out.encoder.role = "encoder";
  out.expert1.role = "expert1";
  out.expert2.role = "expert2";
  out.latent.role = "latent";
  for (FeatureSet* fs : {&out.encoder, &out.expert1, &out.expert2, &out.latent}) {
    fs->name = fs->role;
    fs->source = src;
    validate_feature_set(*fs, "synth_task_pipeline " + fs->role);
  }
  return out;
}

}  // namespace featprobe
