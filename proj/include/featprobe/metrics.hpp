#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featprobe/feature_set.hpp"

namespace featprobe {

// Gaussian moment summary of a [N, D] feature set: sample mean and the
// unbiased (N-1) covariance.
struct GaussianSummary {
  std::int64_t dim = 0;
  std::int64_t count = 0;
  std::vector<double> mean;  // [D]
  std::vector<double> cov;   // [D, D], exactly symmetric
};

GaussianSummary summarize(const FeatureSet& fs);

// Fréchet distance between two Gaussian summaries:
//   |mu_a - mu_b|^2 + tr(Ca + Cb - 2 (Ca^1/2 Cb Ca^1/2)^1/2).
// Matrix square roots go through an eigendecomposition with eigenvalues
// below 1e-8 of the largest clamped to zero; the result is clamped at 0.
// Bitwise-identical summaries short-circuit to exactly 0.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

struct KernelConfig {
  enum class Kind { rbf, poly };
  Kind kind = Kind::rbf;
  // RBF bandwidth; 0 selects the median heuristic gamma = 1/(2 median^2)
  // over pairwise distances of a pooled subsample.
  double gamma = 0.0;
  std::int64_t bandwidth_samples = 2000;
  std::uint64_t bandwidth_seed = 0x6d656469616eull;
  // Polynomial kernel (scale * x.y + offset)^degree; scale 0 means 1/D.
  double poly_scale = 0.0;
  double poly_offset = 1.0;
  int poly_degree = 3;
};

struct KernelDistanceResult {
  double value = 0.0;        // unbiased squared-MMD estimate; can be negative
  double gamma_used = 0.0;   // 0 for the polynomial kernel
};

KernelDistanceResult kernel_distance(const FeatureSet& x, const FeatureSet& y,
                                     const KernelConfig& cfg = {});

struct CosineResult {
  double value = 0.0;            // mean over sample pairs
  std::int64_t zero_pairs = 0;   // pairs skipped for a zero-norm vector
};

// Mean cosine similarity between row i of x and row i of y; requires
// identical shapes so the pairing is meaningful.
CosineResult cosine_similarity_paired(const FeatureSet& x, const FeatureSet& y);

struct Mi1dResult {
  std::vector<double> per_dim;       // -0.5 ln(1 - rho_j^2) per column
  double total = 0.0;                // sum over columns
  std::vector<std::int64_t> degenerate_dims;  // zero-variance columns, MI 0
};

// Gaussian MI proxy from per-column Pearson correlations of paired sets.
Mi1dResult mi_1d_gauss(const FeatureSet& x, const FeatureSet& y);

}  // namespace featprobe
