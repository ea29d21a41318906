#pragma once

#include <cstdint>
#include <vector>

#include "featprobe/feature_set.hpp"

namespace featprobe {

// Configuration for the synthetic generators. One struct serves both: the
// Gaussian-pair fields drive synth_gaussian_pair, the pipeline fields drive
// synth_task_pipeline.
struct SynthSpec {
  // Shared
  std::uint64_t seed = 0;

  // Gaussian pair: joint covariance of (X, Y), row-major (dx+dy)^2.
  std::int64_t gauss_dx = 0;
  std::int64_t gauss_dy = 0;
  std::vector<double> joint_cov;
  // Optional random lift of each side into a higher ambient dimension; 0
  // means no lift. Lifting is information-preserving, so the recorded
  // ground-truth MI is unchanged.
  std::int64_t lift_dim = 0;

  // Task pipeline
  std::int64_t latent_dim = 8;    // m
  std::int64_t token_count = 4;   // T
  std::int64_t encoder_dim = 16;  // width of encoder features
  std::int64_t expert_dim = 4;    // rows of each task projection
  int encoder_depth = 1;          // stacked tanh layers in the encoder
  double overlap = 0.0;           // shared fraction of the two task bases
  double noise = 0.0;             // stddev of expert observation noise
};

struct GaussianPair {
  FeatureSet x, y;
  double true_mi;  // nats, from the closed form on the generating covariance
};

// Draws N samples of a jointly Gaussian (X, Y) with the configured
// covariance, rejecting covariances that are not positive definite.
GaussianPair synth_gaussian_pair(const SynthSpec& spec, std::int64_t n);

// A convenient joint covariance: unit marginals with correlation rho on the
// first min(dx, dy) coordinate pairs.
std::vector<double> paired_correlation_cov(std::int64_t dx, std::int64_t dy,
                                           double rho);
// The rho that makes the covariance above carry `mi_nats` of mutual
// information across min(dx, dy) correlated pairs.
double rho_for_target_mi(double mi_nats, std::int64_t pairs);
// Closed-form MI of a jointly Gaussian pair, from Cholesky log-determinants.
double gaussian_pair_true_mi(const std::vector<double>& cov, std::int64_t dx,
                             std::int64_t dy);

struct TaskPipelineData {
  FeatureSet encoder;  // [N, T, encoder_dim] tanh features of the latent
  FeatureSet expert1;  // [N, expert_dim] linear views of the latent
  FeatureSet expert2;
  FeatureSet latent;   // [N, latent_dim] the generating variables
};

// Shared-latent pipeline. The two expert projections are rows of one
// orthonormal basis; `overlap` controls how many rows they share, so
// overlap 0 gives orthogonal (independent) targets and overlap 1 identical
// ones. Requires latent_dim >= expert_dim + rows unique to the second task.
TaskPipelineData synth_task_pipeline(const SynthSpec& spec, std::int64_t n);

}  // namespace featprobe
