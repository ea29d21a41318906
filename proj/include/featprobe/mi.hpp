#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featprobe/feature_set.hpp"

namespace featprobe {

// Neural and k-NN mutual information estimators over paired feature sets.
// All of them are deterministic under a fixed seed and record enough of
// their configuration to reproduce the run.

struct MineConfig {
  std::vector<int> hidden = {128, 128};
  double lr = 1e-3;
  int batch = 256;
  int steps = 2000;
  // Exponential moving average of the marginal partition term; corrects the
  // gradient bias of the plain Donsker-Varadhan objective.
  double ema_rate = 0.99;
  // The estimate is the mean of this many trailing held-out evaluations.
  int eval_batches = 50;
  double holdout_frac = 0.2;
  // Training aborts when the held-in bound exceeds this (collapse guard).
  double divergence_limit = 50.0;
  std::uint64_t seed = 0;
};

struct LmiConfig {
  // Both sides are projected to this many dimensions by trained linear maps.
  int proj_dim = 4;
  std::vector<int> critic_hidden = {64, 64};
  double lr = 1e-3;
  int batch = 256;
  int steps = 2000;
  double ema_rate = 0.99;
  int eval_batches = 50;
  double holdout_frac = 0.2;
  double divergence_limit = 50.0;
  // Final value: k-NN estimate on the projected held-out sample.
  int ksg_neighbors = 5;
  std::uint64_t seed = 0;
};

struct MiEstimate {
  std::string estimator;
  double value = 0.0;  // clamped at 0
  double raw = 0.0;
  std::vector<double> curve;  // held-out bound per training step
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Donsker-Varadhan lower bound with a trained statistics network.
MiEstimate mine_estimate(const FeatureSet& x, const FeatureSet& y,
                         const MineConfig& cfg);

// Trained linear projections with a small critic, scored by a k-NN estimate
// in the projected space. Suited to high-dimensional inputs where the k-NN
// estimator alone is out of its depth.
MiEstimate lmi_estimate(const FeatureSet& x, const FeatureSet& y,
                        const LmiConfig& cfg);

// Kraskov-Stoegbauer-Grassberger estimator (variant 1), max-norm. Guards:
// combined dimension at most 16, at least 100 samples.
double ksg_estimate(const FeatureSet& x, const FeatureSet& y, int neighbors = 5);

}  // namespace featprobe
