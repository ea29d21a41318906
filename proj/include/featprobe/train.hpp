#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "featprobe/feature_set.hpp"
#include "featprobe/metrics.hpp"
#include "featprobe/mi.hpp"
#include "featprobe/neck.hpp"
#include "featprobe/report.hpp"

namespace featprobe {

// Annealing weight for the distillation term: starts at 1, falls linearly,
// reaches 0 at step == horizon and stays there.
double alpha_schedule(std::int64_t step, std::int64_t horizon);

// Weighted combination of the two loss terms; validates alpha in [0, 1].
double combined_loss(double alpha, double distill, double task);

// MSE between adapter output and the features it is being distilled toward.
ad::Tensor distill_loss(const ad::Tensor& out, const ad::Tensor& expert);

// Per-step loss accounting. total == alpha*distill + (1-alpha)*task holds
// exactly: the training graph is built from the same scalar products.
struct LossBreakdown {
  std::int64_t step = 0;
  double alpha = 0.0;
  double distill = 0.0;
  double task = 0.0;
  double total = 0.0;
};

// What the adapter is trained to predict. The head is a frozen map applied
// to the pooled adapter output, and to the expert features to form targets;
// "linear" draws a fixed Gaussian matrix from head_seed, "identity" keeps
// the features as they are.
struct TaskSpec {
  std::string id = "task";
  enum class Head { identity, linear } head = Head::linear;
  std::int64_t head_dim = 0;  // 0: ceil(expert_dim / 2)
  std::uint64_t head_seed = 17;
};

struct TrainConfig {
  std::int64_t steps = 1000;
  int batch = 32;
  double lr = 1e-3;
  // 0 resolves to steps-1, so the anneal hits 0 exactly at the final step.
  std::int64_t alpha_horizon = 0;
  bool distill = true;
  std::int64_t eval_interval = 100;
  double holdout_frac = 0.2;
  std::string experiment = "exp";
  std::uint64_t seed = 0;
};

struct TrainData {
  FeatureSet encoder;  // adapter input, [N, T, D_in]
  FeatureSet expert;   // distillation target and task source, [N, D] or [N, T, D]
};

struct EvalPoint {
  std::int64_t step = 0;
  double holdout_task = 0.0;
  double holdout_distill = 0.0;
};

// Everything a single training run produced.
struct RunRecord {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string sequence;  // "" for direct runs, "task1 -> task2" for chained
  nlohmann::json config;
  std::vector<LossBreakdown> curve;
  std::vector<EvalPoint> evals;
  double final_train_loss = 0.0;
  double final_holdout_task = 0.0;
  std::string checkpoint_path;
  nlohmann::json final_metrics;  // null unless metrics were requested
  std::string config_hash;
  std::string toolkit_version;
  std::string rng;
  int threads = 1;
  double wall_clock_sec = 0.0;

  nlohmann::json to_json() const;
};

// Which metrics evaluate_pathways computes, and how.
struct MetricSelection {
  bool fd = true;
  bool kd_rbf = true;
  bool kd_poly = true;
  bool cosine = true;
  bool mi1d = true;
  bool ksg = false;
  bool mine = false;
  bool lmi = false;
  enum class TokenMode { pool, flatten } token_mode = TokenMode::pool;
  KernelConfig kernel;
  int ksg_neighbors = 5;
  MineConfig mine_cfg;
  LmiConfig lmi_cfg;
};

// Parses "fd,kd_rbf,cosine" style lists; throws ConfigError on unknown
// names, listing the valid ones.
MetricSelection parse_metric_selection(const std::string& csv);

// Runs the metric suite between an adapted feature set and the expert
// reference. Tokenised inputs are pooled (or flattened) first. Estimator
// failures mark their entry "failed" and keep going.
MetricReport evaluate_pathways(const FeatureSet& adapted,
                               const FeatureSet& expert,
                               const MetricSelection& sel,
                               const std::string& experiment = "pathways");

// Trains one adapter against frozen features. neck.input_dim/tokens/
// output_dim are filled from the data when left at 0. Saves a checkpoint
// when checkpoint_path is non-empty; runs the metric suite on the final
// adapted features when `final_metrics` is non-null.
RunRecord train_neck(const TrainConfig& cfg, NeckConfig neck,
                     const TrainData& data, const TaskSpec& task,
                     const std::string& checkpoint_path = "",
                     const MetricSelection* final_metrics = nullptr);

// Sequential adaptation: the frozen first adapter maps the encoder features,
// and a second adapter is trained on top for a new task. `first_task` only
// labels the sequence tag of the record.
RunRecord train_cross_neck(const NeckParams& neck1, const TrainConfig& cfg,
                           NeckConfig neck2, const TrainData& data,
                           const TaskSpec& task, const std::string& first_task,
                           const std::string& checkpoint_path = "",
                           const MetricSelection* final_metrics = nullptr);

// Forward a feature set through an adapter in batches, no training.
FeatureSet neck_apply(const NeckParams& p, const FeatureSet& input);

}  // namespace featprobe
