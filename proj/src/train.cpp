#include "featprobe/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "featprobe/adam.hpp"
#include "featprobe/errors.hpp"
#include "featprobe/kernels.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/version.hpp"

namespace featprobe {

using ad::i64;
using ad::Tensor;

double alpha_schedule(i64 step, i64 horizon) {
  if (horizon < 1) throw ConfigError("alpha_schedule: horizon must be >= 1");
  if (step < 0) throw ConfigError("alpha_schedule: step must be >= 0");
  double a = 1.0 - static_cast<double>(step) / static_cast<double>(horizon);
  return a > 0.0 ? a : 0.0;
}

double combined_loss(double alpha, double distill, double task) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("combined_loss: alpha must lie in [0, 1]");
  // Two explicit products and one sum; mirrors the op-level combination so
  // the logged identity holds to the last bit.
  double weighted_distill = alpha * distill;
  double weighted_task = (1.0 - alpha) * task;
  return weighted_distill + weighted_task;
}

Tensor distill_loss(const Tensor& out, const Tensor& expert) {
  return ad::mse(out, expert);
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["seed"] = seed;
  if (!sequence.empty()) j["sequence"] = sequence;
  j["config"] = config;
  j["curve"] = nlohmann::json::array();
  for (const LossBreakdown& b : curve) {
    j["curve"].push_back({{"step", b.step},
                          {"alpha", b.alpha},
                          {"distill", b.distill},
                          {"task", b.task},
                          {"total", b.total}});
  }
  j["evals"] = nlohmann::json::array();
  for (const EvalPoint& e : evals) {
    j["evals"].push_back({{"step", e.step},
                          {"holdout_task", e.holdout_task},
                          {"holdout_distill", e.holdout_distill}});
  }
  j["final_train_loss"] = final_train_loss;
  j["final_holdout_task"] = final_holdout_task;
  if (!checkpoint_path.empty()) j["checkpoint"] = checkpoint_path;
  if (!final_metrics.is_null()) j["final_metrics"] = final_metrics;
  j["config_hash"] = config_hash;
  j["toolkit_version"] = toolkit_version;
  j["rng"] = rng;
  j["threads"] = threads;
  j["wall_clock_sec"] = wall_clock_sec;
  return j;
}

MetricSelection parse_metric_selection(const std::string& csv) {
  MetricSelection sel;
  sel.fd = sel.kd_rbf = sel.kd_poly = sel.cosine = sel.mi1d = false;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    // trim spaces
    std::size_t b = item.find_first_not_of(" \t");
    std::size_t e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, e - b + 1);
    if (item == "all") {
      sel.fd = sel.kd_rbf = sel.kd_poly = sel.cosine = sel.mi1d = true;
    } else if (item == "fd") {
      sel.fd = true;
    } else if (item == "kd_rbf") {
      sel.kd_rbf = true;
    } else if (item == "kd_poly") {
      sel.kd_poly = true;
    } else if (item == "cosine" || item == "cos") {
      sel.cosine = true;
    } else if (item == "mi1d") {
      sel.mi1d = true;
    } else if (item == "ksg") {
      sel.ksg = true;
    } else if (item == "mine") {
      sel.mine = true;
    } else if (item == "lmi") {
      sel.lmi = true;
    } else {
      throw ConfigError("unknown metric '" + item +
                        "' (valid: all, fd, kd_rbf, kd_poly, cosine/cos, "
                        "mi1d, ksg, mine, lmi)");
    }
  }
  if (!sel.fd && !sel.kd_rbf && !sel.kd_poly && !sel.cosine && !sel.mi1d &&
      !sel.ksg && !sel.mine && !sel.lmi)
    throw ConfigError("metric selection is empty");
  return sel;
}

MetricReport evaluate_pathways(const FeatureSet& adapted,
                               const FeatureSet& expert,
                               const MetricSelection& sel,
                               const std::string& experiment) {
  auto t0 = std::chrono::steady_clock::now();
  MetricReport rep = report_skeleton(experiment);

  FeatureSet a2 = sel.token_mode == MetricSelection::TokenMode::pool
                      ? mean_pool(adapted)
                      : flatten_tokens(adapted);
  FeatureSet e2 = sel.token_mode == MetricSelection::TokenMode::pool
                      ? mean_pool(expert)
                      : flatten_tokens(expert);

  if (sel.fd) {
    MetricEntry m;
    m.name = "fd";
    m.value = frechet_distance(summarize(a2), summarize(e2));
    rep.metrics.push_back(std::move(m));
  }
  if (sel.kd_rbf) {
    MetricEntry m;
    m.name = "kd_rbf";
    KernelConfig kc = sel.kernel;
    kc.kind = KernelConfig::Kind::rbf;
    KernelDistanceResult r = kernel_distance(a2, e2, kc);
    m.value = r.value;
    m.diagnostics = {{"gamma", r.gamma_used}};
    rep.metrics.push_back(std::move(m));
  }
  if (sel.kd_poly) {
    MetricEntry m;
    m.name = "kd_poly";
    KernelConfig kc = sel.kernel;
    kc.kind = KernelConfig::Kind::poly;
    m.value = kernel_distance(a2, e2, kc).value;
    rep.metrics.push_back(std::move(m));
  }
  if (sel.cosine) {
    MetricEntry m;
    m.name = "cosine";
    CosineResult r = cosine_similarity_paired(a2, e2);
    m.value = r.value;
    if (r.zero_pairs > 0) m.diagnostics = {{"zero_pairs", r.zero_pairs}};
    rep.metrics.push_back(std::move(m));
  }
  if (sel.mi1d) {
    MetricEntry m;
    m.name = "mi1d";
    Mi1dResult r = mi_1d_gauss(a2, e2);
    m.value = r.total;
    m.diagnostics = {{"per_dim", r.per_dim}};
    if (!r.degenerate_dims.empty())
      m.diagnostics["degenerate_dims"] = r.degenerate_dims;
    rep.metrics.push_back(std::move(m));
  }
  if (sel.ksg) {
    MetricEntry m;
    m.name = "ksg";
    double raw = ksg_estimate(a2, e2, sel.ksg_neighbors);
    m.value = std::max(0.0, raw);
    m.diagnostics = {{"raw", raw}, {"neighbors", sel.ksg_neighbors}};
    rep.metrics.push_back(std::move(m));
  }
  if (sel.mine) {
    MetricEntry m;
    m.name = "mine";
    try {
      MiEstimate e = mine_estimate(a2, e2, sel.mine_cfg);
      m.value = e.value;
      m.diagnostics = {{"raw", e.raw},
                       {"curve", e.curve},
                       {"estimator_config_hash", e.config_hash},
                       {"seed", e.seed}};
    } catch (const EstimationError& err) {
      m.status = "failed";
      m.diagnostics = {{"error", err.what()}, {"curve", err.curve}};
    }
    rep.metrics.push_back(std::move(m));
    rep.seeds.push_back(sel.mine_cfg.seed);
  }
  if (sel.lmi) {
    MetricEntry m;
    m.name = "lmi";
    try {
      MiEstimate e = lmi_estimate(a2, e2, sel.lmi_cfg);
      m.value = e.value;
      m.diagnostics = {{"raw", e.raw},
                       {"curve", e.curve},
                       {"estimator_config_hash", e.config_hash},
                       {"seed", e.seed}};
    } catch (const EstimationError& err) {
      m.status = "failed";
      m.diagnostics = {{"error", err.what()}, {"curve", err.curve}};
    }
    rep.metrics.push_back(std::move(m));
    rep.seeds.push_back(sel.lmi_cfg.seed);
  }

  nlohmann::json cfg_desc = {
      {"metrics", nlohmann::json::array()},
      {"token_mode",
       sel.token_mode == MetricSelection::TokenMode::pool ? "pool" : "flatten"},
      {"adapted_shape", a2.shape},
      {"expert_shape", e2.shape},
  };
  for (const MetricEntry& m : rep.metrics) cfg_desc["metrics"].push_back(m.name);
  rep.config_hash = config_fingerprint(cfg_desc);
  rep.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return rep;
}

FeatureSet neck_apply(const NeckParams& p, const FeatureSet& input) {
  if (input.shape.size() != 3)
    throw DimensionError("neck_apply: input must be [N, T, D]");
  i64 n = input.shape[0], t = input.shape[1], d = input.shape[2];
  i64 dout = p.config.output_dim;
  FeatureSet out;
  out.shape = {n, t, dout};
  out.data.resize(static_cast<std::size_t>(n * t * dout));
  out.role = "adapted";
  out.name = "adapted";
  out.source = input.source;
  constexpr i64 kChunk = 256;
  for (i64 start = 0; start < n; start += kChunk) {
    i64 rows = std::min(kChunk, n - start);
    std::vector<double> slice(
        input.data.begin() + static_cast<std::ptrdiff_t>(start * t * d),
        input.data.begin() + static_cast<std::ptrdiff_t>((start + rows) * t * d));
    Tensor xb = Tensor::from_data({rows, t, d}, std::move(slice));
    Tensor o = neck_forward(p, xb);
    std::copy(o.data().begin(), o.data().end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(start * t * dout));
  }
  return out;
}

namespace {

struct Head {
  TaskSpec::Head kind;
  i64 in_dim = 0, out_dim = 0;
  std::vector<double> w;  // [in_dim, out_dim] for linear

  static Head build(const TaskSpec& task, i64 expert_dim) {
    Head h;
    h.kind = task.head;
    h.in_dim = expert_dim;
    if (task.head == TaskSpec::Head::identity) {
      h.out_dim = expert_dim;
      return h;
    }
    h.out_dim = task.head_dim > 0 ? task.head_dim : (expert_dim + 1) / 2;
    Rng rng(task.head_seed);
    h.w.resize(static_cast<std::size_t>(h.in_dim * h.out_dim));
    double scale = 1.0 / std::sqrt(static_cast<double>(h.in_dim));
    for (double& v : h.w) v = rng.normal() * scale;
    return h;
  }

  // Plain application to raw rows (for building targets).
  std::vector<double> apply(const std::vector<double>& rows, i64 n) const {
    if (kind == TaskSpec::Head::identity) return rows;
    std::vector<double> out(static_cast<std::size_t>(n * out_dim));
    kernels::matmul(rows.data(), w.data(), out.data(), n, in_dim, out_dim);
    return out;
  }

  // In-graph application to the pooled adapter output.
  Tensor apply_graph(const Tensor& pooled) const {
    if (kind == TaskSpec::Head::identity) return pooled;
    Tensor wt = Tensor::from_data({in_dim, out_dim}, w);
    return ad::matmul(pooled, wt);
  }
};

std::string format_breakdown_tail(const std::vector<LossBreakdown>& curve) {
  std::ostringstream os;
  os << "recent steps:";
  std::size_t from = curve.size() > 10 ? curve.size() - 10 : 0;
  for (std::size_t i = from; i < curve.size(); ++i) {
    const LossBreakdown& b = curve[i];
    os << "\n  step " << b.step << ": alpha=" << b.alpha
       << " distill=" << b.distill << " task=" << b.task
       << " total=" << b.total;
  }
  return os.str();
}

Tensor gather_tensor(const FeatureSet& fs, const std::vector<i64>& idx) {
  if (fs.is_tokenized()) {
    i64 t = fs.shape[1], d = fs.shape[2];
    std::vector<double> out(idx.size() * static_cast<std::size_t>(t * d));
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(fs.data.data() + idx[i] * t * d, t * d,
                  out.data() + static_cast<i64>(i) * t * d);
    return Tensor::from_data({static_cast<i64>(idx.size()), t, d},
                             std::move(out));
  }
  i64 d = fs.shape[1];
  std::vector<double> out(idx.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(fs.data.data() + idx[i] * d, d,
                out.data() + static_cast<i64>(i) * d);
  return Tensor::from_data({static_cast<i64>(idx.size()), d}, std::move(out));
}

Tensor gather_rows_2d(const std::vector<double>& data, i64 d,
                      const std::vector<i64>& idx) {
  std::vector<double> out(idx.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(data.data() + idx[i] * d, d,
                out.data() + static_cast<i64>(i) * d);
  return Tensor::from_data({static_cast<i64>(idx.size()), d}, std::move(out));
}

RunRecord run_training(const TrainConfig& cfg, NeckConfig neck,
                       const FeatureSet& input, const FeatureSet& expert,
                       const TaskSpec& task, const std::string& sequence,
                       const std::string& checkpoint_path,
                       const MetricSelection* final_metrics) {
  auto t_start = std::chrono::steady_clock::now();
  if (cfg.steps < 1) throw ConfigError("train: steps must be >= 1");
  if (cfg.batch < 1) throw ConfigError("train: batch must be >= 1");
  if (!(cfg.holdout_frac > 0.0 && cfg.holdout_frac < 1.0))
    throw ConfigError("train: holdout_frac must lie in (0, 1)");
  if (cfg.eval_interval < 1)
    throw ConfigError("train: eval_interval must be >= 1");
  if (input.shape.size() != 3)
    throw DimensionError("train: adapter input must be [N, T, D], got rank " +
                         std::to_string(input.shape.size()));
  if (expert.n() != input.n())
    throw DimensionError("train: input and expert sample counts disagree: " +
                         std::to_string(input.n()) + " vs " +
                         std::to_string(expert.n()));
  bool expert_tokenized = expert.is_tokenized();
  if (expert_tokenized && expert.shape[1] != input.shape[1])
    throw DimensionError("train: tokenised expert features must share the "
                         "input token count");

  if (neck.input_dim == 0) neck.input_dim = input.dim();
  if (neck.tokens == 0) neck.tokens = input.shape[1];
  if (neck.output_dim == 0) neck.output_dim = expert.dim();
  if (neck.input_dim != input.dim() || neck.tokens != input.shape[1])
    throw ConfigError("train: neck config does not match the input features");
  if (neck.output_dim != expert.dim())
    throw ConfigError("train: neck output_dim " +
                      std::to_string(neck.output_dim) +
                      " does not match expert dim " +
                      std::to_string(expert.dim()));
  neck.validate();

  i64 horizon = cfg.alpha_horizon > 0
                    ? cfg.alpha_horizon
                    : std::max<i64>(1, cfg.steps - 1);

  // Task targets come from the frozen head over (pooled) expert features.
  FeatureSet expert_flat = mean_pool(expert);
  Head head = Head::build(task, expert_flat.dim());
  if (task.head == TaskSpec::Head::identity &&
      neck.output_dim != expert_flat.dim())
    throw ConfigError("train: identity head needs matching dimensions");
  std::vector<double> targets = head.apply(expert_flat.data, expert_flat.n());

  // The holdout split is pinned by the experiment id, not the training
  // seed, so seed repetitions of one experiment share it.
  i64 n = input.n();
  i64 hold = static_cast<i64>(
      std::llround(cfg.holdout_frac * static_cast<double>(n)));
  hold = std::max<i64>(1, std::min(hold, n - 1));
  std::vector<i64> perm =
      Rng(Rng::derive(fnv1a64(cfg.experiment), "train-split")).permutation(n);
  std::vector<i64> hold_idx(perm.begin(), perm.begin() + hold);
  std::vector<i64> train_idx(perm.begin() + hold, perm.end());
  if (static_cast<i64>(train_idx.size()) < cfg.batch)
    throw ConfigError("train: training split smaller than one batch");

  NeckConfig neck_seeded = neck;
  neck_seeded.seed = Rng::derive(cfg.seed, "neck-init") ^ neck.seed;
  NeckParams params = neck_init(neck_seeded);
  std::vector<Tensor> plist = params.parameters();
  ad::Adam opt(plist, ad::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng batch_rng(Rng::derive(cfg.seed, "train-batch"));

  RunRecord rec;
  rec.experiment = cfg.experiment;
  rec.seed = cfg.seed;
  rec.sequence = sequence;
  rec.toolkit_version = kVersion;
  rec.rng = kRngDescription;
  rec.threads = max_threads();
  rec.config = {
      {"experiment", cfg.experiment},
      {"seed", cfg.seed},
      {"steps", cfg.steps},
      {"batch", cfg.batch},
      {"lr", cfg.lr},
      {"alpha_horizon", horizon},
      {"distill", cfg.distill},
      {"eval_interval", cfg.eval_interval},
      {"holdout_frac", cfg.holdout_frac},
      {"neck",
       {{"layers", neck.layers},
        {"heads", neck.resolved_heads()},
        {"d_model", neck.d_model},
        {"mlp_expansion", neck.mlp_expansion},
        {"input_dim", neck.input_dim},
        {"output_dim", neck.output_dim},
        {"tokens", neck.tokens},
        {"seed", neck.seed}}},
      {"task",
       {{"id", task.id},
        {"head", task.head == TaskSpec::Head::identity ? "identity" : "linear"},
        {"head_dim", head.out_dim},
        {"head_seed", task.head_seed}}},
      {"data",
       {{"n", n},
        {"input_shape", input.shape},
        {"expert_shape", expert.shape}}},
  };
  if (!sequence.empty()) rec.config["sequence"] = sequence;
  rec.config_hash = config_fingerprint(rec.config);

  auto eval_holdout = [&](EvalPoint& ev) {
    constexpr i64 kChunk = 256;
    double task_acc = 0.0, distill_acc = 0.0;
    for (std::size_t start = 0; start < hold_idx.size(); start += kChunk) {
      std::size_t count =
          std::min<std::size_t>(kChunk, hold_idx.size() - start);
      std::vector<i64> chunk(hold_idx.begin() + static_cast<std::ptrdiff_t>(start),
                             hold_idx.begin() +
                                 static_cast<std::ptrdiff_t>(start + count));
      Tensor xb = gather_tensor(input, chunk);
      Tensor out = neck_forward(params, xb);
      Tensor pooled = ad::mean_tokens(out);
      Tensor yb = gather_rows_2d(targets, head.out_dim, chunk);
      double tl = ad::mse(head.apply_graph(pooled), yb).item();
      Tensor fb = gather_tensor(expert, chunk);
      double dl = expert_tokenized ? ad::mse(out, fb).item()
                                   : ad::mse(pooled, fb).item();
      task_acc += tl * static_cast<double>(count);
      distill_acc += dl * static_cast<double>(count);
    }
    ev.holdout_task = task_acc / static_cast<double>(hold_idx.size());
    ev.holdout_distill = distill_acc / static_cast<double>(hold_idx.size());
    if (!std::isfinite(ev.holdout_task) || !std::isfinite(ev.holdout_distill))
      throw TrainingAbort("train: non-finite holdout loss at step " +
                          std::to_string(ev.step) + "\n" +
                          format_breakdown_tail(rec.curve));
  };

  for (i64 step = 0; step < cfg.steps; ++step) {
    std::vector<i64> idx(static_cast<std::size_t>(cfg.batch));
    for (int i = 0; i < cfg.batch; ++i)
      idx[static_cast<std::size_t>(i)] = train_idx[static_cast<std::size_t>(
          batch_rng.below(static_cast<i64>(train_idx.size())))];

    Tensor xb = gather_tensor(input, idx);
    Tensor out = neck_forward(params, xb);
    Tensor pooled = ad::mean_tokens(out);
    Tensor fb = gather_tensor(expert, idx);
    Tensor ld = expert_tokenized ? distill_loss(out, fb)
                                 : distill_loss(pooled, fb);
    Tensor yb = gather_rows_2d(targets, head.out_dim, idx);
    Tensor lt = ad::mse(head.apply_graph(pooled), yb);

    double alpha = cfg.distill ? alpha_schedule(step, horizon) : 0.0;
    Tensor loss =
        ad::add(ad::mul_scalar(ld, alpha), ad::mul_scalar(lt, 1.0 - alpha));

    LossBreakdown b;
    b.step = step;
    b.alpha = alpha;
    b.distill = ld.item();
    b.task = lt.item();
    b.total = loss.item();
    rec.curve.push_back(b);
    if (!std::isfinite(b.total))
      throw TrainingAbort("train: non-finite total loss at step " +
                          std::to_string(step) + "\n" +
                          format_breakdown_tail(rec.curve));

    try {
      ad::backward(loss, plist);
      opt.step();
    } catch (const TrainingAbort& e) {
      throw TrainingAbort(std::string(e.what()) + "\n" +
                          format_breakdown_tail(rec.curve));
    }

    if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps) {
      EvalPoint ev;
      ev.step = step + 1;
      eval_holdout(ev);
      rec.evals.push_back(ev);
    }
  }

  rec.final_train_loss = rec.curve.back().total;
  rec.final_holdout_task = rec.evals.back().holdout_task;

  if (!checkpoint_path.empty()) {
    save_checkpoint(params, checkpoint_path, /*overwrite=*/true);
    rec.checkpoint_path = checkpoint_path;
  }
  if (final_metrics) {
    FeatureSet adapted = neck_apply(params, input);
    FeatureSet reference = expert;
    MetricReport mr =
        evaluate_pathways(adapted, reference, *final_metrics, cfg.experiment);
    rec.final_metrics = mr.to_json();
  }
  rec.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return rec;
}

}  // namespace

RunRecord train_neck(const TrainConfig& cfg, NeckConfig neck,
                     const TrainData& data, const TaskSpec& task,
                     const std::string& checkpoint_path,
                     const MetricSelection* final_metrics) {
  validate_feature_set(data.encoder, "train_neck encoder");
  validate_feature_set(data.expert, "train_neck expert");
  return run_training(cfg, neck, data.encoder, data.expert, task, "",
                      checkpoint_path, final_metrics);
}

RunRecord train_cross_neck(const NeckParams& neck1, const TrainConfig& cfg,
                           NeckConfig neck2, const TrainData& data,
                           const TaskSpec& task, const std::string& first_task,
                           const std::string& checkpoint_path,
                           const MetricSelection* final_metrics) {
  validate_feature_set(data.encoder, "train_cross_neck encoder");
  validate_feature_set(data.expert, "train_cross_neck expert");
  // The first adapter is frozen: its outputs are computed once, up front,
  // and the second adapter trains on them as plain data.
  FeatureSet through = neck_apply(neck1, data.encoder);
  through.role = "adapted";
  std::string sequence = first_task + " -> " + task.id;
  return run_training(cfg, neck2, through, data.expert, task, sequence,
                      checkpoint_path, final_metrics);
}

}  // namespace featprobe
