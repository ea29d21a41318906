#include "featprobe/mi.hpp"

#include <cmath>
#include <sstream>

#include "featprobe/adam.hpp"
#include "featprobe/errors.hpp"
#include "featprobe/kernels.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/tensor.hpp"

namespace featprobe {

using ad::i64;
using ad::Tensor;

namespace {

void require_paired(const FeatureSet& x, const FeatureSet& y, const char* op) {
  if (x.shape.size() != 2 || y.shape.size() != 2)
    throw ConfigError(std::string(op) +
                      ": expects [N, D] inputs; pool tokenised features first");
  if (x.n() != y.n())
    throw DimensionError(std::string(op) + ": sample counts disagree: " +
                         std::to_string(x.n()) + " vs " +
                         std::to_string(y.n()));
}

// Critic network: relu MLP mapping [B, in] to a [B, 1] statistic.
struct Mlp {
  std::vector<Tensor> weights, biases;

  static Mlp build(Rng& rng, i64 in, const std::vector<int>& hidden) {
    Mlp net;
    i64 prev = in;
    for (std::size_t li = 0; li < hidden.size(); ++li) {
      i64 width = hidden[li];
      std::vector<double> w(static_cast<std::size_t>(prev * width));
      double stddev = std::sqrt(2.0 / static_cast<double>(prev));
      for (double& v : w) v = rng.normal() * stddev;
      net.weights.push_back(
          Tensor::from_data({prev, width}, std::move(w), true)
              .set_name("critic_w" + std::to_string(li)));
      net.biases.push_back(Tensor::zeros({width}, true)
                               .set_name("critic_b" + std::to_string(li)));
      prev = width;
    }
    std::vector<double> w(static_cast<std::size_t>(prev));
    for (double& v : w) v = rng.truncated_normal(0.02);
    net.weights.push_back(Tensor::from_data({prev, 1}, std::move(w), true)
                              .set_name("critic_w_out"));
    net.biases.push_back(Tensor::zeros({1}, true).set_name("critic_b_out"));
    return net;
  }

  Tensor forward(Tensor h) const {
    for (std::size_t li = 0; li + 1 < weights.size(); ++li)
      h = ad::relu(ad::add_bias(ad::matmul(h, weights[li]), biases[li]));
    return ad::add_bias(ad::matmul(h, weights.back()), biases.back());
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.push_back(weights[i]);
      out.push_back(biases[i]);
    }
    return out;
  }
};

Tensor gather_rows(const FeatureSet& fs, const std::vector<i64>& idx) {
  i64 d = fs.dim();
  std::vector<double> out(idx.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(fs.data.data() + idx[i] * d, d,
                out.data() + static_cast<i64>(i) * d);
  return Tensor::from_data({static_cast<i64>(idx.size()), d}, std::move(out));
}

struct Split {
  std::vector<i64> train, holdout;
};

Split holdout_split(i64 n, double frac, std::uint64_t seed) {
  Split s;
  i64 hold = static_cast<i64>(std::llround(frac * static_cast<double>(n)));
  hold = std::max<i64>(1, std::min(hold, n - 1));
  std::vector<i64> perm = Rng(seed).permutation(n);
  s.holdout.assign(perm.begin(), perm.begin() + hold);
  s.train.assign(perm.begin() + hold, perm.end());
  return s;
}

// One Donsker-Varadhan evaluation: statistic over a joint batch and a
// shuffled (marginal) batch; returns mean T_joint - log mean exp(T_marg).
struct DvNets {
  const Mlp& critic;
  // Optional linear projections applied before the critic (LMI); empty
  // tensors mean "use the raw features".
  Tensor proj_x, proj_y;

  Tensor statistic(const Tensor& xb, const Tensor& yb) const {
    Tensor u = proj_x.defined() ? ad::matmul(xb, proj_x) : xb;
    Tensor v = proj_y.defined() ? ad::matmul(yb, proj_y) : yb;
    return critic.forward(ad::concat_cols(u, v));
  }
};

struct DvStep {
  Tensor loss;
  double bound;      // DV value of this batch
  double marg_mean;  // mean exp statistic over the marginal batch
};

DvStep dv_step(const DvNets& nets, const Tensor& xb, const Tensor& yb,
               const Tensor& y_shuffled, double ema) {
  Tensor t_joint = nets.statistic(xb, yb);
  Tensor t_marg = nets.statistic(xb, y_shuffled);
  Tensor m_joint = ad::mean_all(t_joint);
  Tensor e_marg = ad::mean_all(ad::exp(t_marg));
  DvStep out;
  out.marg_mean = e_marg.item();
  out.bound = m_joint.item() - std::log(out.marg_mean);
  // Gradient of log E[e^T] taken with the EMA of the partition term in the
  // denominator; the objective value itself is not used for the update.
  out.loss = ad::sub(ad::mul_scalar(e_marg, 1.0 / ema), m_joint);
  return out;
}

std::string hash_config(const std::string& text) {
  std::ostringstream os;
  os << std::hex << fnv1a64(text);
  return os.str();
}

double digamma_int(i64 n, const std::vector<double>& table) {
  return table[static_cast<std::size_t>(n)];
}

std::vector<double> digamma_table(i64 up_to) {
  // psi(1) = -euler_gamma; psi(n+1) = psi(n) + 1/n.
  std::vector<double> t(static_cast<std::size_t>(up_to + 1), 0.0);
  t[1] = -0.57721566490153286061;
  for (i64 i = 1; i < up_to; ++i)
    t[static_cast<std::size_t>(i + 1)] =
        t[static_cast<std::size_t>(i)] + 1.0 / static_cast<double>(i);
  return t;
}

double ksg_raw(const double* x, i64 dx, const double* y, i64 dy, i64 n, int k) {
  std::vector<double> eps(static_cast<std::size_t>(n));
  std::vector<i64> nx(static_cast<std::size_t>(n)), ny(static_cast<std::size_t>(n));
  kernels::ksg_neighbor_stats(x, dx, y, dy, n, k, eps.data(), nx.data(),
                              ny.data());
  std::vector<double> psi = digamma_table(n + 1);
  double acc = 0.0;
  for (i64 i = 0; i < n; ++i)
    acc += digamma_int(nx[static_cast<std::size_t>(i)] + 1, psi) +
           digamma_int(ny[static_cast<std::size_t>(i)] + 1, psi);
  return digamma_int(k, psi) + digamma_int(n, psi) -
         acc / static_cast<double>(n);
}

}  // namespace

MiEstimate mine_estimate(const FeatureSet& x, const FeatureSet& y,
                         const MineConfig& cfg) {
  require_paired(x, y, "mine_estimate");
  if (cfg.batch < 2) throw ConfigError("mine_estimate: batch must be >= 2");
  if (cfg.steps < 1) throw ConfigError("mine_estimate: steps must be >= 1");
  if (!(cfg.ema_rate > 0.0 && cfg.ema_rate < 1.0))
    throw ConfigError("mine_estimate: ema_rate must lie in (0, 1)");
  if (cfg.eval_batches < 1 || cfg.eval_batches > cfg.steps)
    throw ConfigError("mine_estimate: eval_batches must lie in [1, steps]");
  if (!(cfg.holdout_frac > 0.0 && cfg.holdout_frac < 1.0))
    throw ConfigError("mine_estimate: holdout_frac must lie in (0, 1)");
  if (x.n() < 4 * cfg.batch)
    throw ConfigError("mine_estimate: need at least 4*batch samples, got " +
                      std::to_string(x.n()));

  Split split = holdout_split(x.n(), cfg.holdout_frac,
                              Rng::derive(cfg.seed, "mi-split"));
  Rng init_rng(Rng::derive(cfg.seed, "mi-init"));
  Rng batch_rng(Rng::derive(cfg.seed, "mi-batch"));
  Rng eval_rng(Rng::derive(cfg.seed, "mi-eval"));

  Mlp critic = Mlp::build(init_rng, x.dim() + y.dim(), cfg.hidden);
  DvNets nets{critic, {}, {}};
  std::vector<Tensor> params = critic.params();
  ad::Adam opt(params, ad::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  MiEstimate est;
  est.estimator = "mine";
  est.seed = cfg.seed;
  {
    std::ostringstream os;
    os << "mine|hidden=";
    for (int h : cfg.hidden) os << h << ",";
    os << "|lr=" << cfg.lr << "|batch=" << cfg.batch << "|steps=" << cfg.steps
       << "|ema=" << cfg.ema_rate << "|eval=" << cfg.eval_batches
       << "|hold=" << cfg.holdout_frac << "|seed=" << cfg.seed << "|n=" << x.n()
       << "|dx=" << x.dim() << "|dy=" << y.dim();
    est.config_hash = hash_config(os.str());
  }

  auto draw_batch = [](Rng& rng, const std::vector<i64>& from, int count) {
    std::vector<i64> idx(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
      idx[static_cast<std::size_t>(i)] =
          from[static_cast<std::size_t>(rng.below(static_cast<i64>(from.size())))];
    return idx;
  };
  auto shuffle_rows = [](Rng& rng, const std::vector<i64>& idx) {
    std::vector<i64> out(idx.size());
    std::vector<i64> perm = rng.permutation(static_cast<i64>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
      out[i] = idx[static_cast<std::size_t>(perm[i])];
    return out;
  };

  double ema = 0.0;
  bool ema_primed = false;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<i64> idx = draw_batch(batch_rng, split.train, cfg.batch);
    std::vector<i64> marg = shuffle_rows(batch_rng, idx);
    Tensor xb = gather_rows(x, idx);
    Tensor yb = gather_rows(y, idx);
    Tensor ysh = gather_rows(y, marg);

    double ema_for_step = ema_primed ? ema : 1.0;
    DvStep s = dv_step(nets, xb, yb, ysh, ema_for_step);
    if (!ema_primed) {
      ema = s.marg_mean;
      ema_primed = true;
      // Redo the loss with the primed value so step 0 is well-scaled.
      s = dv_step(nets, xb, yb, ysh, ema);
    } else {
      ema = cfg.ema_rate * ema + (1.0 - cfg.ema_rate) * s.marg_mean;
    }
    if (!std::isfinite(s.bound) || s.bound > cfg.divergence_limit)
      throw EstimationError(
          "mine_estimate: diverged at step " + std::to_string(step) +
              " (bound " + std::to_string(s.bound) + ")",
          est.curve);
    ad::backward(s.loss, params);
    opt.step();

    // Held-out bound for the curve; fresh batch, fresh shuffle.
    std::vector<i64> eidx = draw_batch(eval_rng, split.holdout, cfg.batch);
    std::vector<i64> emarg = shuffle_rows(eval_rng, eidx);
    DvStep ev = dv_step(nets, gather_rows(x, eidx), gather_rows(y, eidx),
                        gather_rows(y, emarg), ema);
    if (!std::isfinite(ev.bound))
      throw EstimationError("mine_estimate: non-finite held-out bound at step " +
                                std::to_string(step),
                            est.curve);
    est.curve.push_back(ev.bound);
  }

  double acc = 0.0;
  for (int i = 0; i < cfg.eval_batches; ++i)
    acc += est.curve[est.curve.size() - 1 - static_cast<std::size_t>(i)];
  est.raw = acc / cfg.eval_batches;
  est.value = std::max(0.0, est.raw);
  return est;
}

MiEstimate lmi_estimate(const FeatureSet& x, const FeatureSet& y,
                        const LmiConfig& cfg) {
  require_paired(x, y, "lmi_estimate");
  if (cfg.proj_dim < 1 ||
      cfg.proj_dim > std::min(x.dim(), y.dim()))
    throw ConfigError("lmi_estimate: proj_dim must lie in [1, min(dx, dy)]");
  if (2 * cfg.proj_dim > 16)
    throw ConfigError("lmi_estimate: projected joint dimension " +
                      std::to_string(2 * cfg.proj_dim) +
                      " too high for the k-NN readout (limit 16)");
  if (cfg.batch < 2) throw ConfigError("lmi_estimate: batch must be >= 2");
  if (cfg.steps < 1) throw ConfigError("lmi_estimate: steps must be >= 1");
  if (!(cfg.ema_rate > 0.0 && cfg.ema_rate < 1.0))
    throw ConfigError("lmi_estimate: ema_rate must lie in (0, 1)");
  if (!(cfg.holdout_frac > 0.0 && cfg.holdout_frac < 1.0))
    throw ConfigError("lmi_estimate: holdout_frac must lie in (0, 1)");
  if (x.n() < 4 * cfg.batch)
    throw ConfigError("lmi_estimate: need at least 4*batch samples, got " +
                      std::to_string(x.n()));
  if (cfg.ksg_neighbors < 1)
    throw ConfigError("lmi_estimate: ksg_neighbors must be >= 1");

  Split split = holdout_split(x.n(), cfg.holdout_frac,
                              Rng::derive(cfg.seed, "mi-split"));
  Rng init_rng(Rng::derive(cfg.seed, "mi-init"));
  Rng batch_rng(Rng::derive(cfg.seed, "mi-batch"));
  Rng eval_rng(Rng::derive(cfg.seed, "mi-eval"));

  i64 k = cfg.proj_dim;
  auto init_proj = [&](i64 rows, const char* name) {
    std::vector<double> w(static_cast<std::size_t>(rows * k));
    double stddev = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : w) v = init_rng.normal() * stddev;
    return Tensor::from_data({rows, k}, std::move(w), true).set_name(name);
  };
  Tensor proj_x = init_proj(x.dim(), "proj_x");
  Tensor proj_y = init_proj(y.dim(), "proj_y");
  Mlp critic = Mlp::build(init_rng, 2 * k, cfg.critic_hidden);
  DvNets nets{critic, proj_x, proj_y};
  std::vector<Tensor> params = critic.params();
  params.push_back(proj_x);
  params.push_back(proj_y);
  ad::Adam opt(params, ad::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  MiEstimate est;
  est.estimator = "lmi";
  est.seed = cfg.seed;
  {
    std::ostringstream os;
    os << "lmi|proj=" << cfg.proj_dim << "|hidden=";
    for (int h : cfg.critic_hidden) os << h << ",";
    os << "|lr=" << cfg.lr << "|batch=" << cfg.batch << "|steps=" << cfg.steps
       << "|ema=" << cfg.ema_rate << "|knn=" << cfg.ksg_neighbors
       << "|hold=" << cfg.holdout_frac << "|seed=" << cfg.seed << "|n=" << x.n()
       << "|dx=" << x.dim() << "|dy=" << y.dim();
    est.config_hash = hash_config(os.str());
  }

  auto draw_batch = [](Rng& rng, const std::vector<i64>& from, int count) {
    std::vector<i64> idx(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
      idx[static_cast<std::size_t>(i)] =
          from[static_cast<std::size_t>(rng.below(static_cast<i64>(from.size())))];
    return idx;
  };
  auto shuffle_rows = [](Rng& rng, const std::vector<i64>& idx) {
    std::vector<i64> out(idx.size());
    std::vector<i64> perm = rng.permutation(static_cast<i64>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
      out[i] = idx[static_cast<std::size_t>(perm[i])];
    return out;
  };

  double ema = 0.0;
  bool ema_primed = false;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<i64> idx = draw_batch(batch_rng, split.train, cfg.batch);
    std::vector<i64> marg = shuffle_rows(batch_rng, idx);
    Tensor xb = gather_rows(x, idx);
    Tensor yb = gather_rows(y, idx);
    Tensor ysh = gather_rows(y, marg);
    double ema_for_step = ema_primed ? ema : 1.0;
    DvStep s = dv_step(nets, xb, yb, ysh, ema_for_step);
    if (!ema_primed) {
      ema = s.marg_mean;
      ema_primed = true;
      s = dv_step(nets, xb, yb, ysh, ema);
    } else {
      ema = cfg.ema_rate * ema + (1.0 - cfg.ema_rate) * s.marg_mean;
    }
    if (!std::isfinite(s.bound) || s.bound > cfg.divergence_limit)
      throw EstimationError(
          "lmi_estimate: diverged at step " + std::to_string(step) +
              " (bound " + std::to_string(s.bound) + ")",
          est.curve);
    ad::backward(s.loss, params);
    opt.step();

    std::vector<i64> eidx = draw_batch(eval_rng, split.holdout, cfg.batch);
    std::vector<i64> emarg = shuffle_rows(eval_rng, eidx);
    DvStep ev = dv_step(nets, gather_rows(x, eidx), gather_rows(y, eidx),
                        gather_rows(y, emarg), ema);
    if (!std::isfinite(ev.bound))
      throw EstimationError("lmi_estimate: non-finite held-out bound at step " +
                                std::to_string(step),
                            est.curve);
    est.curve.push_back(ev.bound);
  }

  // Project the full held-out sample through the trained maps, standardise
  // per dimension, and read the value off the k-NN estimator.
  i64 hn = static_cast<i64>(split.holdout.size());
  auto project = [&](const FeatureSet& fs, const Tensor& proj) {
    i64 d = fs.dim();
    std::vector<double> rows(static_cast<std::size_t>(hn * d));
    for (i64 i = 0; i < hn; ++i)
      std::copy_n(fs.data.data() + split.holdout[static_cast<std::size_t>(i)] * d,
                  d, rows.data() + i * d);
    std::vector<double> out(static_cast<std::size_t>(hn * k));
    kernels::matmul(rows.data(), proj.data().data(), out.data(), hn, d, k);
    return out;
  };
  auto standardize = [&](std::vector<double>& m) {
    for (i64 j = 0; j < k; ++j) {
      double mean = 0.0;
      for (i64 i = 0; i < hn; ++i) mean += m[static_cast<std::size_t>(i * k + j)];
      mean /= static_cast<double>(hn);
      double var = 0.0;
      for (i64 i = 0; i < hn; ++i) {
        double c = m[static_cast<std::size_t>(i * k + j)] - mean;
        var += c * c;
      }
      var /= static_cast<double>(hn);
      double scale = 1.0 / std::max(std::sqrt(var), 1e-12);
      for (i64 i = 0; i < hn; ++i) {
        auto& v = m[static_cast<std::size_t>(i * k + j)];
        v = (v - mean) * scale;
      }
    }
  };
  std::vector<double> u = project(x, proj_x);
  std::vector<double> v = project(y, proj_y);
  standardize(u);
  standardize(v);
  if (hn <= cfg.ksg_neighbors)
    throw EstimationError(
        "lmi_estimate: holdout too small for the k-NN readout", est.curve);
  est.raw = ksg_raw(u.data(), k, v.data(), k, hn, cfg.ksg_neighbors);
  est.value = std::max(0.0, est.raw);
  return est;
}

double ksg_estimate(const FeatureSet& x, const FeatureSet& y, int neighbors) {
  require_paired(x, y, "ksg_estimate");
  i64 joint = x.dim() + y.dim();
  if (joint > 16)
    throw ConfigError("ksg_estimate: combined dimension " +
                      std::to_string(joint) +
                      " exceeds the k-NN limit of 16; use mine or lmi");
  if (x.n() < 100)
    throw DataError("ksg_estimate: need at least 100 samples, got " +
                    std::to_string(x.n()));
  if (neighbors < 1 || neighbors >= x.n())
    throw ConfigError("ksg_estimate: neighbors must lie in [1, N)");
  return ksg_raw(x.data.data(), x.dim(), y.data.data(), y.dim(), x.n(),
                 neighbors);
}

}  // namespace featprobe
