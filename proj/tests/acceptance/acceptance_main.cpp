// Release gate: one check per acceptance criterion, one PASS/FAIL line each.
// Every tolerance is pinned here, every seed is fixed, and the toolkit's own
// determinism guarantees make each verdict reproducible. Directional checks
// (criteria 6 to 8) drive the shipped CLI binary end to end; oracle checks
// run against the library directly.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "featprobe/errors.hpp"
#include "featprobe/feature_set.hpp"
#include "featprobe/gradcheck.hpp"
#include "featprobe/metrics.hpp"
#include "featprobe/mi.hpp"
#include "featprobe/report.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/synth.hpp"
#include "featprobe/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace featprobe;

namespace {

struct Ctx {
  fs::path work;       // scratch root, removed at exit
  std::string bin;     // CLI binary, from FEATPROBE_BIN
  int capture_id = 0;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct CliResult {
  int exit_code = -1;
  std::string out;
};

CliResult run_cli(Ctx& ctx, const std::string& args) {
  fs::path cap = ctx.work / ("cap" + std::to_string(ctx.capture_id++) + ".txt");
  std::string cmd = ctx.bin + " " + args + " > " + cap.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(cap);
  return r;
}

json cli_json(Ctx& ctx, const std::string& args, const std::string& what) {
  CliResult r = run_cli(ctx, "--json " + args);
  if (r.exit_code != 0)
    throw std::runtime_error(what + " exited " + std::to_string(r.exit_code) +
                             ": " + r.out.substr(0, 200));
  return json::parse(r.out);
}

void strip_wall_clock(json& j) {
  if (j.is_object()) {
    j.erase("wall_clock_sec");
    for (auto& [k, v] : j.items()) strip_wall_clock(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_wall_clock(v);
  }
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return slurp(a) == slurp(b);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  double m = mean_of(v), acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// ---- criterion 1: gradient correctness --------------------------------

Outcome criterion_gradients(Ctx&) {
  const int kSeeds = 20;
  const double kTol = 1e-4;
  auto t0 = std::chrono::steady_clock::now();
  auto rep = gradcheck::run(kSeeds, kTol, 1234);
  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  double worst = 0.0;
  std::string worst_op;
  bool neck_covered = false;
  for (const auto& op : rep.ops) {
    if (op.max_rel_err > worst) {
      worst = op.max_rel_err;
      worst_op = op.op;
    }
    if (op.op == "neck_2layer") neck_covered = true;
  }
  bool pass = rep.all_pass && neck_covered && secs < 60.0;
  return {pass, std::to_string(rep.ops.size()) + " ops x " +
                    std::to_string(kSeeds) + " seeds, worst rel err " +
                    fmt(worst) + " (" + worst_op + "), " + fmt(secs) +
                    " s of 60"};
}

// ---- criterion 2: Frechet distance oracle -----------------------------

Outcome criterion_fd(Ctx&) {
  const std::int64_t kN = 50000, kD = 8;
  const double kRelTol = 0.02;

  // Two diagonal Gaussians with hand-picked means and scales. Diagonal
  // covariances keep the analytic Frechet value in closed form:
  //   |mu_a - mu_b|^2 + sum_j (s_aj - s_bj)^2.
  std::vector<double> mu_a(kD), sd_a(kD), mu_b(kD), sd_b(kD);
  double analytic = 0.0;
  for (std::int64_t j = 0; j < kD; ++j) {
    mu_a[j] = 0.30 * j - 1.0;
    sd_a[j] = 0.70 + 0.10 * j;
    mu_b[j] = 0.25 * j - 0.5;
    sd_b[j] = 1.50 - 0.08 * j;
    analytic += (mu_a[j] - mu_b[j]) * (mu_a[j] - mu_b[j]) +
                (sd_a[j] - sd_b[j]) * (sd_a[j] - sd_b[j]);
  }

  auto draw = [&](std::uint64_t seed, const std::vector<double>& mu,
                  const std::vector<double>& sd) {
    FeatureSet f;
    f.shape = {kN, kD};
    f.data.resize(kN * kD);
    Rng rng(seed);
    rng.fill_normal(f.data.data(), f.data.size());
    for (std::int64_t i = 0; i < kN; ++i)
      for (std::int64_t j = 0; j < kD; ++j) {
        double& v = f.data[i * kD + j];
        v = mu[j] + sd[j] * v;
      }
    return f;
  };

  FeatureSet a = draw(501, mu_a, sd_a);
  FeatureSet b = draw(502, mu_b, sd_b);
  auto sa = summarize(a);
  double measured = frechet_distance(sa, summarize(b));
  double rel = std::abs(measured - analytic) / analytic;
  double self = frechet_distance(sa, sa);

  bool pass = rel < kRelTol && self == 0.0;
  return {pass, "sample " + fmt(measured) + " vs analytic " + fmt(analytic) +
                    " (rel err " + fmt(rel) + ", tol 0.02); FD(a,a) = " +
                    fmt(self)};
}

// ---- criterion 3: kernel distance calibration -------------------------

Outcome criterion_kd(Ctx&) {
  const int kPairs = 10;
  const std::int64_t kN = 5000, kD = 6;

  // Identical distributions: two independent standard normal samples per
  // seed, which is exactly what the joint generator produces at rho = 0.
  std::vector<double> rbf_vals, poly_vals;
  for (int i = 0; i < kPairs; ++i) {
    SynthSpec spec;
    spec.seed = 100 + static_cast<std::uint64_t>(i);
    spec.gauss_dx = kD;
    spec.gauss_dy = kD;
    spec.joint_cov = paired_correlation_cov(kD, kD, 0.0);
    auto pair = synth_gaussian_pair(spec, kN);

    KernelConfig rbf;
    rbf_vals.push_back(kernel_distance(pair.x, pair.y, rbf).value);
    KernelConfig poly;
    poly.kind = KernelConfig::Kind::poly;
    poly_vals.push_back(kernel_distance(pair.x, pair.y, poly).value);
  }
  double rbf_mean = mean_of(rbf_vals);
  double rbf_se = sample_std(rbf_vals) / std::sqrt(double(kPairs));
  double poly_mean = mean_of(poly_vals);
  double poly_se = sample_std(poly_vals) / std::sqrt(double(kPairs));
  bool null_ok =
      std::abs(rbf_mean) <= 3.0 * rbf_se && std::abs(poly_mean) <= 3.0 * poly_se;

  // Separated clusters: two tight blobs 20 apart with a fixed bandwidth.
  // Within-cluster kernels sit at 1, cross kernels underflow to 0, so the
  // unbiased estimate must land on the separated-limit value 2.
  const std::int64_t kM = 500, kDs = 4;
  const double kSigma = 1e-4, kShift = 20.0, kGamma = 0.5;
  FeatureSet xs, ys;
  xs.shape = {kM, kDs};
  ys.shape = {kM, kDs};
  xs.data.resize(kM * kDs);
  ys.data.resize(kM * kDs);
  Rng rng(700);
  rng.fill_normal(xs.data.data(), xs.data.size());
  rng.fill_normal(ys.data.data(), ys.data.size());
  for (auto& v : xs.data) v *= kSigma;
  for (auto& v : ys.data) v = kShift + kSigma * v;
  KernelConfig sep;
  sep.gamma = kGamma;
  double sep_val = kernel_distance(xs, ys, sep).value;
  bool sep_ok = std::abs(sep_val - 2.0) < 1e-3;

  return {null_ok && sep_ok,
          "null rbf " + fmt(rbf_mean) + " (3se " + fmt(3 * rbf_se) +
              "), null poly " + fmt(poly_mean) + " (3se " + fmt(3 * poly_se) +
              "); separated " + fmt(sep_val) + " vs limit 2"};
}

// ---- criterion 4: MI estimators vs closed form ------------------------

Outcome criterion_mi(Ctx&) {
  auto t0 = std::chrono::steady_clock::now();

  auto make_pair = [](std::uint64_t seed, std::int64_t d, double rho,
                      std::int64_t n, std::int64_t lift) {
    SynthSpec spec;
    spec.seed = seed;
    spec.gauss_dx = d;
    spec.gauss_dy = d;
    spec.joint_cov = paired_correlation_cov(d, d, rho);
    spec.lift_dim = lift;
    return synth_gaussian_pair(spec, n);
  };
  const double rho_a = 0.9;
  const double true_a = -0.5 * std::log(1.0 - rho_a * rho_a);  // 0.8304 nats
  const double rho_b = rho_for_target_mi(1.0, 4);

  std::vector<std::string> problems;
  auto check_rel = [&](const std::string& label, double est, double truth,
                       double tol) {
    double rel = std::abs(est - truth) / truth;
    if (rel > tol)
      problems.push_back(label + " " + fmt(est) + " vs " + fmt(truth) +
                         " (rel " + fmt(rel) + " > " + fmt(tol) + ")");
    return label + "=" + fmt(est);
  };
  auto check_null = [&](const std::string& label, double est, double cap) {
    if (est > cap)
      problems.push_back(label + " " + fmt(est) + " > " + fmt(cap));
    return label + "=" + fmt(est);
  };

  std::string report;
  {
    auto a = make_pair(41, 1, rho_a, 5000, 0);
    auto b = make_pair(42, 4, rho_b, 20000, 0);
    auto c = make_pair(43, 1, 0.0, 5000, 0);
    report += check_rel("ksg/1d", ksg_estimate(a.x, a.y, 5), true_a, 0.10);
    report += " " + check_rel("ksg/4d", ksg_estimate(b.x, b.y, 5), 1.0, 0.10);
    report += " " + check_null("ksg/ind", ksg_estimate(c.x, c.y, 5), 0.05);
  }
  {
    MineConfig mc;
    mc.steps = 2000;
    mc.batch = 256;
    mc.seed = 7;
    auto a = make_pair(41, 1, rho_a, 10000, 0);
    auto b = make_pair(42, 4, rho_b, 10000, 0);
    auto c = make_pair(43, 4, 0.0, 10000, 0);
    report +=
        " " + check_rel("mine/1d", mine_estimate(a.x, a.y, mc).value, true_a,
                        0.15);
    report +=
        " " + check_rel("mine/4d", mine_estimate(b.x, b.y, mc).value, 1.0,
                        0.15);
    report +=
        " " + check_null("mine/ind", mine_estimate(c.x, c.y, mc).value, 0.05);
  }
  {
    LmiConfig lc;
    lc.steps = 1500;
    lc.batch = 256;
    lc.ksg_neighbors = 2;
    lc.seed = 7;
    auto a = make_pair(44, 1, rho_a, 10000, 64);
    auto b = make_pair(45, 4, rho_b, 10000, 64);
    auto c = make_pair(46, 4, 0.0, 10000, 64);
    report += " " + check_rel("lmi/1d64", lmi_estimate(a.x, a.y, lc).value,
                              true_a, 0.25);
    report += " " + check_rel("lmi/4d64", lmi_estimate(b.x, b.y, lc).value,
                              1.0, 0.25);
    report +=
        " " + check_null("lmi/ind64", lmi_estimate(c.x, c.y, lc).value, 0.10);
  }

  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (secs >= 600.0) problems.push_back("runtime " + fmt(secs) + " s >= 600");
  if (!problems.empty()) {
    std::string all;
    for (const auto& p : problems) all += (all.empty() ? "" : "; ") + p;
    return {false, all};
  }
  return {true, report + " (" + fmt(secs) + " s of 600)"};
}

// ---- criterion 5: loss combination mechanics --------------------------

Outcome criterion_loss_mechanics(Ctx&) {
  // 401 steps with horizon 400 puts the anneal midpoint on an exact binary
  // fraction, so 0.5 must come out bitwise.
  SynthSpec spec;
  spec.seed = 900;
  spec.latent_dim = 6;
  spec.token_count = 2;
  spec.encoder_dim = 8;
  spec.expert_dim = 3;
  spec.overlap = 1.0;
  auto data = synth_task_pipeline(spec, 600);

  TrainConfig tc;
  tc.steps = 401;
  tc.alpha_horizon = 400;
  tc.batch = 16;
  tc.eval_interval = 200;
  tc.seed = 12;
  tc.experiment = "mechanics";
  NeckConfig nc;
  nc.d_model = 8;
  nc.heads = 2;
  TrainData td{data.encoder, data.expert1};
  RunRecord rec = train_neck(tc, nc, td, TaskSpec{});

  if (rec.curve.size() != 401)
    return {false, "expected 401 logged steps, got " +
                       std::to_string(rec.curve.size())};
  for (const auto& b : rec.curve) {
    if (b.total != combined_loss(b.alpha, b.distill, b.task))
      return {false, "step " + std::to_string(b.step) +
                         ": total differs from alpha*distill + (1-alpha)*task"};
    if (b.alpha != alpha_schedule(b.step, 400))
      return {false,
              "step " + std::to_string(b.step) + ": alpha off the schedule"};
  }
  if (rec.curve[0].alpha != 1.0) return {false, "alpha(0) != 1"};
  if (rec.curve[200].alpha != 0.5) return {false, "alpha(midpoint) != 0.5"};
  if (rec.curve[400].alpha != 0.0) return {false, "alpha(horizon) != 0"};
  return {true,
          "401 steps: total identical to the recombined terms at every step; "
          "alpha hits 1, 0.5, 0 exactly"};
}

// ---- criterion 6: distillation direction ------------------------------

Outcome criterion_distill_direction(Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  fs::path d = ctx.work / "c6";
  fs::create_directories(d);
  auto r = run_cli(ctx,
                   "synth pipeline --n 4000 --latent 8 --tokens 2 --enc-dim 16 "
                   "--expert-dim 4 --depth 1 --overlap 0.5 --noise 0.05 "
                   "--seed 1000 --out " + (d / "data").string());
  if (r.exit_code != 0) return {false, "data generation failed: " + r.out};

  spit(d / "t.toml",
       "experiment = \"c6\"\nseed = 1\n"
       "[data]\nmanifest = \"" + (d / "data/manifest.json").string() + "\"\n"
       "input_role = \"encoder\"\ntarget_role = \"expert1\"\n"
       "[neck]\nlayers = 2\nd_model = 24\n"
       "[train]\nsteps = 1000\nbatch = 32\nlr = 1e-3\neval_interval = 500\n"
       "[task]\nid = \"task1\"\nhead = \"linear\"\nhead_dim = 1\n"
       "[metrics]\nselect = \"fd\"\n");

  auto fd_of = [&](int seed, bool distill) {
    std::string args = "--seed " + std::to_string(seed) + " train --config " +
                       (d / "t.toml").string();
    if (!distill) args += " --no-distill";
    json rec = cli_json(ctx, args, "train");
    return rec.at("final_metrics").at("metrics").at(0).at("value").get<double>();
  };

  std::string detail;
  bool pass = true;
  for (int seed = 1; seed <= 3; ++seed) {
    double with = fd_of(seed, true);
    double without = fd_of(seed, false);
    double ratio = without / with;
    pass = pass && without >= 5.0 * with;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") +
              std::to_string(seed) + ": " + fmt(ratio) + "x";
  }
  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  pass = pass && secs < 300.0;
  return {pass, "FD(no-distill)/FD(distill) " + detail + ", need >= 5x (" +
                    fmt(secs) + " s of 300)"};
}

// ---- criterion 7: cross-neck bottleneck direction ---------------------

Outcome criterion_cross_neck(Ctx& ctx) {
  auto t0 = std::chrono::steady_clock::now();
  fs::path d = ctx.work / "c7";
  fs::create_directories(d);

  auto cfg_text = [&](const std::string& manifest, const std::string& target,
                      const std::string& task, const std::string& extra) {
    return "experiment = \"c7\"\nseed = 1\n"
           "[data]\nmanifest = \"" + manifest + "\"\n"
           "input_role = \"encoder\"\ntarget_role = \"" + target + "\"\n"
           "[neck]\nlayers = 2\nd_model = 24\n"
           "[train]\nsteps = 2000\nbatch = 64\nlr = 1e-3\n"
           "eval_interval = 1000\n"
           "[task]\nid = \"" + task + "\"\nhead = \"identity\"\n" + extra;
  };

  std::string detail;
  bool pass = true;
  for (int overlap = 0; overlap <= 1; ++overlap) {
    std::string tag = std::to_string(overlap);
    auto r = run_cli(
        ctx, "synth pipeline --n 4000 --latent 8 --tokens 2 --enc-dim 16 "
             "--expert-dim 4 --depth 1 --overlap " + tag +
             " --noise 0.3 --seed 2000 --out " + (d / ("data" + tag)).string());
    if (r.exit_code != 0) return {false, "data generation failed: " + r.out};
    std::string man = (d / ("data" + tag) / "manifest.json").string();
    std::string ck = (d / ("n1_" + tag + ".ck")).string();

    spit(d / ("t1_" + tag + ".toml"), cfg_text(man, "expert1", "task1", ""));
    spit(d / ("dir_" + tag + ".toml"), cfg_text(man, "expert2", "task2", ""));
    spit(d / ("cr_" + tag + ".toml"),
         cfg_text(man, "expert2", "task2",
                  "[cross]\nfirst_checkpoint = \"" + ck +
                      "\"\nfirst_task = \"task1\"\n"));

    for (int seed = 1; seed <= 3; ++seed) {
      fs::remove(ck);
      std::string s = std::to_string(seed);
      CliResult tr = run_cli(ctx, "--seed " + s + " train --config " +
                                      (d / ("t1_" + tag + ".toml")).string() +
                                      " --checkpoint " + ck);
      if (tr.exit_code != 0) return {false, "first-task training failed"};
      double direct =
          cli_json(ctx, "--seed " + s + " train --config " +
                            (d / ("dir_" + tag + ".toml")).string(),
                   "direct")
              .at("final_holdout_task")
              .get<double>();
      double cross =
          cli_json(ctx, "--seed " + s + " cross --config " +
                            (d / ("cr_" + tag + ".toml")).string(),
                   "cross")
              .at("final_holdout_task")
              .get<double>();
      double ratio = cross / direct;
      bool ok = overlap == 0 ? ratio >= 1.10 : std::abs(ratio - 1.0) <= 0.10;
      pass = pass && ok;
      detail += (detail.empty() ? "" : ", ") + std::string("w") + tag + " s" +
                s + ": " + fmt(ratio) + "x";
    }
  }
  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  pass = pass && secs < 600.0;
  return {pass, "cross/direct " + detail +
                    "; need >= 1.10x at w0 and within 10% at w1 (" + fmt(secs) +
                    " s of 600)"};
}

// ---- criterion 8: capacity sweep direction ----------------------------

Outcome criterion_capacity_sweep(Ctx& ctx) {
  fs::path d = ctx.work / "c8";
  fs::create_directories(d);
  auto r = run_cli(ctx,
                   "synth pipeline --n 2500 --latent 6 --tokens 2 --enc-dim 12 "
                   "--expert-dim 4 --depth 5 --overlap 0.5 --noise 0.005 "
                   "--seed 3000 --out " + (d / "data").string());
  if (r.exit_code != 0) return {false, "data generation failed: " + r.out};

  spit(d / "t.toml",
       "experiment = \"c8\"\nseed = 1\n"
       "[data]\nmanifest = \"" + (d / "data/manifest.json").string() + "\"\n"
       "input_role = \"encoder\"\ntarget_role = \"expert1\"\n"
       "[neck]\nlayers = 2\nd_model = 24\n"
       "[train]\nsteps = 3000\nbatch = 32\nlr = 1e-3\neval_interval = 1500\n"
       "[task]\nid = \"task1\"\nhead = \"identity\"\n");

  CliResult sw = run_cli(ctx, "sweep --config " + (d / "t.toml").string() +
                                  " --layers 2,4,6 --seeds 3 --jobs 1 --out " +
                                  (d / "sw").string());
  if (sw.exit_code != 0) return {false, "sweep failed: " + sw.out};

  // Final held-out task loss per cell, grouped by depth.
  json doc = json::parse(slurp(d / "sw" / "sweep.json"));
  std::map<int, std::vector<double>> by_depth;
  for (const auto& cell : doc.at("cells")) {
    if (cell.at("status") != "ok")
      return {false, "cell failed: " + cell.at("error").get<std::string>()};
    by_depth[cell.at("layers").get<int>()].push_back(
        cell.at("holdout_task").get<double>());
  }
  if (by_depth.size() != 3) return {false, "expected depths 2, 4, 6"};
  double m2 = mean_of(by_depth[2]), m4 = mean_of(by_depth[4]),
         m6 = mean_of(by_depth[6]);
  double se = 0.0;
  for (auto& [depth, vals] : by_depth)
    se = std::max(se, sample_std(vals) / std::sqrt(double(vals.size())));
  double tol = 2.0 * se;

  bool monotone = (m4 <= m2 + tol) && (m6 <= m4 + tol);
  bool strict = m6 < m2;

  // The curve table itself must be well formed.
  std::string csv = slurp(d / "sw" / "curve.csv");
  bool csv_ok = csv.rfind("sweep_value,metric,mean,std\n", 0) == 0 &&
                csv.find("holdout_task") != std::string::npos;

  return {monotone && strict && csv_ok,
          "mean holdout loss 2L " + fmt(m2) + " -> 4L " + fmt(m4) + " -> 6L " +
              fmt(m6) + " (noise tol " + fmt(tol) + "), csv " +
              (csv_ok ? "valid" : "INVALID")};
}

// ---- criterion 9: determinism ----------------------------------------

Outcome criterion_determinism(Ctx& ctx) {
  fs::path d = ctx.work / "c9";
  fs::create_directories(d);
  std::vector<std::string> mismatches;

  auto json_twice = [&](const std::string& args, const std::string& label,
                        bool drop_checkpoint) {
    json a = cli_json(ctx, args, label);
    json b = cli_json(ctx, args, label);
    strip_wall_clock(a);
    strip_wall_clock(b);
    if (drop_checkpoint) {
      a.erase("checkpoint");
      b.erase("checkpoint");
    }
    if (a != b) mismatches.push_back(label);
  };

  // Generators: every emitted file byte-identical across reruns.
  for (std::string gen :
       {std::string("gaussian --dx 3 --dy 3 --n 400 --rho 0.7"),
        std::string("pipeline --n 300 --latent 6 --tokens 2 --enc-dim 8 "
                    "--expert-dim 3 --overlap 0.5 --noise 0.1")}) {
    std::string kind = gen.substr(0, gen.find(' '));
    fs::path a = d / (kind + "_a"), b = d / (kind + "_b");
    run_cli(ctx, "synth " + gen + " --seed 5 --out " + a.string());
    run_cli(ctx, "synth " + gen + " --seed 5 --out " + b.string());
    for (const auto& entry : fs::directory_iterator(a)) {
      fs::path name = entry.path().filename();
      if (!same_bytes(entry.path(), b / name))
        mismatches.push_back("synth " + kind + "/" + name.string());
    }
  }

  std::string gman = (d / "gaussian_a" / "manifest.json").string();
  std::string pman = (d / "pipeline_a" / "manifest.json").string();
  json_twice("metrics --manifest " + pman +
                 " --role-a expert1 --role-b expert2 --metrics "
                 "fd,kd_rbf,kd_poly,cosine,mi1d",
             "metrics", false);
  json_twice("--seed 3 mi --manifest " + gman +
                 " --estimator ksg,mine --steps 200 --batch 64",
             "mi", false);
  json_twice("gradcheck --seeds 2", "gradcheck", false);

  spit(d / "t.toml",
       "experiment = \"c9\"\nseed = 4\n"
       "[data]\nmanifest = \"" + pman + "\"\n"
       "input_role = \"encoder\"\ntarget_role = \"expert1\"\n"
       "[neck]\nlayers = 2\nd_model = 8\n"
       "[train]\nsteps = 40\nbatch = 16\neval_interval = 20\n"
       "[task]\nid = \"task1\"\n"
       "[metrics]\nselect = \"fd,cosine\"\n");
  json_twice("train --config " + (d / "t.toml").string() + " --checkpoint " +
                 (d / "a.ck").string() + " --steps 40",
             "train", true);
  run_cli(ctx, "train --config " + (d / "t.toml").string() + " --checkpoint " +
                   (d / "b.ck").string() + " --steps 40");
  if (!same_bytes(d / "a.ck", d / "b.ck")) mismatches.push_back("checkpoint bytes");

  spit(d / "c.toml",
       "experiment = \"c9x\"\nseed = 4\n"
       "[data]\nmanifest = \"" + pman + "\"\n"
       "input_role = \"encoder\"\ntarget_role = \"expert2\"\n"
       "[neck]\nlayers = 2\nd_model = 8\n"
       "[train]\nsteps = 30\nbatch = 16\neval_interval = 15\n"
       "[task]\nid = \"task2\"\n"
       "[cross]\nfirst_checkpoint = \"" + (d / "b.ck").string() + "\"\n"
       "first_task = \"task1\"\n");
  json_twice("cross --config " + (d / "c.toml").string(), "cross", false);

  for (std::string which : {std::string("s1"), std::string("s2")}) {
    auto r = run_cli(ctx, "sweep --config " + (d / "t.toml").string() +
                              " --layers 2 --seeds 2 --steps 20 --jobs 1 "
                              "--out " + (d / which).string());
    if (r.exit_code != 0) mismatches.push_back("sweep exit");
  }
  if (!same_bytes(d / "s1" / "curve.csv", d / "s2" / "curve.csv"))
    mismatches.push_back("sweep curve.csv");
  for (const auto& entry : fs::directory_iterator(d / "s1")) {
    std::string name = entry.path().filename().string();
    if (name.rfind("run_", 0) != 0) continue;
    json a = json::parse(slurp(entry.path()));
    json b = json::parse(slurp(d / "s2" / name));
    strip_wall_clock(a);
    strip_wall_clock(b);
    if (a != b) mismatches.push_back("sweep record " + name);
  }

  if (!mismatches.empty()) {
    std::string all;
    for (const auto& m : mismatches) all += (all.empty() ? "" : ", ") + m;
    return {false, "non-reproducible: " + all};
  }
  return {true,
          "synth, metrics, mi, train, cross, sweep, gradcheck all rerun "
          "bit-identically (wall clock aside)"};
}

// ---- criterion 10: format conformance ---------------------------------

// Hand-built v1.0 header around a raw payload, for malformed-file cases.
std::string handmade_npy(const std::string& descr, const std::string& shape,
                         const std::string& order, const std::string& payload) {
  std::string dict = "{'descr': " + descr + ", 'fortran_order': " + order +
                     ", 'shape': " + shape + ", }";
  std::size_t unpadded = 10 + dict.size() + 1;
  std::size_t padded = (unpadded + 63) / 64 * 64;
  dict += std::string(padded - unpadded, ' ');
  dict += '\n';
  std::string header = "\x93NUMPY";
  header += '\x01';
  header += '\x00';
  std::uint16_t len = static_cast<std::uint16_t>(dict.size());
  header += static_cast<char>(len & 0xff);
  header += static_cast<char>(len >> 8);
  return header + dict + payload;
}

template <class E>
bool rejects(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome criterion_formats(Ctx& ctx) {
  fs::path d = ctx.work / "c10";
  fs::create_directories(d);
  std::vector<std::string> problems;

  // Bit-exact round-trip, including signed zero and subnormals.
  FeatureSet tricky;
  tricky.shape = {2, 4};
  tricky.data = {0.0, -0.0, 5e-324, 1e308, -3.25, 1.0 / 3.0, 2.2250738585072014e-308, 42.0};
  save_feature_file(tricky, (d / "t.npy").string());
  FeatureSet back = load_feature_file((d / "t.npy").string());
  if (back.shape != tricky.shape ||
      std::memcmp(back.data.data(), tricky.data.data(),
                  tricky.data.size() * 8) != 0)
    problems.push_back("round-trip not bit-exact");
  save_feature_file(back, (d / "t2.npy").string());
  if (!same_bytes(d / "t.npy", d / "t2.npy"))
    problems.push_back("re-saved file differs");

  // Malformed inputs map onto the documented error classes.
  std::string payload(8 * 4, '\0');
  auto put = [&](const char* name, const std::string& bytes) {
    spit(d / name, bytes);
    return (d / name).string();
  };
  auto expect = [&](const char* what, bool ok) {
    if (!ok) problems.push_back(std::string("wrong error class: ") + what);
  };
  expect("bad magic", rejects<FormatError>([&] {
           load_feature_file(put("m.npy", "BOGUS!" + payload));
         }));
  expect("big-endian dtype", rejects<FormatError>([&] {
           load_feature_file(
               put("be.npy", handmade_npy("'>f8'", "(2, 2)", "False", payload)));
         }));
  expect("fortran order", rejects<FormatError>([&] {
           load_feature_file(
               put("f.npy", handmade_npy("'<f8'", "(2, 2)", "True", payload)));
         }));
  expect("trailing bytes", rejects<FormatError>([&] {
           load_feature_file(put(
               "tr.npy",
               handmade_npy("'<f8'", "(2, 2)", "False", payload + "xx")));
         }));
  std::string inf_payload = payload;
  double inf = std::numeric_limits<double>::infinity();
  std::memcpy(&inf_payload[8], &inf, 8);
  expect("non-finite payload", rejects<DataError>([&] {
           load_feature_file(
               put("i.npy", handmade_npy("'<f8'", "(2, 2)", "False", inf_payload)));
         }));
  expect("missing file", rejects<IoError>([&] {
           load_feature_file((d / "absent.npy").string());
         }));

  // A freshly produced report must satisfy the schema file shipped in docs/.
  fs::path schema_path = "docs/schema/metric_report.schema.json";
  if (!fs::exists(schema_path)) {
    problems.push_back("shipped schema not found at " + schema_path.string() +
                       " (run from the repository root)");
  } else {
    json schema = json::parse(slurp(schema_path));
    SynthSpec spec;
    spec.seed = 1;
    spec.gauss_dx = 3;
    spec.gauss_dy = 3;
    spec.joint_cov = paired_correlation_cov(3, 3, 0.4);
    auto pair = synth_gaussian_pair(spec, 400);
    MetricSelection sel = parse_metric_selection("fd,cosine,mi1d");
    MetricReport rep = evaluate_pathways(pair.x, pair.y, sel, "conformance");
    std::string why;
    if (!validate_schema(rep.to_json(), schema, &why))
      problems.push_back("report fails shipped schema: " + why);
    json broken = rep.to_json();
    broken.erase("experiment");
    if (validate_schema(broken, schema, &why))
      problems.push_back("schema accepted a report missing 'experiment'");
  }

  if (!problems.empty()) {
    std::string all;
    for (const auto& p : problems) all += (all.empty() ? "" : "; ") + p;
    return {false, all};
  }
  return {true,
          "round-trip bit-exact; six malformed cases hit FormatError, "
          "DataError and IoError; report validates against docs/schema"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Row {
    int number;
    const char* label;
    std::function<Outcome(Ctx&)> fn;
  };
  std::vector<Row> rows = {
      {1, "gradient correctness", criterion_gradients},
      {2, "Frechet distance oracle", criterion_fd},
      {3, "kernel distance calibration", criterion_kd},
      {4, "MI estimators vs closed form", criterion_mi},
      {5, "loss combination mechanics", criterion_loss_mechanics},
      {6, "distillation direction", criterion_distill_direction},
      {7, "cross-neck bottleneck direction", criterion_cross_neck},
      {8, "capacity sweep direction", criterion_capacity_sweep},
      {9, "determinism", criterion_determinism},
      {10, "format conformance", criterion_formats},
  };

  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  Ctx ctx;
  ctx.work = fs::temp_directory_path() /
             ("featprobe_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(ctx.work);
  const char* bin = std::getenv("FEATPROBE_BIN");
  ctx.bin = bin ? bin : "";

  int failed = 0, ran = 0;
  for (auto& row : rows) {
    if (!wanted.empty() &&
        std::find(wanted.begin(), wanted.end(), row.number) == wanted.end())
      continue;
    ++ran;
    Outcome out;
    auto t0 = std::chrono::steady_clock::now();
    bool needs_cli = row.number >= 6 && row.number <= 9;
    if (needs_cli && ctx.bin.empty()) {
      out = {false, "FEATPROBE_BIN is not set"};
    } else {
      try {
        out = row.fn(ctx);
      } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
      }
    }
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::printf("%s criterion %2d (%s): %s [%.1f s]\n",
                out.pass ? "PASS" : "FAIL", row.number, row.label,
                out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.pass) ++failed;
  }

  std::error_code ec;
  fs::remove_all(ctx.work, ec);
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
