#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "featprobe/errors.hpp"
#include "featprobe/gradcheck.hpp"
#include "featprobe/manifest.hpp"
#include "featprobe/metrics.hpp"
#include "featprobe/mi.hpp"
#include "featprobe/neck.hpp"
#include "featprobe/report.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/synth.hpp"
#include "featprobe/tensor.hpp"
#include "featprobe/tomlmini.hpp"
#include "featprobe/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace featprobe::cli {
namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  bool json_mode = false;
  int jobs = 0;
};

// Writes the machine document to --out (when given) and to stdout in --json
// mode; otherwise the human renderer owns stdout. Exactly one of the two
// ever prints there.
void emit(const json& doc, const GlobalOpts& g,
          const std::function<void(std::ostream&)>& human) {
  if (!g.out.empty()) write_text_file(g.out, doc.dump(2) + "\n");
  if (g.json_mode) {
    std::cout << doc.dump(2) << "\n";
  } else {
    human(std::cout);
  }
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known)
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: field '") + key +
                      "' has the wrong type");
  }
}

std::string resolve_from(const std::string& base_dir, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).string();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t b = item.find_first_not_of(" \t");
    std::size_t e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// ---- synth ------------------------------------------------------------

struct SynthGaussianOpts {
  std::int64_t dx = 4, dy = 4, n = 10000;
  double mi = -1.0, rho = 0.0;
  bool rho_given = false;
  std::int64_t lift = 0;
  bool force = false;
};

int cmd_synth_gaussian(const GlobalOpts& g, const SynthGaussianOpts& o) {
  std::string dir = g.out.empty() ? "." : g.out;
  fs::create_directories(dir);

  double rho;
  if (o.rho_given && o.mi >= 0.0)
    throw ConfigError("synth gaussian: give either --mi or --rho, not both");
  if (o.rho_given) {
    rho = o.rho;
  } else {
    double target = o.mi >= 0.0 ? o.mi : 1.0;
    rho = rho_for_target_mi(target, std::min(o.dx, o.dy));
  }

  SynthSpec spec;
  spec.seed = g.seed;
  spec.gauss_dx = o.dx;
  spec.gauss_dy = o.dy;
  spec.joint_cov = paired_correlation_cov(o.dx, o.dy, rho);
  spec.lift_dim = o.lift;
  auto pair = synth_gaussian_pair(spec, o.n);

  save_feature_file(pair.x, (fs::path(dir) / "x.npy").string(), o.force);
  save_feature_file(pair.y, (fs::path(dir) / "y.npy").string(), o.force);

  Manifest m;
  m.experiment = "gaussian-pair";
  m.seed = g.seed;
  m.entries = {{"x", "x.npy", pair.x.shape}, {"y", "y.npy", pair.y.shape}};
  save_manifest(m, (fs::path(dir) / "manifest.json").string(), o.force);

  json truth = {{"generator", "gaussian_pair"}, {"seed", g.seed},
                {"n", o.n},          {"dx", o.dx},
                {"dy", o.dy},        {"rho", rho},
                {"lift_dim", o.lift}, {"true_mi", pair.true_mi}};
  write_text_file((fs::path(dir) / "truth.json").string(), truth.dump(2) + "\n");

  json doc = {{"command", "synth.gaussian"},
              {"out_dir", dir},
              {"files", {"x.npy", "y.npy", "manifest.json", "truth.json"}},
              {"truth", truth}};
  GlobalOpts ge = g;
  ge.out.clear();  // --out was the directory; the files above are the output
  emit(doc, ge, [&](std::ostream& os) {
    os << "wrote " << dir << "/{x,y}.npy  n=" << o.n << "  true MI "
       << pair.true_mi << " nats (rho " << rho << ")\n";
  });
  return 0;
}

struct SynthPipelineOpts {
  std::int64_t n = 4000;
  std::int64_t latent = 8, tokens = 4, enc_dim = 16, expert_dim = 4;
  int depth = 1;
  double overlap = 0.0, noise = 0.0;
  bool force = false;
};

int cmd_synth_pipeline(const GlobalOpts& g, const SynthPipelineOpts& o) {
  std::string dir = g.out.empty() ? "." : g.out;
  fs::create_directories(dir);

  SynthSpec spec;
  spec.seed = g.seed;
  spec.latent_dim = o.latent;
  spec.token_count = o.tokens;
  spec.encoder_dim = o.enc_dim;
  spec.expert_dim = o.expert_dim;
  spec.encoder_depth = o.depth;
  spec.overlap = o.overlap;
  spec.noise = o.noise;
  auto data = synth_task_pipeline(spec, o.n);

  auto put = [&](const FeatureSet& features, const std::string& name) {
    save_feature_file(features, (fs::path(dir) / name).string(), o.force);
  };
  put(data.encoder, "encoder.npy");
  put(data.expert1, "expert1.npy");
  put(data.expert2, "expert2.npy");
  put(data.latent, "latent.npy");

  Manifest m;
  m.experiment = "task-pipeline";
  m.seed = g.seed;
  m.entries = {{"encoder", "encoder.npy", data.encoder.shape},
               {"expert1", "expert1.npy", data.expert1.shape},
               {"expert2", "expert2.npy", data.expert2.shape},
               {"latent", "latent.npy", data.latent.shape}};
  save_manifest(m, (fs::path(dir) / "manifest.json").string(), o.force);

  json truth = {{"generator", "task_pipeline"},
                {"seed", g.seed},
                {"n", o.n},
                {"latent_dim", o.latent},
                {"token_count", o.tokens},
                {"encoder_dim", o.enc_dim},
                {"expert_dim", o.expert_dim},
                {"encoder_depth", o.depth},
                {"overlap", o.overlap},
                {"noise", o.noise}};
  write_text_file((fs::path(dir) / "truth.json").string(), truth.dump(2) + "\n");

  json doc = {{"command", "synth.pipeline"},
              {"out_dir", dir},
              {"files",
               {"encoder.npy", "expert1.npy", "expert2.npy", "latent.npy",
                "manifest.json", "truth.json"}},
              {"truth", truth}};
  GlobalOpts ge = g;
  ge.out.clear();
  emit(doc, ge, [&](std::ostream& os) {
    os << "wrote " << dir << "/{encoder,expert1,expert2,latent}.npy  n=" << o.n
       << "  overlap " << o.overlap << "  noise " << o.noise << "\n";
  });
  return 0;
}

// ---- metrics ----------------------------------------------------------

struct EstimatorKnobs {
  int steps = 0;
  int batch = 0;
  int neighbors = 0;
  int proj_dim = 0;

  void apply(MetricSelection& sel, std::uint64_t seed) const {
    if (steps > 0) sel.mine_cfg.steps = sel.lmi_cfg.steps = steps;
    if (batch > 0) sel.mine_cfg.batch = sel.lmi_cfg.batch = batch;
    if (neighbors > 0) sel.ksg_neighbors = sel.lmi_cfg.ksg_neighbors = neighbors;
    if (proj_dim > 0) sel.lmi_cfg.proj_dim = proj_dim;
    sel.mine_cfg.seed = Rng::derive(seed, "cli-mine");
    sel.lmi_cfg.seed = Rng::derive(seed, "cli-lmi");
  }
};

struct MetricsOpts {
  std::string manifest;
  std::string metrics = "all";
  std::string role_a = "adapted";
  std::string role_b = "expert";
  std::string token_mode = "pool";
  double gamma = 0.0;
  EstimatorKnobs knobs;
};

void render_report(const MetricReport& rep, std::ostream& os) {
  os << rep.experiment << "  (" << rep.toolkit_version << ", "
     << rep.threads << " threads, " << rep.wall_clock_sec << " s)\n";
  for (const auto& m : rep.metrics) {
    os << "  " << m.name << ": ";
    if (m.status == "ok") {
      os << m.value;
      if (m.mean) {
        os << "  mean " << *m.mean;
        if (m.stddev) os << " +- " << *m.stddev;
      }
    } else {
      std::string why = m.diagnostics.is_object() && m.diagnostics.contains("error")
                            ? m.diagnostics.at("error").get<std::string>()
                            : "failed";
      os << "FAILED (" << why << ")";
    }
    os << "\n";
  }
}

int cmd_metrics(const GlobalOpts& g, const MetricsOpts& o) {
  auto man = load_manifest(o.manifest);
  auto a = load_role(man, o.role_a);
  auto b = load_role(man, o.role_b);

  MetricSelection sel = parse_metric_selection(o.metrics);
  if (o.token_mode == "flatten")
    sel.token_mode = MetricSelection::TokenMode::flatten;
  else if (o.token_mode != "pool")
    throw ConfigError("metrics: --token-mode must be pool or flatten");
  if (o.gamma > 0.0) sel.kernel.gamma = o.gamma;
  o.knobs.apply(sel, g.seed);

  auto rep = evaluate_pathways(a, b, sel, man.experiment);
  emit(rep.to_json(), g, [&](std::ostream& os) { render_report(rep, os); });
  return 0;
}

// ---- mi ---------------------------------------------------------------

struct MiOpts {
  std::string manifest;
  std::string estimators = "ksg";
  std::string role_a = "x";
  std::string role_b = "y";
  int seeds = 1;
  EstimatorKnobs knobs;
};

int cmd_mi(const GlobalOpts& g, const MiOpts& o) {
  if (o.seeds < 1) throw ConfigError("mi: --seeds must be >= 1");
  auto names = split_csv(o.estimators);
  if (names.empty()) throw ConfigError("mi: no estimator named");
  for (const auto& n : names)
    if (n != "mine" && n != "lmi" && n != "ksg")
      throw ConfigError("mi: unknown estimator '" + n +
                        "' (valid: mine, lmi, ksg)");

  auto man = load_manifest(o.manifest);
  auto x = load_role(man, o.role_a);
  auto y = load_role(man, o.role_b);

  MetricReport rep = report_skeleton(man.experiment);
  for (int i = 0; i < o.seeds; ++i) rep.seeds.push_back(g.seed + i);

  json cfg_desc = {{"command", "mi"},
                   {"estimators", names},
                   {"seeds", rep.seeds},
                   {"steps", o.knobs.steps},
                   {"batch", o.knobs.batch},
                   {"neighbors", o.knobs.neighbors},
                   {"proj_dim", o.knobs.proj_dim},
                   {"shape_x", x.shape},
                   {"shape_y", y.shape}};
  rep.config_hash = config_fingerprint(cfg_desc);

  auto t0 = std::chrono::steady_clock::now();
  int failed = 0;
  for (const auto& name : names) {
    MetricEntry entry;
    entry.name = name;
    try {
      std::vector<double> curve_sample;
      for (int i = 0; i < o.seeds; ++i) {
        std::uint64_t seed = g.seed + static_cast<std::uint64_t>(i);
        double value = 0.0;
        if (name == "ksg") {
          int k = o.knobs.neighbors > 0 ? o.knobs.neighbors : 5;
          value = ksg_estimate(x, y, k);
        } else if (name == "mine") {
          MineConfig mc;
          if (o.knobs.steps > 0) mc.steps = o.knobs.steps;
          if (o.knobs.batch > 0) mc.batch = o.knobs.batch;
          mc.seed = seed;
          auto est = mine_estimate(x, y, mc);
          value = est.value;
          if (i == 0) curve_sample = est.curve;
        } else {
          LmiConfig lc;
          if (o.knobs.steps > 0) lc.steps = o.knobs.steps;
          if (o.knobs.batch > 0) lc.batch = o.knobs.batch;
          if (o.knobs.neighbors > 0) lc.ksg_neighbors = o.knobs.neighbors;
          if (o.knobs.proj_dim > 0) lc.proj_dim = o.knobs.proj_dim;
          lc.seed = seed;
          auto est = lmi_estimate(x, y, lc);
          value = est.value;
          if (i == 0) curve_sample = est.curve;
        }
        entry.per_seed.push_back(value);
      }
      double sum = 0.0;
      for (double v : entry.per_seed) sum += v;
      double mean = sum / static_cast<double>(entry.per_seed.size());
      entry.value = mean;
      if (entry.per_seed.size() >= 2) {
        entry.mean = mean;
        double acc = 0.0;
        for (double v : entry.per_seed) acc += (v - mean) * (v - mean);
        entry.stddev =
            std::sqrt(acc / static_cast<double>(entry.per_seed.size() - 1));
      }
      if (!curve_sample.empty())
        entry.diagnostics = json{{"curve", curve_sample}};
    } catch (const Error& e) {
      entry.status = "failed";
      json diag = {{"error", e.what()}};
      if (const auto* est = dynamic_cast<const EstimationError*>(&e))
        diag["curve"] = est->curve;
      entry.diagnostics = diag;
      ++failed;
    }
    rep.metrics.push_back(entry);
  }
  rep.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  emit(rep.to_json(), g, [&](std::ostream& os) { render_report(rep, os); });
  // The report itself is the product; a total wipe-out still reports, but
  // signals estimation failure through the exit code.
  return failed == static_cast<int>(names.size()) ? kExitEstimation : 0;
}

// ---- train / cross ----------------------------------------------------

struct TrainOverrides {
  std::int64_t steps = 0;
  int batch = 0;
  double lr = 0.0;
  int layers = 0;
  bool no_distill = false;
  std::string checkpoint;
};

struct TrainSetup {
  TrainConfig tc;
  NeckConfig nc;
  TaskSpec task;
  std::string manifest_path;
  std::string input_role = "encoder";
  std::string target_role = "expert1";
  std::string checkpoint;
  std::optional<MetricSelection> metrics;
  std::string cross_checkpoint;
  std::string cross_first_task = "task1";
};

TrainSetup load_train_setup(const std::string& config_path, const GlobalOpts& g,
                            const TrainOverrides& ov) {
  json cfg = load_config_file(config_path);
  std::string base = fs::path(config_path).parent_path().string();
  check_keys(cfg, "config root",
             {"experiment", "seed", "checkpoint", "data", "neck", "train",
              "task", "metrics", "cross"});

  TrainSetup s;
  s.tc.experiment = get_or<std::string>(cfg, "experiment", "exp");
  s.tc.seed = get_or<std::uint64_t>(cfg, "seed", 0);

  if (!cfg.contains("data") || !cfg.at("data").is_object())
    throw ConfigError("config: missing [data] section");
  const json& data = cfg.at("data");
  check_keys(data, "[data]", {"manifest", "input_role", "target_role"});
  s.manifest_path = get_or<std::string>(data, "manifest", "");
  if (s.manifest_path.empty())
    throw ConfigError("config: [data] needs a manifest path");
  s.manifest_path = resolve_from(base, s.manifest_path);
  s.input_role = get_or<std::string>(data, "input_role", "encoder");
  s.target_role = get_or<std::string>(data, "target_role", "expert1");

  if (cfg.contains("neck")) {
    const json& neck = cfg.at("neck");
    check_keys(neck, "[neck]",
               {"layers", "heads", "d_model", "mlp_expansion", "seed"});
    s.nc.layers = get_or<int>(neck, "layers", 2);
    s.nc.heads = get_or<int>(neck, "heads", 0);
    s.nc.d_model = get_or<int>(neck, "d_model", 64);
    s.nc.mlp_expansion = get_or<int>(neck, "mlp_expansion", 4);
    s.nc.seed = get_or<std::uint64_t>(neck, "seed", 0);
  }

  if (cfg.contains("train")) {
    const json& tr = cfg.at("train");
    check_keys(tr, "[train]",
               {"steps", "batch", "lr", "alpha_horizon", "distill",
                "eval_interval", "holdout_frac"});
    s.tc.steps = get_or<std::int64_t>(tr, "steps", s.tc.steps);
    s.tc.batch = get_or<int>(tr, "batch", s.tc.batch);
    s.tc.lr = get_or<double>(tr, "lr", s.tc.lr);
    s.tc.alpha_horizon = get_or<std::int64_t>(tr, "alpha_horizon", 0);
    s.tc.distill = get_or<bool>(tr, "distill", true);
    s.tc.eval_interval = get_or<std::int64_t>(tr, "eval_interval", 100);
    s.tc.holdout_frac = get_or<double>(tr, "holdout_frac", 0.2);
  }

  if (cfg.contains("task")) {
    const json& task = cfg.at("task");
    check_keys(task, "[task]", {"id", "head", "head_dim", "head_seed"});
    s.task.id = get_or<std::string>(task, "id", "task");
    std::string head = get_or<std::string>(task, "head", "linear");
    if (head == "linear")
      s.task.head = TaskSpec::Head::linear;
    else if (head == "identity")
      s.task.head = TaskSpec::Head::identity;
    else
      throw ConfigError("config: task head must be linear or identity, got '" +
                        head + "'");
    s.task.head_dim = get_or<std::int64_t>(task, "head_dim", 0);
    s.task.head_seed = get_or<std::uint64_t>(task, "head_seed", 17);
  }

  s.checkpoint = get_or<std::string>(cfg, "checkpoint", "");
  if (!s.checkpoint.empty()) s.checkpoint = resolve_from(base, s.checkpoint);

  if (cfg.contains("metrics")) {
    const json& met = cfg.at("metrics");
    check_keys(met, "[metrics]", {"select", "token_mode", "gamma"});
    MetricSelection sel =
        parse_metric_selection(get_or<std::string>(met, "select", "all"));
    std::string mode = get_or<std::string>(met, "token_mode", "pool");
    if (mode == "flatten")
      sel.token_mode = MetricSelection::TokenMode::flatten;
    else if (mode != "pool")
      throw ConfigError("config: metrics token_mode must be pool or flatten");
    double gamma = get_or<double>(met, "gamma", 0.0);
    if (gamma > 0.0) sel.kernel.gamma = gamma;
    s.metrics = sel;
  }

  if (cfg.contains("cross")) {
    const json& cross = cfg.at("cross");
    check_keys(cross, "[cross]", {"first_checkpoint", "first_task"});
    s.cross_checkpoint = get_or<std::string>(cross, "first_checkpoint", "");
    if (!s.cross_checkpoint.empty())
      s.cross_checkpoint = resolve_from(base, s.cross_checkpoint);
    s.cross_first_task = get_or<std::string>(cross, "first_task", "task1");
  }

  // Flags beat file values.
  if (g.seed_given) s.tc.seed = g.seed;
  if (ov.steps > 0) s.tc.steps = ov.steps;
  if (ov.batch > 0) s.tc.batch = ov.batch;
  if (ov.lr > 0.0) s.tc.lr = ov.lr;
  if (ov.layers > 0) {
    s.nc.layers = ov.layers;
    s.nc.heads = 0;  // head count follows the new depth unless re-pinned
  }
  if (ov.no_distill) s.tc.distill = false;
  if (!ov.checkpoint.empty()) s.checkpoint = ov.checkpoint;
  return s;
}

TrainData load_train_data(const TrainSetup& s) {
  auto man = load_manifest(s.manifest_path);
  TrainData td;
  td.encoder = load_role(man, s.input_role);
  td.expert = load_role(man, s.target_role);
  return td;
}

void render_record(const RunRecord& rec, std::ostream& os) {
  os << rec.experiment;
  if (!rec.sequence.empty()) os << " [" << rec.sequence << "]";
  os << "  seed " << rec.seed << "\n";
  os << "  final train loss   " << rec.final_train_loss << "\n";
  os << "  final holdout task " << rec.final_holdout_task << "\n";
  if (!rec.checkpoint_path.empty())
    os << "  checkpoint         " << rec.checkpoint_path << "\n";
  if (!rec.final_metrics.is_null()) {
    os << "  metrics:\n";
    for (const auto& m : rec.final_metrics.at("metrics")) {
      os << "    " << m.at("name").get<std::string>() << ": ";
      if (m.at("status") == "ok")
        os << m.at("value").get<double>();
      else
        os << "FAILED";
      os << "\n";
    }
  }
  os << "  wall clock " << rec.wall_clock_sec << " s\n";
}

int cmd_train(const GlobalOpts& g, const std::string& config_path,
              const TrainOverrides& ov) {
  TrainSetup s = load_train_setup(config_path, g, ov);
  TrainData td = load_train_data(s);
  const MetricSelection* sel = s.metrics ? &*s.metrics : nullptr;
  RunRecord rec = train_neck(s.tc, s.nc, td, s.task, s.checkpoint, sel);
  emit(rec.to_json(), g, [&](std::ostream& os) { render_record(rec, os); });
  return 0;
}

int cmd_cross(const GlobalOpts& g, const std::string& config_path,
              const TrainOverrides& ov) {
  TrainSetup s = load_train_setup(config_path, g, ov);
  if (s.cross_checkpoint.empty())
    throw ConfigError(
        "cross: config needs [cross] first_checkpoint pointing at the trained "
        "first adapter");
  NeckParams neck1 = load_checkpoint(s.cross_checkpoint);
  TrainData td = load_train_data(s);
  const MetricSelection* sel = s.metrics ? &*s.metrics : nullptr;
  RunRecord rec = train_cross_neck(neck1, s.tc, s.nc, td, s.task,
                                   s.cross_first_task, s.checkpoint, sel);
  emit(rec.to_json(), g, [&](std::ostream& os) { render_record(rec, os); });
  return 0;
}

// ---- sweep ------------------------------------------------------------

struct SweepOpts {
  std::string config;
  std::string layers = "2,4,6";
  int seeds = 3;
};

struct SweepCell {
  int layers = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string record_path;
  std::string error;
  double final_train_loss = 0.0;
  double holdout_task = 0.0;
  json final_metrics;
  int exit_code = 0;
};

int cmd_sweep(const GlobalOpts& g, const SweepOpts& o,
              const TrainOverrides& ov) {
  std::vector<int> layer_values;
  for (const auto& tok : split_csv(o.layers)) {
    try {
      layer_values.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("sweep: bad layer count '" + tok + "'");
    }
  }
  if (layer_values.empty()) throw ConfigError("sweep: no layer values");
  if (o.seeds < 1) throw ConfigError("sweep: --seeds must be >= 1");

  std::string dir = g.out.empty() ? "sweep" : g.out;
  fs::create_directories(dir);

  TrainSetup base = load_train_setup(o.config, g, ov);
  TrainData data = load_train_data(base);

  std::vector<SweepCell> cells;
  for (int L : layer_values)
    for (int i = 0; i < o.seeds; ++i) {
      SweepCell c;
      c.layers = L;
      c.seed = base.tc.seed + static_cast<std::uint64_t>(i);
      cells.push_back(c);
    }

  int jobs = g.jobs > 0 ? g.jobs : static_cast<int>(
                                        std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  jobs = std::min<int>(jobs, static_cast<int>(cells.size()));
#ifdef _OPENMP
  // Cells are the unit of parallelism here; keep each one single-threaded
  // so the pool does not oversubscribe. Results do not depend on this.
  if (jobs > 1) omp_set_num_threads(1);
#endif

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t idx = next.fetch_add(1);
      if (idx >= cells.size()) return;
      SweepCell& cell = cells[idx];
      try {
        TrainSetup s = base;
        s.nc.layers = cell.layers;
        if (base.nc.heads == 0) s.nc.heads = 0;
        s.tc.seed = cell.seed;
        s.tc.experiment = base.tc.experiment + "-L" +
                          std::to_string(cell.layers) + "-s" +
                          std::to_string(cell.seed);
        s.checkpoint.clear();  // per-cell checkpoints are not kept
        const MetricSelection* sel = s.metrics ? &*s.metrics : nullptr;
        RunRecord rec = train_neck(s.tc, s.nc, data, s.task, "", sel);
        cell.final_train_loss = rec.final_train_loss;
        cell.holdout_task = rec.final_holdout_task;
        cell.final_metrics = rec.final_metrics;
        cell.record_path =
            (fs::path(dir) / ("run_L" + std::to_string(cell.layers) + "_seed" +
                              std::to_string(cell.seed) + ".json"))
                .string();
        write_text_file(cell.record_path, rec.to_json().dump(2) + "\n");
        cell.ok = true;
      } catch (const Error& e) {
        cell.error = e.what();
        cell.exit_code = e.exit_code();
      } catch (const std::exception& e) {
        cell.error = e.what();
        cell.exit_code = 1;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // Aggregate each layer count over its surviving seeds.
  std::vector<CurveRow> rows;
  for (int L : layer_values) {
    std::vector<double> train_losses, task_losses;
    std::map<std::string, std::vector<double>> metric_values;
    for (const SweepCell& c : cells) {
      if (c.layers != L || !c.ok) continue;
      train_losses.push_back(c.final_train_loss);
      task_losses.push_back(c.holdout_task);
      if (c.final_metrics.is_object())
        for (const auto& m : c.final_metrics.at("metrics"))
          if (m.at("status") == "ok")
            metric_values[m.at("name").get<std::string>()].push_back(
                m.at("value").get<double>());
    }
    auto add_rows = [&](const std::string& name,
                        const std::vector<double>& vals) {
      if (vals.empty()) return;
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      CurveRow row;
      row.sweep_value = static_cast<double>(L);
      row.metric = name;
      row.mean = mean;
      if (vals.size() >= 2) {
        double acc = 0.0;
        for (double v : vals) acc += (v - mean) * (v - mean);
        row.stddev = std::sqrt(acc / static_cast<double>(vals.size() - 1));
      }
      rows.push_back(row);
    };
    add_rows("final_train_loss", train_losses);
    add_rows("holdout_task", task_losses);
    for (const auto& [name, vals] : metric_values) add_rows(name, vals);
  }

  std::ostringstream csv;
  write_curve_csv(rows, csv);
  std::string csv_path = (fs::path(dir) / "curve.csv").string();
  write_text_file(csv_path, csv.str());

  int completed = 0;
  json cell_list = json::array();
  for (const SweepCell& c : cells) {
    json jc = {{"layers", c.layers}, {"seed", c.seed}};
    if (c.ok) {
      ++completed;
      jc["status"] = "ok";
      jc["record"] = c.record_path;
      jc["final_train_loss"] = c.final_train_loss;
      jc["holdout_task"] = c.holdout_task;
    } else {
      jc["status"] = "failed";
      jc["error"] = c.error;
    }
    cell_list.push_back(jc);
  }
  json doc = {{"command", "sweep"},
              {"csv", csv_path},
              {"completed", completed},
              {"cells", cell_list}};

  GlobalOpts ge = g;
  ge.out = (fs::path(dir) / "sweep.json").string();
  emit(doc, ge, [&](std::ostream& os) {
    os << "sweep: " << completed << "/" << cells.size() << " cells completed\n";
    for (const SweepCell& c : cells) {
      os << "  L=" << c.layers << " seed=" << c.seed << "  ";
      if (c.ok)
        os << "train " << c.final_train_loss << "  holdout " << c.holdout_task
           << "\n";
      else
        os << "FAILED: " << c.error << "\n";
    }
    os << "curve table: " << csv_path << "\n";
  });

  if (completed == 0) {
    // Nothing survived; surface the first cell's failure class.
    return cells.empty() ? kExitConfig : cells.front().exit_code;
  }
  return 0;
}

// ---- gradcheck --------------------------------------------------------

int cmd_gradcheck(const GlobalOpts& g, int seeds, double tol, bool flip) {
  if (flip) ad::testing_hooks::softmax_backward_sign_flip = true;
  auto report = gradcheck::run(seeds, tol, g.seed_given ? g.seed : 1234);
  ad::testing_hooks::softmax_backward_sign_flip = false;

  json ops = json::array();
  for (const auto& op : report.ops)
    ops.push_back({{"op", op.op},
                   {"max_rel_err", op.max_rel_err},
                   {"pass", op.pass}});
  json doc = {{"command", "gradcheck"},
              {"seeds", report.seeds},
              {"tolerance", report.tolerance},
              {"all_pass", report.all_pass},
              {"ops", ops}};

  emit(doc, g, [&](std::ostream& os) {
    os << "gradient check: " << report.seeds << " seeds, tolerance "
       << report.tolerance << "\n";
    for (const auto& op : report.ops) {
      os << "  " << (op.pass ? "pass" : "FAIL") << "  " << op.op
         << "  max rel err " << op.max_rel_err << "\n";
    }
    os << (report.all_pass ? "all passed\n" : "FAILED\n");
  });
  return report.all_pass ? 0 : kExitEstimation;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{
      "featprobe: measures how much of a frozen feature pathway another task "
      "can use, by training small transformer adapters and scoring the "
      "result with distance and mutual-information estimators."};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOpts g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--out", g.out,
                 "Output file (reports) or directory (synth, sweep)");
  app.add_flag("--json", g.json_mode,
               "Print exactly one JSON document on stdout");
  app.add_option("--jobs", g.jobs,
                 "Worker pool size for sweeps (default: hardware threads)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic feature sets");
  synth->fallthrough();
  synth->require_subcommand(1);
  SynthGaussianOpts sg;
  auto* gaussian = synth->add_subcommand(
      "gaussian", "Jointly Gaussian pair with closed-form mutual information");
  gaussian->add_option("--dx", sg.dx, "X dimension");
  gaussian->add_option("--dy", sg.dy, "Y dimension");
  gaussian->add_option("--n", sg.n, "Sample count");
  gaussian->add_option("--mi", sg.mi, "Target mutual information in nats");
  auto* rho_opt =
      gaussian->add_option("--rho", sg.rho, "Pairwise correlation instead of --mi");
  gaussian->add_option("--lift", sg.lift,
                       "Lift both sides into this ambient dimension");
  gaussian->add_flag("--force", sg.force, "Overwrite existing files");

  SynthPipelineOpts sp;
  auto* pipeline = synth->add_subcommand(
      "pipeline", "Shared-latent encoder/expert pipeline with overlap dial");
  pipeline->add_option("--n", sp.n, "Sample count");
  pipeline->add_option("--latent", sp.latent, "Latent dimension");
  pipeline->add_option("--tokens", sp.tokens, "Token count");
  pipeline->add_option("--enc-dim", sp.enc_dim, "Encoder feature dimension");
  pipeline->add_option("--expert-dim", sp.expert_dim, "Expert feature dimension");
  pipeline->add_option("--depth", sp.depth, "Encoder tanh stack depth");
  pipeline->add_option("--overlap", sp.overlap,
                       "Shared fraction of the two task bases, 0 to 1");
  pipeline->add_option("--noise", sp.noise, "Expert observation noise stddev");
  pipeline->add_flag("--force", sp.force, "Overwrite existing files");

  // metrics
  MetricsOpts mo;
  auto* metrics =
      app.add_subcommand("metrics", "Score two feature sets against each other");
  metrics->add_option("--manifest", mo.manifest, "Experiment manifest")
      ->required();
  metrics->add_option("--metrics", mo.metrics,
                      "Comma list: fd, kd_rbf, kd_poly, cosine, mi1d, ksg, "
                      "mine, lmi, or all");
  metrics->add_option("--role-a", mo.role_a, "Role of the first set");
  metrics->add_option("--role-b", mo.role_b, "Role of the reference set");
  metrics->add_option("--token-mode", mo.token_mode,
                      "Token handling: pool or flatten");
  metrics->add_option("--gamma", mo.gamma, "Fixed RBF bandwidth");
  metrics->add_option("--steps", mo.knobs.steps, "Neural estimator steps");
  metrics->add_option("--batch", mo.knobs.batch, "Neural estimator batch");
  metrics->add_option("--neighbors", mo.knobs.neighbors, "k-NN neighbour count");
  metrics->add_option("--proj-dim", mo.knobs.proj_dim,
                      "Projection width of the trained-projection estimator");

  // mi
  MiOpts mi;
  auto* mi_cmd = app.add_subcommand(
      "mi", "Estimate mutual information between two paired feature sets");
  mi_cmd->add_option("--manifest", mi.manifest, "Experiment manifest")
      ->required();
  mi_cmd->add_option("--estimator", mi.estimators,
                     "Comma list of estimators: mine, lmi, ksg");
  mi_cmd->add_option("--role-a", mi.role_a, "Role of the first set");
  mi_cmd->add_option("--role-b", mi.role_b, "Role of the second set");
  mi_cmd->add_option("--seeds", mi.seeds, "Repetitions with consecutive seeds");
  mi_cmd->add_option("--steps", mi.knobs.steps, "Training steps");
  mi_cmd->add_option("--batch", mi.knobs.batch, "Batch size");
  mi_cmd->add_option("--neighbors", mi.knobs.neighbors, "k-NN neighbour count");
  mi_cmd->add_option("--proj-dim", mi.knobs.proj_dim, "Projection width");

  // train / cross
  TrainOverrides ov;
  std::string train_config, cross_config;
  auto* train =
      app.add_subcommand("train", "Train one adapter from a config file");
  train->add_option("--config", train_config, "TOML or JSON config")->required();
  auto add_overrides = [&](CLI::App* cmd, bool with_layers) {
    cmd->add_option("--steps", ov.steps, "Override training steps");
    cmd->add_option("--batch", ov.batch, "Override batch size");
    cmd->add_option("--lr", ov.lr, "Override learning rate");
    if (with_layers)
      cmd->add_option("--layers", ov.layers, "Override adapter depth");
    cmd->add_flag("--no-distill", ov.no_distill,
                  "Disable the distillation term");
    cmd->add_option("--checkpoint", ov.checkpoint, "Override checkpoint path");
  };
  add_overrides(train, true);

  auto* cross = app.add_subcommand(
      "cross", "Train a second adapter behind a frozen first one");
  cross->add_option("--config", cross_config, "TOML or JSON config")->required();
  add_overrides(cross, true);

  // sweep
  SweepOpts sw;
  auto* sweep = app.add_subcommand(
      "sweep", "Train the adapter depth grid and emit a curve table");
  sweep->add_option("--config", sw.config, "Base TOML or JSON config")
      ->required();
  sweep->add_option("--layers", sw.layers, "Comma list of depths");
  sweep->add_option("--seeds", sw.seeds, "Seeds per depth");
  add_overrides(sweep, false);

  // gradcheck
  int gc_seeds = 20;
  double gc_tol = 1e-4;
  bool gc_flip = false;
  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference check of every backward rule");
  gradcheck_cmd->add_option("--seeds", gc_seeds, "Random seeds per op");
  gradcheck_cmd->add_option("--tol", gc_tol, "Relative error tolerance");
  gradcheck_cmd
      ->add_flag("--flip-softmax-backward", gc_flip,
                 "Plant a sign error in the attention softmax backward rule")
      ->group("");  // test fixture, hidden from help

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  g.seed_given = seed_opt->count() > 0;

  if (gaussian->parsed()) {
    sg.rho_given = rho_opt->count() > 0;
    return cmd_synth_gaussian(g, sg);
  }
  if (pipeline->parsed()) return cmd_synth_pipeline(g, sp);
  if (metrics->parsed()) return cmd_metrics(g, mo);
  if (mi_cmd->parsed()) return cmd_mi(g, mi);
  if (train->parsed()) return cmd_train(g, train_config, ov);
  if (cross->parsed()) return cmd_cross(g, cross_config, ov);
  if (sweep->parsed()) return cmd_sweep(g, sw, ov);
  if (gradcheck_cmd->parsed()) return cmd_gradcheck(g, gc_seeds, gc_tol, gc_flip);
  throw ConfigError("no command selected");
}

}  // namespace featprobe::cli
