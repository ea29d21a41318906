#include "featprobe/neck.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "featprobe/errors.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/version.hpp"

namespace featprobe {

using ad::i64;
using ad::Tensor;

void NeckConfig::validate() const {
  if (layers < 1) throw ConfigError("neck: layers must be >= 1");
  int h = resolved_heads();
  if (h < 1) throw ConfigError("neck: heads must be >= 1");
  if (d_model < 2) throw ConfigError("neck: d_model must be >= 2");
  if (d_model % h != 0)
    throw ConfigError("neck: d_model " + std::to_string(d_model) +
                      " is not divisible by head count " + std::to_string(h));
  if (mlp_expansion < 1) throw ConfigError("neck: mlp_expansion must be >= 1");
  if (input_dim < 1 || output_dim < 1)
    throw ConfigError("neck: input_dim and output_dim must be set");
  if (tokens < 1) throw ConfigError("neck: tokens must be >= 1");
}

std::vector<Tensor> NeckParams::parameters() const {
  std::vector<Tensor> out = {embed_w, embed_b, pos};
  for (const Layer& l : layers) {
    out.insert(out.end(), {l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv,
                           l.bv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1,
                           l.w2, l.b2});
  }
  out.push_back(out_w);
  out.push_back(out_b);
  return out;
}

i64 NeckParams::parameter_count() const {
  i64 n = 0;
  for (const Tensor& p : parameters()) n += p.numel();
  return n;
}

i64 neck_parameter_count(const NeckConfig& cfg) {
  i64 d = cfg.d_model, e = cfg.mlp_expansion;
  i64 per_layer = (4 + 2 * e) * d * d + (9 + e) * d;
  return cfg.input_dim * d + d + cfg.tokens * d + cfg.layers * per_layer +
         d * cfg.output_dim + cfg.output_dim;
}

namespace {

Tensor init_weight(Rng& rng, i64 rows, i64 cols, const std::string& name) {
  std::vector<double> w(static_cast<std::size_t>(rows * cols));
  for (double& v : w) v = rng.truncated_normal(0.02);
  return Tensor::from_data({rows, cols}, std::move(w), true).set_name(name);
}

Tensor init_zero(i64 n, const std::string& name) {
  return Tensor::zeros({n}, true).set_name(name);
}

void check_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw NumericError("neck_forward: non-finite activation after " + where);
}

}  // namespace

NeckParams neck_init(const NeckConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  i64 d = cfg.d_model;
  NeckParams p;
  p.config = cfg;
  p.embed_w = init_weight(rng, cfg.input_dim, d, "embed_w");
  p.embed_b = init_zero(d, "embed_b");
  p.pos = Tensor::zeros({cfg.tokens, d}, true).set_name("pos");
  for (int li = 0; li < cfg.layers; ++li) {
    NeckParams::Layer l;
    std::string tag = "layer" + std::to_string(li) + ".";
    l.ln1_g = Tensor::full({d}, 1.0, true).set_name(tag + "ln1_g");
    l.ln1_b = init_zero(d, tag + "ln1_b");
    l.wq = init_weight(rng, d, d, tag + "wq");
    l.bq = init_zero(d, tag + "bq");
    l.wk = init_weight(rng, d, d, tag + "wk");
    l.bk = init_zero(d, tag + "bk");
    l.wv = init_weight(rng, d, d, tag + "wv");
    l.bv = init_zero(d, tag + "bv");
    l.wo = init_weight(rng, d, d, tag + "wo");
    l.bo = init_zero(d, tag + "bo");
    l.ln2_g = Tensor::full({d}, 1.0, true).set_name(tag + "ln2_g");
    l.ln2_b = init_zero(d, tag + "ln2_b");
    i64 hidden = static_cast<i64>(cfg.mlp_expansion) * d;
    l.w1 = init_weight(rng, d, hidden, tag + "w1");
    l.b1 = init_zero(hidden, tag + "b1");
    l.w2 = init_weight(rng, hidden, d, tag + "w2");
    l.b2 = init_zero(d, tag + "b2");
    p.layers.push_back(std::move(l));
  }
  p.out_w = init_weight(rng, d, cfg.output_dim, "out_w");
  p.out_b = init_zero(cfg.output_dim, "out_b");
  return p;
}

Tensor neck_forward(const NeckParams& p, const Tensor& x) {
  const NeckConfig& cfg = p.config;
  if (x.shape().size() != 3 || x.shape()[1] != cfg.tokens ||
      x.shape()[2] != cfg.input_dim)
    throw DimensionError("neck_forward: input shape " + ad::shape_str(x.shape()) +
                         " does not match configured [N, " +
                         std::to_string(cfg.tokens) + ", " +
                         std::to_string(cfg.input_dim) + "]");
  i64 n = x.shape()[0], t = cfg.tokens, d = cfg.d_model;
  int heads = cfg.resolved_heads();
  i64 dh = d / heads;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Token embedding plus the learnable positional table.
  Tensor flat = ad::reshape(x, {n * t, cfg.input_dim});
  Tensor h = ad::add_bias(ad::matmul(flat, p.embed_w), p.embed_b);
  h = ad::add(h, ad::tile_rows(p.pos, n));  // still [n*t, d]
  check_finite(h, "embedding");

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const NeckParams::Layer& l = p.layers[li];
    // Pre-norm attention block.
    Tensor normed = ad::layer_norm(h, l.ln1_g, l.ln1_b);
    Tensor q = ad::add_bias(ad::matmul(normed, l.wq), l.bq);
    Tensor k = ad::add_bias(ad::matmul(normed, l.wk), l.bk);
    Tensor v = ad::add_bias(ad::matmul(normed, l.wv), l.bv);
    // [n*t, d] -> [n, t, heads, dh] -> [n, heads, t, dh] -> [n*heads, t, dh]
    auto split = [&](const Tensor& m) {
      return ad::reshape(
          ad::swap_middle_axes(ad::reshape(m, {n, t, heads, dh})),
          {n * heads, t, dh});
    };
    Tensor qh = split(q), kh = split(k), vh = split(v);
    Tensor scores = ad::mul_scalar(ad::bmm(qh, kh, /*transpose_b=*/true),
                                   att_scale);
    Tensor att = ad::softmax_rows(ad::reshape(scores, {n * heads * t, t}));
    Tensor ctx = ad::bmm(ad::reshape(att, {n * heads, t, t}), vh);
    Tensor merged = ad::reshape(
        ad::swap_middle_axes(ad::reshape(ctx, {n, heads, t, dh})),
        {n * t, d});
    Tensor att_out = ad::add_bias(ad::matmul(merged, l.wo), l.bo);
    h = ad::add(h, att_out);

    // Pre-norm MLP block with GELU.
    Tensor normed2 = ad::layer_norm(h, l.ln2_g, l.ln2_b);
    Tensor mid = ad::gelu(ad::add_bias(ad::matmul(normed2, l.w1), l.b1));
    Tensor mlp_out = ad::add_bias(ad::matmul(mid, l.w2), l.b2);
    h = ad::add(h, mlp_out);
    check_finite(h, "block " + std::to_string(li));
  }

  Tensor out = ad::add_bias(ad::matmul(h, p.out_w), p.out_b);
  check_finite(out, "output projection");
  return ad::reshape(out, {n, t, cfg.output_dim});
}

namespace {

constexpr char kMagic[4] = {'F', 'P', 'N', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t payload_hash(const std::vector<double>& payload) {
  return fnv1a64(std::string_view(
      reinterpret_cast<const char*>(payload.data()),
      payload.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const NeckParams& p, const std::string& path,
                     bool overwrite) {
  if (!overwrite) {
    std::ifstream probe(path, std::ios::binary);
    if (probe.good())
      throw IoError("save_checkpoint: refusing to overwrite " + path);
  }
  std::vector<double> payload;
  payload.reserve(static_cast<std::size_t>(p.parameter_count()));
  for (const Tensor& t : p.parameters())
    payload.insert(payload.end(), t.data().begin(), t.data().end());

  nlohmann::json header = {
      {"format", "featprobe-neck-checkpoint"},
      {"toolkit_version", kVersion},
      {"layers", p.config.layers},
      {"heads", p.config.resolved_heads()},
      {"d_model", p.config.d_model},
      {"mlp_expansion", p.config.mlp_expansion},
      {"input_dim", p.config.input_dim},
      {"output_dim", p.config.output_dim},
      {"tokens", p.config.tokens},
      {"seed", p.config.seed},
      {"parameter_count", payload.size()},
      {"payload_fnv1a64", payload_hash(payload)},
  };
  std::string htext = header.dump();

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + tmp);
    f.write(kMagic, 4);
    std::uint32_t ver = kCheckpointVersion;
    std::uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&ver), sizeof ver);
    f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!f) throw IoError("save_checkpoint: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("save_checkpoint: cannot move " + tmp + " into place");
}

NeckParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("load_checkpoint: bad magic in " + path);
  std::uint32_t ver = 0;
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof ver);
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!f || ver != kCheckpointVersion)
    throw FormatError("load_checkpoint: unsupported version " +
                      std::to_string(ver) + " in " + path);
  if (hlen > (1u << 20))
    throw FormatError("load_checkpoint: implausible header length in " + path);
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw FormatError("load_checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
  if (header.is_discarded())
    throw FormatError("load_checkpoint: header is not valid JSON in " + path);

  NeckConfig cfg;
  try {
    cfg.layers = header.at("layers").get<int>();
    cfg.heads = header.at("heads").get<int>();
    cfg.d_model = header.at("d_model").get<int>();
    cfg.mlp_expansion = header.at("mlp_expansion").get<int>();
    cfg.input_dim = header.at("input_dim").get<i64>();
    cfg.output_dim = header.at("output_dim").get<i64>();
    cfg.tokens = header.at("tokens").get<i64>();
    cfg.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_checkpoint: header field missing or mistyped in " +
                      path + ": " + e.what());
  }
  cfg.validate();

  std::uint64_t count = header.at("parameter_count").get<std::uint64_t>();
  if (count != static_cast<std::uint64_t>(neck_parameter_count(cfg)))
    throw FormatError("load_checkpoint: parameter count " +
                      std::to_string(count) + " does not match config in " +
                      path);
  std::vector<double> payload(count);
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (!f) throw FormatError("load_checkpoint: truncated payload in " + path);
  char extra;
  if (f.read(&extra, 1))
    throw FormatError("load_checkpoint: trailing bytes after payload in " + path);
  std::uint64_t want_hash = header.at("payload_fnv1a64").get<std::uint64_t>();
  if (payload_hash(payload) != want_hash)
    throw FormatError("load_checkpoint: payload hash mismatch in " + path);

  // Build a fresh parameter set, then overwrite values in declared order.
  NeckParams p = neck_init(cfg);
  std::size_t off = 0;
  for (Tensor t : p.parameters()) {
    std::memcpy(t.data().data(), payload.data() + off,
                t.data().size() * sizeof(double));
    off += t.data().size();
  }
  return p;
}

}  // namespace featprobe
