#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featprobe/tensor.hpp"

namespace featprobe {

// Adapter configuration. The attention head count defaults to the layer
// count: the supported depth/head pairings are 2/2, 4/4 and 6/6, with the
// head count free to differ as long as it divides d_model.
struct NeckConfig {
  int layers = 2;
  int heads = 0;  // 0 means "same as layers"
  int d_model = 64;
  int mlp_expansion = 4;
  ad::i64 input_dim = 0;
  ad::i64 output_dim = 0;
  ad::i64 tokens = 0;
  std::uint64_t seed = 0;

  int resolved_heads() const { return heads > 0 ? heads : layers; }
  void validate() const;
};

// Trainable state of one adapter: token embedding, learnable positional
// table, pre-norm attention + MLP blocks, and the output projection. There
// is no final normalisation after the last block.
struct NeckParams {
  NeckConfig config;
  ad::Tensor embed_w, embed_b;  // [Din, d], [d]
  ad::Tensor pos;               // [T, d], initialised to zero
  struct Layer {
    ad::Tensor ln1_g, ln1_b;
    ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Tensor ln2_g, ln2_b;
    ad::Tensor w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  ad::Tensor out_w, out_b;  // [d, Dout], [Dout]

  // All parameters in the fixed serialisation order (embedding, positional
  // table, blocks first to last, output projection).
  std::vector<ad::Tensor> parameters() const;
  ad::i64 parameter_count() const;
};

// Closed-form parameter count for a configuration; the enumeration above
// must match it exactly. With d = d_model, e = mlp_expansion, T = tokens:
//   Din*d + d  +  T*d  +  layers * ((4+2e)*d^2 + (9+e)*d)  +  d*Dout + Dout
ad::i64 neck_parameter_count(const NeckConfig& cfg);

// Fresh parameters: weight matrices from a truncated normal (stddev 0.02,
// cut |z| <= 2), biases and the positional table at zero, norm gains at one.
// The draw order is fixed, so a seed pins every weight.
NeckParams neck_init(const NeckConfig& cfg);

// [N, T, Din] -> [N, T, Dout]. Checks the input shape against the config and
// rejects non-finite activations, naming the block where they appeared.
ad::Tensor neck_forward(const NeckParams& p, const ad::Tensor& x);

// Checkpoint blob: magic/version, a JSON header carrying the config and a
// payload hash, then the raw little-endian doubles in parameters() order.
// Round-trips bit-exactly.
void save_checkpoint(const NeckParams& p, const std::string& path,
                     bool overwrite = false);
NeckParams load_checkpoint(const std::string& path);

}  // namespace featprobe
