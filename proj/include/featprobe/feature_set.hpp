#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featprobe/npy.hpp"

namespace featprobe {

// A batch of feature vectors, [N, D] or tokenised [N, T, D], with the
// bookkeeping the reports need. Values are always finite and N >= 2; both
// are enforced wherever a FeatureSet is created.
struct FeatureSet {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  npy::Dtype dtype = npy::Dtype::f64;
  std::string role;    // "adapted", "expert", "encoder", "latent", ...
  std::string name;
  std::string source;  // originating path or generator tag

  std::int64_t n() const { return shape.empty() ? 0 : shape[0]; }
  bool is_tokenized() const { return shape.size() == 3; }
  std::int64_t tokens() const { return is_tokenized() ? shape[1] : 1; }
  std::int64_t dim() const { return shape.back(); }

  const double* row(std::int64_t i) const {
    return data.data() + i * (is_tokenized() ? shape[1] * shape[2] : shape[1]);
  }
};

// Checks the FeatureSet invariants, throwing DataError when violated.
void validate_feature_set(const FeatureSet& fs, const std::string& context);

FeatureSet load_feature_file(const std::string& path);
void save_feature_file(const FeatureSet& fs, const std::string& path,
                       bool overwrite = false);

// [N, T, D] -> [N, D] token mean. Identity on rank-2 input.
FeatureSet mean_pool(const FeatureSet& fs);
// [N, T, D] -> [N*T, D]; every token becomes a sample.
FeatureSet flatten_tokens(const FeatureSet& fs);

}  // namespace featprobe
