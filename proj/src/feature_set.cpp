#include "featprobe/feature_set.hpp"

#include <cmath>

#include "featprobe/errors.hpp"

namespace featprobe {

void validate_feature_set(const FeatureSet& fs, const std::string& context) {
  if (fs.shape.size() != 2 && fs.shape.size() != 3)
    throw DataError(context + ": feature sets are [N, D] or [N, T, D]");
  if (fs.n() < 2)
    throw DataError(context + ": need at least 2 samples, got " +
                    std::to_string(fs.n()));
  std::int64_t count = 1;
  for (std::int64_t d : fs.shape) count *= d;
  if (static_cast<std::int64_t>(fs.data.size()) != count)
    throw DataError(context + ": data length does not match shape");
  for (std::size_t i = 0; i < fs.data.size(); ++i)
    if (!std::isfinite(fs.data[i]))
      throw DataError(context + ": non-finite value at flat index " +
                      std::to_string(i));
}

FeatureSet load_feature_file(const std::string& path) {
  npy::Array a = npy::load(path);
  FeatureSet fs;
  fs.shape = std::move(a.shape);
  fs.data = std::move(a.data);
  fs.dtype = a.stored;
  fs.source = path;
  validate_feature_set(fs, "load_feature_file(" + path + ")");
  return fs;
}

void save_feature_file(const FeatureSet& fs, const std::string& path,
                       bool overwrite) {
  validate_feature_set(fs, "save_feature_file(" + path + ")");
  npy::save(path, fs.shape, fs.data.data(), fs.dtype, overwrite);
}

FeatureSet mean_pool(const FeatureSet& fs) {
  if (!fs.is_tokenized()) return fs;
  std::int64_t n = fs.shape[0], t = fs.shape[1], d = fs.shape[2];
  FeatureSet out;
  out.shape = {n, d};
  out.data.assign(static_cast<std::size_t>(n * d), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t tt = 0; tt < t; ++tt)
      for (std::int64_t j = 0; j < d; ++j)
        out.data[static_cast<std::size_t>(i * d + j)] +=
            fs.data[static_cast<std::size_t>((i * t + tt) * d + j)];
  for (double& v : out.data) v /= static_cast<double>(t);
  out.dtype = fs.dtype;
  out.role = fs.role;
  out.name = fs.name;
  out.source = fs.source;
  return out;
}

FeatureSet flatten_tokens(const FeatureSet& fs) {
  if (!fs.is_tokenized()) return fs;
  FeatureSet out = fs;
  out.shape = {fs.shape[0] * fs.shape[1], fs.shape[2]};
  return out;
}

}  // namespace featprobe
