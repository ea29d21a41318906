#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace featprobe::npy {

// Reader/writer for the NPY v1.0 container, restricted to what the toolkit
// exchanges with the outside world: little-endian '<f4'/'<f8', C order,
// shapes (N, D) or (N, T, D). Everything else is rejected with an error
// naming the offending header field. f8 data round-trips bit-exactly.

enum class Dtype { f32, f64 };

struct Array {
  std::vector<std::int64_t> shape;
  std::vector<double> data;  // f4 input is widened on load
  Dtype stored = Dtype::f64;
};

Array load(const std::string& path);

// Shape/dtype from the header alone, without reading the payload.
std::vector<std::int64_t> peek_shape(const std::string& path);

void save(const std::string& path, const std::vector<std::int64_t>& shape,
          const double* data, Dtype dtype = Dtype::f64, bool overwrite = false);

}  // namespace featprobe::npy
