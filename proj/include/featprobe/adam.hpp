#pragma once

#include <cstdint>
#include <vector>

#include "featprobe/tensor.hpp"

namespace featprobe::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Holds first/second moment accumulators and a
// step counter per optimiser instance; parameters are updated in place from
// their gradient buffers. A missing gradient buffer counts as zero gradient.
// A non-finite gradient aborts the run, naming the offending parameter.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  AdamConfig cfg_;
};

}  // namespace featprobe::ad
