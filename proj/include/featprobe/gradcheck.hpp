#pragma once

#include <functional>
#include <string>
#include <vector>

#include "featprobe/tensor.hpp"

namespace featprobe::gradcheck {

// Central-difference verification of every reverse-mode rule, plus a small
// two-layer adapter checked end to end. Run by the CLI and by the test
// suites; the tolerance is part of the release gate.

struct OpResult {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct Report {
  std::vector<OpResult> ops;
  int seeds = 0;
  double tolerance = 0.0;
  bool all_pass = false;
};

// Largest relative error between analytic gradients and central differences
// over every element of `wrt`. loss_fn rebuilds the scalar loss from the
// current tensor contents, so perturbing an element and calling it again
// yields the displaced loss. Relative error uses a unit floor:
// |a - fd| / max(|a|, |fd|, 1).
double max_rel_err(const std::function<ad::Tensor()>& loss_fn,
                   const std::vector<ad::Tensor>& wrt, double h = 1e-5);

Report run(int seeds = 20, double tolerance = 1e-4,
           std::uint64_t base_seed = 1234);

}  // namespace featprobe::gradcheck
