#include "featprobe/gradcheck.hpp"

#include <cmath>

#include "featprobe/neck.hpp"
#include "featprobe/rng.hpp"

namespace featprobe::gradcheck {

using ad::i64;
using ad::Shape;
using ad::Tensor;

double max_rel_err(const std::function<Tensor()>& loss_fn,
                   const std::vector<Tensor>& wrt, double h) {
  Tensor loss = loss_fn();
  ad::backward(loss, wrt);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (const Tensor& t : wrt) analytic.push_back(t.grad());

  double worst = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& data = wrt[ti].impl()->data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      double saved = data[i];
      data[i] = saved + h;
      double up = loss_fn().item();
      data[i] = saved - h;
      double down = loss_fn().item();
      data[i] = saved;
      double fd = (up - down) / (2.0 * h);
      double a = analytic[ti][i];
      double err = std::fabs(a - fd) /
                   std::max({std::fabs(a), std::fabs(fd), 1.0});
      if (err > worst) worst = err;
    }
  }
  return worst;
}

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> d(static_cast<std::size_t>(ad::shape_numel(shape)));
  for (double& v : d) v = lo + (hi - lo) * rng.uniform();
  return Tensor::from_data(std::move(shape), std::move(d), true);
}

// Away from the relu kink, where a central difference straddles the
// non-differentiable point.
Tensor rand_tensor_off_zero(Rng& rng, Shape shape) {
  std::vector<double> d(static_cast<std::size_t>(ad::shape_numel(shape)));
  for (double& v : d) {
    double mag = 0.1 + 1.9 * rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from_data(std::move(shape), std::move(d), true);
}

// Fixed readout weights turn a tensor-valued op into a scalar loss without
// touching the op's own gradient path.
Tensor readout(Rng& rng, const Shape& shape) {
  std::vector<double> d(static_cast<std::size_t>(ad::shape_numel(shape)));
  for (double& v : d) v = -1.0 + 2.0 * rng.uniform();
  return Tensor::from_data(shape, std::move(d), false);
}

struct Case {
  std::string op;
  // Returns (loss builder, tensors whose gradients are verified).
  std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(Rng&)>
      make;
};

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string op, auto fn) {
    cases.push_back({std::move(op), fn});
  };

  add_case("matmul", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {4, 5}), b = rand_tensor(rng, {5, 3});
    Tensor w = readout(rng, {4, 3});
    auto f = [a, b, w] { return ad::sum_all(ad::mul(ad::matmul(a, b), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("bmm", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {2, 3, 4}), b = rand_tensor(rng, {2, 4, 5});
    Tensor w = readout(rng, {2, 3, 5});
    auto f = [a, b, w] { return ad::sum_all(ad::mul(ad::bmm(a, b), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("bmm_transpose_b", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {2, 3, 4}), b = rand_tensor(rng, {2, 5, 4});
    Tensor w = readout(rng, {2, 3, 5});
    auto f = [a, b, w] {
      return ad::sum_all(ad::mul(ad::bmm(a, b, true), w));
    };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("add", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
    Tensor w = readout(rng, {3, 4});
    auto f = [a, b, w] { return ad::sum_all(ad::mul(ad::add(a, b), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("sub", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
    Tensor w = readout(rng, {3, 4});
    auto f = [a, b, w] { return ad::sum_all(ad::mul(ad::sub(a, b), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("mul", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
    Tensor w = readout(rng, {3, 4});
    auto f = [a, b, w] { return ad::sum_all(ad::mul(ad::mul(a, b), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("add_scalar", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor w = readout(rng, {3, 4});
    auto f = [a, w] { return ad::sum_all(ad::mul(ad::add_scalar(a, 1.7), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("mul_scalar", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor w = readout(rng, {3, 4});
    auto f = [a, w] {
      return ad::sum_all(ad::mul(ad::mul_scalar(a, -0.6), w));
    };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("relu", [](Rng& rng) {
    Tensor a = rand_tensor_off_zero(rng, {4, 5});
    Tensor w = readout(rng, {4, 5});
    auto f = [a, w] { return ad::sum_all(ad::mul(ad::relu(a), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("gelu", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {4, 5});
    Tensor w = readout(rng, {4, 5});
    auto f = [a, w] { return ad::sum_all(ad::mul(ad::gelu(a), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("exp", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4}, -1.5, 1.5);
    Tensor w = readout(rng, {3, 4});
    auto f = [a, w] { return ad::sum_all(ad::mul(ad::exp(a), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("log", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4}, 0.5, 3.0);
    Tensor w = readout(rng, {3, 4});
    auto f = [a, w] { return ad::sum_all(ad::mul(ad::log(a), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("softmax_rows", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {4, 6});
    Tensor w = readout(rng, {4, 6});
    auto f = [a, w] { return ad::sum_all(ad::mul(ad::softmax_rows(a), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("layer_norm", [](Rng& rng) {
    Tensor x = rand_tensor(rng, {4, 6});
    Tensor g = rand_tensor(rng, {6}, 0.5, 1.5);
    Tensor b = rand_tensor(rng, {6}, -0.5, 0.5);
    Tensor w = readout(rng, {4, 6});
    auto f = [x, g, b, w] {
      return ad::sum_all(ad::mul(ad::layer_norm(x, g, b), w));
    };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{x, g, b}};
  });
  add_case("add_bias", [](Rng& rng) {
    Tensor x = rand_tensor(rng, {4, 5});
    Tensor b = rand_tensor(rng, {5});
    Tensor w = readout(rng, {4, 5});
    auto f = [x, b, w] { return ad::sum_all(ad::mul(ad::add_bias(x, b), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{x, b}};
  });
  add_case("tile_rows", [](Rng& rng) {
    Tensor x = rand_tensor(rng, {3, 4});
    Tensor w = readout(rng, {6, 4});
    auto f = [x, w] { return ad::sum_all(ad::mul(ad::tile_rows(x, 2), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{x}};
  });
  add_case("transpose", [](Rng& rng) {
    Tensor x = rand_tensor(rng, {3, 5});
    Tensor w = readout(rng, {5, 3});
    auto f = [x, w] { return ad::sum_all(ad::mul(ad::transpose(x), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{x}};
  });
  add_case("reshape", [](Rng& rng) {
    Tensor x = rand_tensor(rng, {3, 4});
    Tensor w = readout(rng, {2, 6});
    auto f = [x, w] {
      return ad::sum_all(ad::mul(ad::reshape(x, {2, 6}), w));
    };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{x}};
  });
  add_case("swap_middle_axes", [](Rng& rng) {
    Tensor x = rand_tensor(rng, {2, 3, 4, 2});
    Tensor w = readout(rng, {2, 4, 3, 2});
    auto f = [x, w] {
      return ad::sum_all(ad::mul(ad::swap_middle_axes(x), w));
    };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{x}};
  });
  add_case("concat_cols", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 2});
    Tensor w = readout(rng, {3, 6});
    auto f = [a, b, w] {
      return ad::sum_all(ad::mul(ad::concat_cols(a, b), w));
    };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("mean_all", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    auto f = [a] { return ad::mul_scalar(ad::mean_all(a), 2.5); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("sum_all", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4});
    auto f = [a] { return ad::mul_scalar(ad::sum_all(a), 0.4); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("mean_tokens", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {2, 3, 4});
    Tensor w = readout(rng, {2, 4});
    auto f = [a, w] { return ad::sum_all(ad::mul(ad::mean_tokens(a), w)); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a}};
  });
  add_case("mse", [](Rng& rng) {
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
    auto f = [a, b] { return ad::mse(a, b); };
    return std::pair{std::function<Tensor()>(f), std::vector<Tensor>{a, b}};
  });
  add_case("neck_2layer", [](Rng& rng) {
    NeckConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.d_model = 8;
    cfg.mlp_expansion = 2;
    cfg.input_dim = 3;
    cfg.output_dim = 3;
    cfg.tokens = 2;
    cfg.seed = rng.next_u64();
    NeckParams p = neck_init(cfg);
    Tensor x = rand_tensor(rng, {2, cfg.tokens, cfg.input_dim}, -1.0, 1.0);
    Tensor target = readout(rng, {2, cfg.tokens, cfg.output_dim});
    std::vector<Tensor> wrt = p.parameters();
    wrt.push_back(x);
    auto params = std::make_shared<NeckParams>(std::move(p));
    auto f = [params, x, target] {
      return ad::mse(neck_forward(*params, x), target);
    };
    return std::pair{std::function<Tensor()>(f), std::move(wrt)};
  });

  return cases;
}

}  // namespace

Report run(int seeds, double tolerance, std::uint64_t base_seed) {
  Report rep;
  rep.seeds = seeds;
  rep.tolerance = tolerance;
  rep.all_pass = true;
  for (const Case& c : op_cases()) {
    OpResult r;
    r.op = c.op;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(Rng::derive(base_seed, c.op) + static_cast<std::uint64_t>(s));
      auto [loss_fn, wrt] = c.make(rng);
      double err = max_rel_err(loss_fn, wrt);
      if (err > r.max_rel_err) r.max_rel_err = err;
    }
    r.pass = r.max_rel_err < tolerance;
    rep.all_pass = rep.all_pass && r.pass;
    rep.ops.push_back(std::move(r));
  }
  return rep;
}

}  // namespace featprobe::gradcheck
