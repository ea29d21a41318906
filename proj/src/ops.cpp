#include <cmath>
#include <cstring>

#include "featprobe/errors.hpp"
#include "featprobe/kernels.hpp"
#include "featprobe/tensor.hpp"

namespace featprobe::ad {

namespace testing_hooks {
bool softmax_backward_sign_flip = false;
}

namespace {

std::vector<double>& grad_buf(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// Builds the output node. Parent handles and the backward function are only
// kept when some parent needs gradients, so frozen forward passes stay plain
// values with no graph behind them.
Tensor make_node(const char* op, Shape shape, std::vector<double> data,
                 const std::vector<Tensor>& parents,
                 std::function<void(TensorImpl&)> bw) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || p.requires_grad();
  impl->requires_grad = rg;
  if (rg) {
    for (const Tensor& p : parents) impl->parents.push_back(p.impl());
    impl->backward_fn = std::move(bw);
  }
  return Tensor(std::move(impl));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.shape().size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + " tensor, got shape " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  i64 n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(n * m));
  kernels::matmul(a.data().data(), b.data().data(), out.data(), n, k, m);
  ImplPtr pa = a.impl(), pb = b.impl();
  return make_node("matmul", {n, m}, std::move(out), {a, b},
                   [pa, pb, n, k, m](TensorImpl& o) {
                     const double* dc = o.grad.data();
                     if (pa->requires_grad) {
                       std::vector<double> t(static_cast<std::size_t>(n * k));
                       kernels::matmul_nt(dc, pb->data.data(), t.data(), n, m, k);
                       axpy(1.0, t, grad_buf(*pa));
                     }
                     if (pb->requires_grad) {
                       std::vector<double> t(static_cast<std::size_t>(k * m));
                       kernels::matmul_tn(pa->data.data(), dc, t.data(), n, k, m);
                       axpy(1.0, t, grad_buf(*pb));
                     }
                   });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  i64 batch = a.shape()[0], t = a.shape()[1], k = a.shape()[2];
  if (b.shape()[0] != batch)
    throw DimensionError("bmm: batch dimensions disagree: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  i64 m;
  if (!transpose_b) {
    if (b.shape()[1] != k)
      throw DimensionError("bmm: inner dimensions disagree: " +
                           shape_str(a.shape()) + " x " + shape_str(b.shape()));
    m = b.shape()[2];
  } else {
    if (b.shape()[2] != k)
      throw DimensionError("bmm: inner dimensions disagree: " +
                           shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                           "^T");
    m = b.shape()[1];
  }
  std::vector<double> out(static_cast<std::size_t>(batch * t * m));
  if (!transpose_b)
    kernels::bmm_nn(a.data().data(), b.data().data(), out.data(), batch, t, k, m);
  else
    kernels::bmm_nt(a.data().data(), b.data().data(), out.data(), batch, t, k, m);
  ImplPtr pa = a.impl(), pb = b.impl();
  return make_node(
      "bmm", {batch, t, m}, std::move(out), {a, b},
      [pa, pb, batch, t, k, m, transpose_b](TensorImpl& o) {
        const double* dc = o.grad.data();
        if (pa->requires_grad) {
          std::vector<double> g(static_cast<std::size_t>(batch * t * k));
          if (!transpose_b)
            kernels::bmm_nt(dc, pb->data.data(), g.data(), batch, t, m, k);
          else
            kernels::bmm_nn(dc, pb->data.data(), g.data(), batch, t, m, k);
          axpy(1.0, g, grad_buf(*pa));
        }
        if (pb->requires_grad) {
          std::vector<double> g(pb->data.size());
          if (!transpose_b)
            kernels::bmm_tn(pa->data.data(), dc, g.data(), batch, t, k, m);
          else
            kernels::bmm_tn(dc, pa->data.data(), g.data(), batch, t, m, k);
          axpy(1.0, g, grad_buf(*pb));
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  ImplPtr pa = a.impl(), pb = b.impl();
  return make_node("add", a.shape(), std::move(out), {a, b},
                   [pa, pb](TensorImpl& o) {
                     if (pa->requires_grad) axpy(1.0, o.grad, grad_buf(*pa));
                     if (pb->requires_grad) axpy(1.0, o.grad, grad_buf(*pb));
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  ImplPtr pa = a.impl(), pb = b.impl();
  return make_node("sub", a.shape(), std::move(out), {a, b},
                   [pa, pb](TensorImpl& o) {
                     if (pa->requires_grad) axpy(1.0, o.grad, grad_buf(*pa));
                     if (pb->requires_grad) axpy(-1.0, o.grad, grad_buf(*pb));
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  ImplPtr pa = a.impl(), pb = b.impl();
  return make_node("mul", a.shape(), std::move(out), {a, b},
                   [pa, pb](TensorImpl& o) {
                     if (pa->requires_grad) {
                       auto& g = grad_buf(*pa);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += o.grad[i] * pb->data[i];
                     }
                     if (pb->requires_grad) {
                       auto& g = grad_buf(*pb);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += o.grad[i] * pa->data[i];
                     }
                   });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v += s;
  ImplPtr pa = a.impl();
  return make_node("add_scalar", a.shape(), std::move(out), {a},
                   [pa](TensorImpl& o) { axpy(1.0, o.grad, grad_buf(*pa)); });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= s;
  ImplPtr pa = a.impl();
  return make_node("mul_scalar", a.shape(), std::move(out), {a},
                   [pa, s](TensorImpl& o) { axpy(s, o.grad, grad_buf(*pa)); });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  ImplPtr pa = a.impl();
  return make_node("relu", a.shape(), std::move(out), {a},
                   [pa](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (pa->data[i] > 0.0) g[i] += o.grad[i];
                   });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(a.data());
  for (double& v : out) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  ImplPtr pa = a.impl();
  return make_node("gelu", a.shape(), std::move(out), {a},
                   [pa](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       double x = pa->data[i];
                       double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                       double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                       g[i] += o.grad[i] * (cdf + x * pdf);
                     }
                   });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = std::exp(v);
  ImplPtr pa = a.impl();
  return make_node("exp", a.shape(), std::move(out), {a},
                   [pa](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i] * o.data[i];
                   });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = std::log(v);
  ImplPtr pa = a.impl();
  return make_node("log", a.shape(), std::move(out), {a},
                   [pa](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += o.grad[i] / pa->data[i];
                   });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  for (double v : a.data())
    if (!std::isfinite(v))
      throw NumericError("softmax_rows: non-finite input value");
  i64 r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.data().size());
  for (i64 i = 0; i < r; ++i) {
    const double* row = a.data().data() + i * c;
    double* orow = out.data() + i * c;
    double mx = row[0];
    for (i64 j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (i64 j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (i64 j = 0; j < c; ++j) orow[j] /= sum;
  }
  ImplPtr pa = a.impl();
  return make_node("softmax_rows", a.shape(), std::move(out), {a},
                   [pa, r, c](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     double flip =
                         testing_hooks::softmax_backward_sign_flip ? -1.0 : 1.0;
                     for (i64 i = 0; i < r; ++i) {
                       const double* y = o.data.data() + i * c;
                       const double* dy = o.grad.data() + i * c;
                       double dot = 0.0;
                       for (i64 j = 0; j < c; ++j) dot += dy[j] * y[j];
                       double* gr = g.data() + i * c;
                       for (i64 j = 0; j < c; ++j)
                         gr[j] += flip * y[j] * (dy[j] - dot);
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_rank(x, 2, "layer_norm");
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  i64 r = x.shape()[0], d = x.shape()[1];
  if (d < 2)
    throw ConfigError("layer_norm: needs at least 2 features per row, got " +
                      shape_str(x.shape()));
  if (gain.shape()[0] != d || bias.shape()[0] != d)
    throw DimensionError("layer_norm: gain/bias of shape " +
                         shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match feature dim of " + shape_str(x.shape()));
  constexpr double kEps = 1e-5;
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
  std::vector<double> out(x.data().size());
  for (i64 i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * d;
    double mean = 0.0;
    for (i64 j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (i64 j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double iv = 1.0 / std::sqrt(var + kEps);
    (*inv)[static_cast<std::size_t>(i)] = iv;
    for (i64 j = 0; j < d; ++j) {
      double xh = (row[j] - mean) * iv;
      (*xhat)[static_cast<std::size_t>(i * d + j)] = xh;
      out[static_cast<std::size_t>(i * d + j)] =
          gain.data()[static_cast<std::size_t>(j)] * xh +
          bias.data()[static_cast<std::size_t>(j)];
    }
  }
  ImplPtr px = x.impl(), pg = gain.impl(), pb = bias.impl();
  return make_node(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [px, pg, pb, xhat, inv, r, d](TensorImpl& o) {
        for (i64 i = 0; i < r; ++i) {
          const double* dy = o.grad.data() + i * d;
          const double* xh = xhat->data() + i * d;
          if (px->requires_grad) {
            double m1 = 0.0, m2 = 0.0;
            for (i64 j = 0; j < d; ++j) {
              double dxh = dy[j] * pg->data[static_cast<std::size_t>(j)];
              m1 += dxh;
              m2 += dxh * xh[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            double iv = (*inv)[static_cast<std::size_t>(i)];
            auto& gx = grad_buf(*px);
            for (i64 j = 0; j < d; ++j) {
              double dxh = dy[j] * pg->data[static_cast<std::size_t>(j)];
              gx[static_cast<std::size_t>(i * d + j)] +=
                  iv * (dxh - m1 - xh[j] * m2);
            }
          }
          if (pg->requires_grad) {
            auto& gg = grad_buf(*pg);
            for (i64 j = 0; j < d; ++j)
              gg[static_cast<std::size_t>(j)] += dy[j] * xh[j];
          }
          if (pb->requires_grad) {
            auto& gb = grad_buf(*pb);
            for (i64 j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += dy[j];
          }
        }
      });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank(x, 2, "add_bias");
  require_rank(b, 1, "add_bias");
  i64 r = x.shape()[0], d = x.shape()[1];
  if (b.shape()[0] != d)
    throw DimensionError("add_bias: bias shape " + shape_str(b.shape()) +
                         " does not match " + shape_str(x.shape()));
  std::vector<double> out(x.data());
  for (i64 i = 0; i < r; ++i)
    for (i64 j = 0; j < d; ++j)
      out[static_cast<std::size_t>(i * d + j)] +=
          b.data()[static_cast<std::size_t>(j)];
  ImplPtr px = x.impl(), pb = b.impl();
  return make_node("add_bias", x.shape(), std::move(out), {x, b},
                   [px, pb, r, d](TensorImpl& o) {
                     if (px->requires_grad) axpy(1.0, o.grad, grad_buf(*px));
                     if (pb->requires_grad) {
                       auto& g = grad_buf(*pb);
                       for (i64 i = 0; i < r; ++i)
                         for (i64 j = 0; j < d; ++j)
                           g[static_cast<std::size_t>(j)] +=
                               o.grad[static_cast<std::size_t>(i * d + j)];
                     }
                   });
}

Tensor tile_rows(const Tensor& x, i64 repeats) {
  require_rank(x, 2, "tile_rows");
  if (repeats <= 0) throw ConfigError("tile_rows: repeats must be positive");
  i64 t = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(repeats * t * d));
  for (i64 rpt = 0; rpt < repeats; ++rpt)
    std::memcpy(out.data() + rpt * t * d, x.data().data(),
                sizeof(double) * static_cast<std::size_t>(t * d));
  ImplPtr px = x.impl();
  return make_node("tile_rows", {repeats * t, d}, std::move(out), {x},
                   [px, repeats, t, d](TensorImpl& o) {
                     auto& g = grad_buf(*px);
                     for (i64 rpt = 0; rpt < repeats; ++rpt) {
                       const double* dy = o.grad.data() + rpt * t * d;
                       for (i64 i = 0; i < t * d; ++i)
                         g[static_cast<std::size_t>(i)] += dy[i];
                     }
                   });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  i64 r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.data().size());
  for (i64 i = 0; i < r; ++i)
    for (i64 j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j * r + i)] =
          a.data()[static_cast<std::size_t>(i * c + j)];
  ImplPtr pa = a.impl();
  return make_node("transpose", {c, r}, std::move(out), {a},
                   [pa, r, c](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     for (i64 i = 0; i < r; ++i)
                       for (i64 j = 0; j < c; ++j)
                         g[static_cast<std::size_t>(i * c + j)] +=
                             o.grad[static_cast<std::size_t>(j * r + i)];
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  ImplPtr pa = a.impl();
  return make_node("reshape", std::move(shape), a.data(), {a},
                   [pa](TensorImpl& o) { axpy(1.0, o.grad, grad_buf(*pa)); });
}

Tensor swap_middle_axes(const Tensor& a) {
  require_rank(a, 4, "swap_middle_axes");
  i64 A = a.shape()[0], B = a.shape()[1], C = a.shape()[2], D = a.shape()[3];
  std::vector<double> out(a.data().size());
  for (i64 i = 0; i < A; ++i)
    for (i64 j = 0; j < B; ++j)
      for (i64 kk = 0; kk < C; ++kk)
        std::memcpy(out.data() + ((i * C + kk) * B + j) * D,
                    a.data().data() + ((i * B + j) * C + kk) * D,
                    sizeof(double) * static_cast<std::size_t>(D));
  ImplPtr pa = a.impl();
  return make_node("swap_middle_axes", {A, C, B, D}, std::move(out), {a},
                   [pa, A, B, C, D](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     for (i64 i = 0; i < A; ++i)
                       for (i64 j = 0; j < B; ++j)
                         for (i64 kk = 0; kk < C; ++kk) {
                           const double* dy =
                               o.grad.data() + ((i * C + kk) * B + j) * D;
                           double* gr = g.data() + ((i * B + j) * C + kk) * D;
                           for (i64 l = 0; l < D; ++l) gr[l] += dy[l];
                         }
                   });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  i64 r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  if (b.shape()[0] != r)
    throw DimensionError("concat_cols: row counts disagree: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(r * (ca + cb)));
  for (i64 i = 0; i < r; ++i) {
    std::memcpy(out.data() + i * (ca + cb), a.data().data() + i * ca,
                sizeof(double) * static_cast<std::size_t>(ca));
    std::memcpy(out.data() + i * (ca + cb) + ca, b.data().data() + i * cb,
                sizeof(double) * static_cast<std::size_t>(cb));
  }
  ImplPtr pa = a.impl(), pb = b.impl();
  return make_node("concat_cols", {r, ca + cb}, std::move(out), {a, b},
                   [pa, pb, r, ca, cb](TensorImpl& o) {
                     for (i64 i = 0; i < r; ++i) {
                       const double* dy = o.grad.data() + i * (ca + cb);
                       if (pa->requires_grad) {
                         auto& g = grad_buf(*pa);
                         for (i64 j = 0; j < ca; ++j)
                           g[static_cast<std::size_t>(i * ca + j)] += dy[j];
                       }
                       if (pb->requires_grad) {
                         auto& g = grad_buf(*pb);
                         for (i64 j = 0; j < cb; ++j)
                           g[static_cast<std::size_t>(i * cb + j)] += dy[ca + j];
                       }
                     }
                   });
}

Tensor mean_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  i64 n = a.numel();
  ImplPtr pa = a.impl();
  return make_node("mean_all", {1}, {s / static_cast<double>(n)}, {a},
                   [pa, n](TensorImpl& o) {
                     double d = o.grad[0] / static_cast<double>(n);
                     auto& g = grad_buf(*pa);
                     for (double& v : g) v += d;
                   });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  ImplPtr pa = a.impl();
  return make_node("sum_all", {1}, {s}, {a}, [pa](TensorImpl& o) {
    double d = o.grad[0];
    auto& g = grad_buf(*pa);
    for (double& v : g) v += d;
  });
}

Tensor mean_tokens(const Tensor& a) {
  require_rank(a, 3, "mean_tokens");
  i64 n = a.shape()[0], t = a.shape()[1], d = a.shape()[2];
  std::vector<double> out(static_cast<std::size_t>(n * d), 0.0);
  for (i64 i = 0; i < n; ++i)
    for (i64 tt = 0; tt < t; ++tt)
      for (i64 j = 0; j < d; ++j)
        out[static_cast<std::size_t>(i * d + j)] +=
            a.data()[static_cast<std::size_t>((i * t + tt) * d + j)];
  for (double& v : out) v /= static_cast<double>(t);
  ImplPtr pa = a.impl();
  return make_node("mean_tokens", {n, d}, std::move(out), {a},
                   [pa, n, t, d](TensorImpl& o) {
                     auto& g = grad_buf(*pa);
                     double scale = 1.0 / static_cast<double>(t);
                     for (i64 i = 0; i < n; ++i)
                       for (i64 tt = 0; tt < t; ++tt)
                         for (i64 j = 0; j < d; ++j)
                           g[static_cast<std::size_t>((i * t + tt) * d + j)] +=
                               scale *
                               o.grad[static_cast<std::size_t>(i * d + j)];
                   });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

}  // namespace featprobe::ad
