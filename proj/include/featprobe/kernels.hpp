#pragma once

#include <cstdint>

namespace featprobe::kernels {

// Row-major dense kernels behind the autodiff ops and the metric suite.
//
// The default entry points parallelise with OpenMP, but stay bit-identical
// for any thread count: work is split by output element, each element is
// produced start-to-finish by one thread with a fixed inner-loop order, and
// reductions collect per-row partial sums that are added up serially at the
// end. featprobe::kernels::serial holds plain single-threaded references for
// the tests and the benchmark.

using i64 = std::int64_t;

// c[n,m] = a[n,k] * b[k,m]
void matmul(const double* a, const double* b, double* c, i64 n, i64 k, i64 m);
// c[n,m] = a[n,k] * b[m,k]^T
void matmul_nt(const double* a, const double* b, double* c, i64 n, i64 k, i64 m);
// c[k,m] = a[n,k]^T * b[n,m]
void matmul_tn(const double* a, const double* b, double* c, i64 n, i64 k, i64 m);

// Batched variants over [B, rows, cols] blocks.
// c[b,t,m] = sum_k a[b,t,k] * w[b,k,m]
void bmm_nn(const double* a, const double* w, double* c, i64 batch, i64 t, i64 k, i64 m);
// c[b,t,m] = sum_k a[b,t,k] * w[b,m,k]
void bmm_nt(const double* a, const double* w, double* c, i64 batch, i64 t, i64 k, i64 m);
// c[b,k,m] = sum_t a[b,t,k] * d[b,t,m]
void bmm_tn(const double* a, const double* d, double* c, i64 batch, i64 t, i64 k, i64 m);

struct MmdTerms {
  double sum_kxx_offdiag = 0.0;  // sum over i != j of k(x_i, x_j)
  double sum_kyy_offdiag = 0.0;
  double sum_kxy = 0.0;          // sum over all (i, j)
};

// RBF kernel k(a,b) = exp(-gamma * |a-b|^2).
MmdTerms mmd_terms_rbf(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                       double gamma);
// Polynomial kernel k(a,b) = (scale * a.b + offset)^degree.
MmdTerms mmd_terms_poly(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                        double scale, double offset, int degree);

// For each point i of the paired sample (x_i, y_i): the max-norm distance to
// its k-th nearest neighbour in the joint space (ties broken by index), then
// the number of marginal neighbours strictly inside that radius.
void ksg_neighbor_stats(const double* x, i64 dx, const double* y, i64 dy,
                        i64 n, int k, double* eps, i64* nx_count, i64* ny_count);

// All pairwise squared Euclidean distances between rows of x (n x d),
// upper triangle i < j, written in row-major triangle order.
void pairwise_sq_dists(const double* x, i64 n, i64 d, double* out);

namespace serial {
void matmul(const double* a, const double* b, double* c, i64 n, i64 k, i64 m);
MmdTerms mmd_terms_rbf(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                       double gamma);
MmdTerms mmd_terms_poly(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                        double scale, double offset, int degree);
void ksg_neighbor_stats(const double* x, i64 dx, const double* y, i64 dy,
                        i64 n, int k, double* eps, i64* nx_count, i64* ny_count);
}  // namespace serial

}  // namespace featprobe::kernels
