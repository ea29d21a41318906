#include "featprobe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

namespace featprobe::kernels {

namespace {

// One output row of a plain matmul: c_row[m] = sum_k a_row[k] * b[k,m].
// Accumulation runs over k in ascending order, so the result for a given
// row does not depend on which thread computes it.
inline void matmul_row(const double* a_row, const double* b, double* c_row,
                       i64 k, i64 m) {
  std::memset(c_row, 0, sizeof(double) * static_cast<std::size_t>(m));
  for (i64 kk = 0; kk < k; ++kk) {
    double av = a_row[kk];
    const double* b_row = b + kk * m;
    for (i64 mm = 0; mm < m; ++mm) c_row[mm] += av * b_row[mm];
  }
}

inline double dot(const double* a, const double* b, i64 n) {
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double sq_dist(const double* a, const double* b, i64 n) {
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double max_abs_diff(const double* a, const double* b, i64 n) {
  double m = 0.0;
  for (i64 i = 0; i < n; ++i) {
    double d = std::fabs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

inline double pow_int(double base, int degree) {
  double r = 1.0;
  for (int i = 0; i < degree; ++i) r *= base;
  return r;
}

// k-th nearest neighbour of point i in the joint max-norm, with (distance,
// index) tie-breaking, plus the strict marginal counts at that radius.
inline void ksg_point(const double* x, i64 dx, const double* y, i64 dy, i64 n,
                      int k, i64 i, double* eps_out, i64* nx_out, i64* ny_out) {
  // Selection buffer of the k best (dist, index) pairs seen so far.
  struct Entry {
    double dist;
    i64 idx;
  };
  std::vector<Entry> best(static_cast<std::size_t>(k),
                          Entry{std::numeric_limits<double>::infinity(), -1});
  const double* xi = x + i * dx;
  const double* yi = y + i * dy;
  for (i64 j = 0; j < n; ++j) {
    if (j == i) continue;
    double djx = max_abs_diff(xi, x + j * dx, dx);
    double djy = max_abs_diff(yi, y + j * dy, dy);
    double dj = std::max(djx, djy);
    Entry e{dj, j};
    auto worse = [](const Entry& l, const Entry& r) {
      return l.dist < r.dist || (l.dist == r.dist && l.idx < r.idx);
    };
    if (worse(e, best.back())) {
      // insertion into the sorted buffer
      std::size_t pos = best.size() - 1;
      while (pos > 0 && worse(e, best[pos - 1])) {
        best[pos] = best[pos - 1];
        --pos;
      }
      best[pos] = e;
    }
  }
  double eps = best.back().dist;
  i64 nx = 0, ny = 0;
  for (i64 j = 0; j < n; ++j) {
    if (j == i) continue;
    if (max_abs_diff(xi, x + j * dx, dx) < eps) ++nx;
    if (max_abs_diff(yi, y + j * dy, dy) < eps) ++ny;
  }
  *eps_out = eps;
  *nx_out = nx;
  *ny_out = ny;
}

}  // namespace

void matmul(const double* a, const double* b, double* c, i64 n, i64 k, i64 m) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n; ++i) matmul_row(a + i * k, b, c + i * m, k, m);
}

void matmul_nt(const double* a, const double* b, double* c, i64 n, i64 k, i64 m) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n; ++i) {
    const double* a_row = a + i * k;
    double* c_row = c + i * m;
    for (i64 j = 0; j < m; ++j) c_row[j] = dot(a_row, b + j * k, k);
  }
}

void matmul_tn(const double* a, const double* b, double* c, i64 n, i64 k, i64 m) {
#pragma omp parallel for schedule(static)
  for (i64 kk = 0; kk < k; ++kk) {
    double* c_row = c + kk * m;
    std::memset(c_row, 0, sizeof(double) * static_cast<std::size_t>(m));
    for (i64 i = 0; i < n; ++i) {
      double av = a[i * k + kk];
      const double* b_row = b + i * m;
      for (i64 mm = 0; mm < m; ++mm) c_row[mm] += av * b_row[mm];
    }
  }
}

void bmm_nn(const double* a, const double* w, double* c, i64 batch, i64 t,
            i64 k, i64 m) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < batch * t; ++r) {
    i64 b = r / t;
    matmul_row(a + r * k, w + b * k * m, c + r * m, k, m);
  }
}

void bmm_nt(const double* a, const double* w, double* c, i64 batch, i64 t,
            i64 k, i64 m) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < batch * t; ++r) {
    i64 b = r / t;
    const double* a_row = a + r * k;
    const double* wb = w + b * m * k;
    double* c_row = c + r * m;
    for (i64 j = 0; j < m; ++j) c_row[j] = dot(a_row, wb + j * k, k);
  }
}

void bmm_tn(const double* a, const double* d, double* c, i64 batch, i64 t,
            i64 k, i64 m) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < batch * k; ++r) {
    i64 b = r / k;
    i64 kk = r % k;
    const double* ab = a + b * t * k;
    const double* db = d + b * t * m;
    double* c_row = c + r * m;
    std::memset(c_row, 0, sizeof(double) * static_cast<std::size_t>(m));
    for (i64 tt = 0; tt < t; ++tt) {
      double av = ab[tt * k + kk];
      const double* d_row = db + tt * m;
      for (i64 mm = 0; mm < m; ++mm) c_row[mm] += av * d_row[mm];
    }
  }
}

MmdTerms mmd_terms_rbf(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                       double gamma) {
  std::vector<double> row_xx(static_cast<std::size_t>(nx), 0.0);
  std::vector<double> row_yy(static_cast<std::size_t>(ny), 0.0);
  std::vector<double> row_xy(static_cast<std::size_t>(nx), 0.0);
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < nx; ++i) {
    const double* xi = x + i * d;
    double sxx = 0.0, sxy = 0.0;
    for (i64 j = 0; j < nx; ++j) {
      if (j == i) continue;
      sxx += std::exp(-gamma * sq_dist(xi, x + j * d, d));
    }
    for (i64 j = 0; j < ny; ++j) {
      sxy += std::exp(-gamma * sq_dist(xi, y + j * d, d));
    }
    row_xx[static_cast<std::size_t>(i)] = sxx;
    row_xy[static_cast<std::size_t>(i)] = sxy;
  }
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < ny; ++i) {
    const double* yi = y + i * d;
    double syy = 0.0;
    for (i64 j = 0; j < ny; ++j) {
      if (j == i) continue;
      syy += std::exp(-gamma * sq_dist(yi, y + j * d, d));
    }
    row_yy[static_cast<std::size_t>(i)] = syy;
  }
  // Serial tail sums keep the result independent of the thread count.
  MmdTerms t;
  for (double v : row_xx) t.sum_kxx_offdiag += v;
  for (double v : row_yy) t.sum_kyy_offdiag += v;
  for (double v : row_xy) t.sum_kxy += v;
  return t;
}

MmdTerms mmd_terms_poly(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                        double scale, double offset, int degree) {
  std::vector<double> row_xx(static_cast<std::size_t>(nx), 0.0);
  std::vector<double> row_yy(static_cast<std::size_t>(ny), 0.0);
  std::vector<double> row_xy(static_cast<std::size_t>(nx), 0.0);
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < nx; ++i) {
    const double* xi = x + i * d;
    double sxx = 0.0, sxy = 0.0;
    for (i64 j = 0; j < nx; ++j) {
      if (j == i) continue;
      sxx += pow_int(scale * dot(xi, x + j * d, d) + offset, degree);
    }
    for (i64 j = 0; j < ny; ++j) {
      sxy += pow_int(scale * dot(xi, y + j * d, d) + offset, degree);
    }
    row_xx[static_cast<std::size_t>(i)] = sxx;
    row_xy[static_cast<std::size_t>(i)] = sxy;
  }
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < ny; ++i) {
    const double* yi = y + i * d;
    double syy = 0.0;
    for (i64 j = 0; j < ny; ++j) {
      if (j == i) continue;
      syy += pow_int(scale * dot(yi, y + j * d, d) + offset, degree);
    }
    row_yy[static_cast<std::size_t>(i)] = syy;
  }
  MmdTerms t;
  for (double v : row_xx) t.sum_kxx_offdiag += v;
  for (double v : row_yy) t.sum_kyy_offdiag += v;
  for (double v : row_xy) t.sum_kxy += v;
  return t;
}

void ksg_neighbor_stats(const double* x, i64 dx, const double* y, i64 dy,
                        i64 n, int k, double* eps, i64* nx_count, i64* ny_count) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n; ++i) {
    ksg_point(x, dx, y, dy, n, k, i, eps + i, nx_count + i, ny_count + i);
  }
}

void pairwise_sq_dists(const double* x, i64 n, i64 d, double* out) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n - 1; ++i) {
    // Condensed row offset for the upper triangle.
    i64 base = i * n - i * (i + 1) / 2 - i - 1;
    const double* xi = x + i * d;
    for (i64 j = i + 1; j < n; ++j) out[base + j] = sq_dist(xi, x + j * d, d);
  }
}

namespace serial {

void matmul(const double* a, const double* b, double* c, i64 n, i64 k, i64 m) {
  for (i64 i = 0; i < n; ++i) matmul_row(a + i * k, b, c + i * m, k, m);
}

MmdTerms mmd_terms_rbf(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                       double gamma) {
  // Per-row partial sums, added up row by row: exactly the accumulation
  // pattern of the parallel version, so the two agree to the last bit.
  MmdTerms t;
  for (i64 i = 0; i < nx; ++i) {
    double sxx = 0.0, sxy = 0.0;
    for (i64 j = 0; j < nx; ++j) {
      if (j == i) continue;
      sxx += std::exp(-gamma * sq_dist(x + i * d, x + j * d, d));
    }
    for (i64 j = 0; j < ny; ++j) {
      sxy += std::exp(-gamma * sq_dist(x + i * d, y + j * d, d));
    }
    t.sum_kxx_offdiag += sxx;
    t.sum_kxy += sxy;
  }
  for (i64 i = 0; i < ny; ++i) {
    double syy = 0.0;
    for (i64 j = 0; j < ny; ++j) {
      if (j == i) continue;
      syy += std::exp(-gamma * sq_dist(y + i * d, y + j * d, d));
    }
    t.sum_kyy_offdiag += syy;
  }
  return t;
}

MmdTerms mmd_terms_poly(const double* x, i64 nx, const double* y, i64 ny, i64 d,
                        double scale, double offset, int degree) {
  MmdTerms t;
  for (i64 i = 0; i < nx; ++i) {
    double sxx = 0.0, sxy = 0.0;
    for (i64 j = 0; j < nx; ++j) {
      if (j == i) continue;
      sxx += pow_int(scale * dot(x + i * d, x + j * d, d) + offset, degree);
    }
    for (i64 j = 0; j < ny; ++j) {
      sxy += pow_int(scale * dot(x + i * d, y + j * d, d) + offset, degree);
    }
    t.sum_kxx_offdiag += sxx;
    t.sum_kxy += sxy;
  }
  for (i64 i = 0; i < ny; ++i) {
    double syy = 0.0;
    for (i64 j = 0; j < ny; ++j) {
      if (j == i) continue;
      syy += pow_int(scale * dot(y + i * d, y + j * d, d) + offset, degree);
    }
    t.sum_kyy_offdiag += syy;
  }
  return t;
}

void ksg_neighbor_stats(const double* x, i64 dx, const double* y, i64 dy,
                        i64 n, int k, double* eps, i64* nx_count, i64* ny_count) {
  for (i64 i = 0; i < n; ++i) {
    ksg_point(x, dx, y, dy, n, k, i, eps + i, nx_count + i, ny_count + i);
  }
}

}  // namespace serial

}  // namespace featprobe::kernels
