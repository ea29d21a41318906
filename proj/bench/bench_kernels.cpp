// Timing comparison of the OpenMP kernels against their serial references.
// Each kernel runs on the same inputs both ways; the table reports the best
// of three repetitions and cross-checks that the results agree bitwise,
// which is the contract the parallel versions are held to.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "featprobe/kernels.hpp"
#include "featprobe/rng.hpp"

using featprobe::Rng;
namespace k = featprobe::kernels;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void report(const std::string& name, double serial_s, double parallel_s,
            bool identical) {
  std::printf("%-18s %10.4f ms %10.4f ms %8.2fx   %s\n", name.c_str(),
              serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              identical ? "bitwise equal" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; both columns run serially\n");
#endif
  std::printf("%-18s %13s %13s %9s\n", "kernel", "serial", "parallel",
              "speedup");

  Rng rng(42);
  const int reps = 3;
  bool all_ok = true;

  {
    const k::i64 n = 256, kk = 192, m = 224;
    std::vector<double> a(n * kk), b(kk * m), cs(n * m), cp(n * m);
    rng.fill_normal(a.data(), a.size());
    rng.fill_normal(b.data(), b.size());
    double ts = time_best_of(
        reps, [&] { k::serial::matmul(a.data(), b.data(), cs.data(), n, kk, m); });
    double tp = time_best_of(
        reps, [&] { k::matmul(a.data(), b.data(), cp.data(), n, kk, m); });
    bool same = std::memcmp(cs.data(), cp.data(), cs.size() * 8) == 0;
    all_ok = all_ok && same;
    report("matmul", ts, tp, same);
  }

  {
    const k::i64 nx = 1200, ny = 1200, d = 32;
    std::vector<double> x(nx * d), y(ny * d);
    rng.fill_normal(x.data(), x.size());
    rng.fill_normal(y.data(), y.size());
    k::MmdTerms s{}, p{};
    double ts = time_best_of(reps, [&] {
      s = k::serial::mmd_terms_rbf(x.data(), nx, y.data(), ny, d, 0.05);
    });
    double tp = time_best_of(reps, [&] {
      p = k::mmd_terms_rbf(x.data(), nx, y.data(), ny, d, 0.05);
    });
    bool same = s.sum_kxx_offdiag == p.sum_kxx_offdiag &&
                s.sum_kyy_offdiag == p.sum_kyy_offdiag &&
                s.sum_kxy == p.sum_kxy;
    all_ok = all_ok && same;
    report("mmd_terms_rbf", ts, tp, same);
  }

  {
    const k::i64 n = 1500, dx = 3, dy = 3;
    const int neigh = 5;
    std::vector<double> x(n * dx), y(n * dy);
    rng.fill_normal(x.data(), x.size());
    rng.fill_normal(y.data(), y.size());
    std::vector<double> eps_s(n), eps_p(n);
    std::vector<k::i64> nxs(n), nys(n), nxp(n), nyp(n);
    double ts = time_best_of(reps, [&] {
      k::serial::ksg_neighbor_stats(x.data(), dx, y.data(), dy, n, neigh,
                                    eps_s.data(), nxs.data(), nys.data());
    });
    double tp = time_best_of(reps, [&] {
      k::ksg_neighbor_stats(x.data(), dx, y.data(), dy, n, neigh, eps_p.data(),
                            nxp.data(), nyp.data());
    });
    bool same = std::memcmp(eps_s.data(), eps_p.data(), n * 8) == 0 &&
                nxs == nxp && nys == nyp;
    all_ok = all_ok && same;
    report("ksg_neighbors", ts, tp, same);
  }

  return all_ok ? 0 : 1;
}
