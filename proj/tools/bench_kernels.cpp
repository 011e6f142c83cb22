// Serial vs OpenMP kernel throughput comparison; also sanity-checks that the
// two backends agree bitwise on every measured problem.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include <CLI11.hpp>

#include "radapt/kernels.hpp"
#include "radapt/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> random_matrix(std::size_t n, radapt::Rng& rng) {
  std::vector<double> m(n);
  for (double& v : m) v = rng.uniform(-1.0, 1.0);
  return m;
}

template <typename F>
double time_best_of(F&& f, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = Clock::now();
    f();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matmul / softmax / batched-matmul backend benchmark"};
  int reps = 3;
  int threads = 0;
  app.add_option("--reps", reps, "repetitions per measurement (best kept)");
  app.add_option("--threads", threads, "OpenMP threads (0 = hardware default)");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) radapt::kernels::set_threads(threads);

  radapt::Rng rng(42);
  std::printf("threads: %d\n", radapt::kernels::max_threads());
  std::printf("%-28s %10s %10s %8s %8s\n", "kernel", "serial(ms)", "omp(ms)",
              "speedup", "match");

  for (std::size_t n : {64, 128, 256, 512}) {
    auto a = random_matrix(n * n, rng);
    auto b = random_matrix(n * n, rng);
    std::vector<double> cs(n * n), co(n * n);
    double ts = time_best_of(
        [&] {
          radapt::kernels::serial::matmul(a.data(), b.data(), cs.data(), n, n, n,
                                          false, false, false);
        },
        reps);
    double to = time_best_of(
        [&] {
          radapt::kernels::omp::matmul(a.data(), b.data(), co.data(), n, n, n,
                                       false, false, false);
        },
        reps);
    bool match = std::memcmp(cs.data(), co.data(), n * n * sizeof(double)) == 0;
    std::printf("%-28s %10.3f %10.3f %8.2fx %8s\n",
                ("matmul " + std::to_string(n) + "^3").c_str(), ts * 1e3,
                to * 1e3, ts / to, match ? "bit" : "DIFF");
  }

  {
    const std::size_t rows = 4096, cols = 256;
    auto base = random_matrix(rows * cols, rng);
    auto xs = base, xo = base;
    double ts = time_best_of(
        [&] {
          xs = base;
          radapt::kernels::serial::softmax_rows(xs.data(), rows, cols);
        },
        reps);
    double to = time_best_of(
        [&] {
          xo = base;
          radapt::kernels::omp::softmax_rows(xo.data(), rows, cols);
        },
        reps);
    bool match = std::memcmp(xs.data(), xo.data(), rows * cols * sizeof(double)) == 0;
    std::printf("%-28s %10.3f %10.3f %8.2fx %8s\n", "softmax 4096x256", ts * 1e3,
                to * 1e3, ts / to, match ? "bit" : "DIFF");
  }

  {
    const std::size_t batch = 256, m = 65, k = 16, n = 65;
    auto a = random_matrix(batch * m * k, rng);
    auto b = random_matrix(batch * n * k, rng);
    std::vector<double> cs(batch * m * n), co(batch * m * n);
    double ts = time_best_of(
        [&] {
          radapt::kernels::serial::batched_matmul(a.data(), b.data(), cs.data(),
                                                  batch, m, k, n, m * k, n * k,
                                                  m * n, true);
        },
        reps);
    double to = time_best_of(
        [&] {
          radapt::kernels::omp::batched_matmul(a.data(), b.data(), co.data(),
                                               batch, m, k, n, m * k, n * k,
                                               m * n, true);
        },
        reps);
    bool match =
        std::memcmp(cs.data(), co.data(), batch * m * n * sizeof(double)) == 0;
    std::printf("%-28s %10.3f %10.3f %8.2fx %8s\n", "attention scores b256",
                ts * 1e3, to * 1e3, ts / to, match ? "bit" : "DIFF");
  }
  return 0;
}
