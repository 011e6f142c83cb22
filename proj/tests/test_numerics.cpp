#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "radapt/digest.hpp"
#include "radapt/fd_check.hpp"
#include "radapt/fourier.hpp"
#include "radapt/rng.hpp"
#include "radapt/tensor.hpp"

using namespace radapt;

namespace {

// Independent DFT oracle: literal double sum, std::complex arithmetic.
ComplexGrid naive_dft2(const ComplexGrid& x) {
  const std::size_t h = x.height, w = x.width;
  ComplexGrid out(h, w);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t a = 0; a < h; ++a) {
        for (std::size_t b = 0; b < w; ++b) {
          const double ang = -2.0 * M_PI * (double(u) * a / h + double(v) * b / w);
          acc += std::complex<double>(x.re[x.idx(a, b)], x.im[x.idx(a, b)]) *
                 std::polar(1.0, ang);
        }
      }
      out.re[out.idx(u, v)] = acc.real();
      out.im[out.idx(u, v)] = acc.imag();
    }
  }
  return out;
}

ComplexGrid random_grid(std::size_t h, std::size_t w, Rng& rng) {
  ComplexGrid g(h, w);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.re[i] = rng.uniform(-1.0, 1.0);
    g.im[i] = rng.uniform(-1.0, 1.0);
  }
  return g;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping and invariants") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  t(1, 2, 3) = 7.0;
  CHECK(t[23] == 7.0);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor({2, 0, 4}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(
      Tensor::from_external({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}),
      std::invalid_argument);
  Tensor a({2}), b({3});
  CHECK_THROWS_AS(a += b, std::invalid_argument);
}

TEST_CASE("rng determinism and stream splitting") {
  Rng a(123), b(123), c(124);
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  // Split streams never collide with the parent or with each other.
  Rng parent(99);
  Rng s0 = parent.split(0), s1 = parent.split(1);
  CHECK(s0.seed() != s1.seed());
  CHECK(s0.seed() != parent.seed());
  // uniform range and rough moments
  Rng r(7);
  double sum = 0.0, sumsq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sumsq += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
  CHECK(std::abs(sumsq / n - 1.0 / 3.0) < 0.01);
  // normal: mean ~0, var ~1
  Rng g(8);
  sum = sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = g.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sumsq / n - 1.0) < 0.05);
  // uniform_int stays in range
  Rng u(9);
  for (int i = 0; i < 1000; ++i) CHECK(u.uniform_int(17) < 17);
}

TEST_CASE("dft2 matches the naive double-sum oracle") {
  Rng rng(2024);
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{
           {1, 1}, {2, 3}, {4, 4}, {5, 7}, {8, 8}, {16, 16}, {16, 9}}) {
    ComplexGrid x = random_grid(h, w, rng);
    ComplexGrid fast = dft2(x);
    ComplexGrid slow = naive_dft2(x);
    double max_err = 0.0;
    for (std::size_t i = 0; i < fast.size(); ++i) {
      max_err = std::max(max_err, std::abs(fast.re[i] - slow.re[i]));
      max_err = std::max(max_err, std::abs(fast.im[i] - slow.im[i]));
    }
    CHECK(max_err < 1e-10);
  }
}

TEST_CASE("idft2 inverts dft2 and Parseval holds") {
  Rng rng(11);
  for (std::size_t n : {4, 8, 13, 16}) {
    ComplexGrid x = random_grid(n, n, rng);
    ComplexGrid back = idft2(dft2(x));
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      max_err = std::max(max_err, std::abs(back.re[i] - x.re[i]));
      max_err = std::max(max_err, std::abs(back.im[i] - x.im[i]));
    }
    CHECK(max_err < 1e-10);

    // sum |x|^2 = (1/N) sum |F(x)|^2
    ComplexGrid f = dft2(x);
    double spatial = 0.0, spectral = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      spatial += x.re[i] * x.re[i] + x.im[i] * x.im[i];
      spectral += f.re[i] * f.re[i] + f.im[i] * f.im[i];
    }
    CHECK(std::abs(spatial - spectral / double(n * n)) < 1e-9 * spatial);
  }
}

TEST_CASE("fftshift and ifftshift are inverses for odd and even extents") {
  Rng rng(3);
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{
           {4, 4}, {5, 5}, {4, 5}, {7, 2}}) {
    Tensor t({h, w});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
    Tensor round = ifftshift(fftshift(t));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(round[i] == t[i]);
  }
  // DC lands at the center
  Tensor t({4, 6});
  t[0] = 1.0;
  Tensor s = fftshift(t);
  CHECK(s(2, 3) == 1.0);
}

TEST_CASE("centered distance matrix") {
  Tensor d = centered_distance_matrix(5, 5);
  CHECK(d(2, 2) == 0.0);
  CHECK(d(2, 3) == 1.0);
  CHECK(d(0, 0) == doctest::Approx(std::sqrt(8.0)));
  Tensor e = centered_distance_matrix(4, 4);
  CHECK(e(2, 2) == 0.0);
}

TEST_CASE("finite difference utilities") {
  // f(x) = sum x_i^2, grad = 2x
  auto f = [](const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
    return s;
  };
  Tensor x({3}, {1.0, -2.0, 0.5});
  Tensor g = finite_difference_grad(f, x, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(relative_error(g[i], 2.0 * x[i]) < 1e-7);
  }
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
}

TEST_CASE("digest is stable and order-sensitive") {
  Digest a, b;
  a.update("hello").update(1.5);
  b.update("hello").update(1.5);
  CHECK(a.hex() == b.hex());
  Digest c;
  c.update(1.5);
  c.update("hello");
  CHECK(c.hex() != a.hex());
  CHECK(a.hex().size() == 16);
}
