#include "radapt/fourier.hpp"

#include <cmath>
#include <stdexcept>

namespace radapt {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// One axis of the separable transform. sign = -1 forward, +1 inverse.
void dft_axis(const std::vector<double>& re_in, const std::vector<double>& im_in,
              std::vector<double>& re_out, std::vector<double>& im_out,
              std::size_t h, std::size_t w, bool along_rows, double sign) {
  const std::size_t n = along_rows ? w : h;
  std::vector<double> cos_tab(n * n), sin_tab(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t a = 0; a < n; ++a) {
      const double ang = sign * kTwoPi * static_cast<double>((k * a) % n) /
                         static_cast<double>(n);
      cos_tab[k * n + a] = std::cos(ang);
      sin_tab[k * n + a] = std::sin(ang);
    }
  }
  if (along_rows) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t k = 0; k < n; ++k) {
        double sr = 0.0, si = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
          const double c = cos_tab[k * n + a];
          const double s = sin_tab[k * n + a];
          const double xr = re_in[r * w + a];
          const double xi = im_in[r * w + a];
          sr += xr * c - xi * s;
          si += xr * s + xi * c;
        }
        re_out[r * w + k] = sr;
        im_out[r * w + k] = si;
      }
    }
  } else {
    for (std::size_t c0 = 0; c0 < w; ++c0) {
      for (std::size_t k = 0; k < n; ++k) {
        double sr = 0.0, si = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
          const double c = cos_tab[k * n + a];
          const double s = sin_tab[k * n + a];
          const double xr = re_in[a * w + c0];
          const double xi = im_in[a * w + c0];
          sr += xr * c - xi * s;
          si += xr * s + xi * c;
        }
        re_out[k * w + c0] = sr;
        im_out[k * w + c0] = si;
      }
    }
  }
}

ComplexGrid transform(const ComplexGrid& x, double sign) {
  ComplexGrid tmp(x.height, x.width);
  ComplexGrid out(x.height, x.width);
  dft_axis(x.re, x.im, tmp.re, tmp.im, x.height, x.width, /*along_rows=*/true, sign);
  dft_axis(tmp.re, tmp.im, out.re, out.im, x.height, x.width, /*along_rows=*/false, sign);
  return out;
}

}  // namespace

ComplexGrid dft2(const ComplexGrid& x) { return transform(x, -1.0); }

ComplexGrid idft2(const ComplexGrid& x) {
  ComplexGrid out = transform(x, +1.0);
  const double norm = 1.0 / static_cast<double>(x.height * x.width);
  for (double& v : out.re) v *= norm;
  for (double& v : out.im) v *= norm;
  return out;
}

ComplexGrid fftshift(const ComplexGrid& x) {
  ComplexGrid out(x.height, x.width);
  const std::size_t sh = x.height / 2, sw = x.width / 2;
  for (std::size_t u = 0; u < x.height; ++u) {
    for (std::size_t v = 0; v < x.width; ++v) {
      const std::size_t j = ((u + sh) % x.height) * x.width + (v + sw) % x.width;
      out.re[j] = x.re[x.idx(u, v)];
      out.im[j] = x.im[x.idx(u, v)];
    }
  }
  return out;
}

ComplexGrid ifftshift(const ComplexGrid& x) {
  ComplexGrid out(x.height, x.width);
  const std::size_t sh = x.height - x.height / 2, sw = x.width - x.width / 2;
  for (std::size_t u = 0; u < x.height; ++u) {
    for (std::size_t v = 0; v < x.width; ++v) {
      const std::size_t j = ((u + sh) % x.height) * x.width + (v + sw) % x.width;
      out.re[j] = x.re[x.idx(u, v)];
      out.im[j] = x.im[x.idx(u, v)];
    }
  }
  return out;
}

Tensor fftshift(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("fftshift: rank-2 tensor expected");
  const std::size_t h = x.extent(0), w = x.extent(1);
  Tensor out({h, w});
  const std::size_t sh = h / 2, sw = w / 2;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      out((u + sh) % h, (v + sw) % w) = x(u, v);
  return out;
}

Tensor ifftshift(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("ifftshift: rank-2 tensor expected");
  const std::size_t h = x.extent(0), w = x.extent(1);
  Tensor out({h, w});
  const std::size_t sh = h - h / 2, sw = w - w / 2;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      out((u + sh) % h, (v + sw) % w) = x(u, v);
  return out;
}

Tensor centered_distance_matrix(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw std::invalid_argument("distance matrix: zero extent");
  Tensor out({h, w});
  const double cu = static_cast<double>(h / 2);
  const double cv = static_cast<double>(w / 2);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      const double du = static_cast<double>(u) - cu;
      const double dv = static_cast<double>(v) - cv;
      out(u, v) = std::sqrt(du * du + dv * dv);
    }
  }
  return out;
}

ComplexGrid real_to_complex(const Tensor& plane) {
  if (plane.rank() != 2) throw std::invalid_argument("real_to_complex: rank-2 tensor expected");
  ComplexGrid g(plane.extent(0), plane.extent(1));
  for (std::size_t i = 0; i < g.size(); ++i) g.re[i] = plane[i];
  return g;
}

}  // namespace radapt
