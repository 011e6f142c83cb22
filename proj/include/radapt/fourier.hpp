#pragma once

#include <cstddef>
#include <vector>

#include "radapt/tensor.hpp"

namespace radapt {

/// Complex-valued 2D grid stored as separate real/imaginary planes.
struct ComplexGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> re;
  std::vector<double> im;

  ComplexGrid() = default;
  ComplexGrid(std::size_t h, std::size_t w)
      : height(h), width(w), re(h * w, 0.0), im(h * w, 0.0) {
    if (h == 0 || w == 0) throw std::invalid_argument("complex grid: zero extent");
  }

  std::size_t idx(std::size_t u, std::size_t v) const { return u * width + v; }
  std::size_t size() const { return height * width; }
};

/// Forward 2D DFT, unnormalized:
///   F(x)_{u,v} = sum_{a,b} x_{a,b} exp(-i 2 pi (u a / H + v b / W)).
/// Separable row-column evaluation; fine at the grid sizes used here.
ComplexGrid dft2(const ComplexGrid& x);

/// Normalized inverse; idft2(dft2(x)) recovers x.
ComplexGrid idft2(const ComplexGrid& x);

/// Move DC to the grid center (floor(h/2), floor(w/2)).
ComplexGrid fftshift(const ComplexGrid& x);
/// Inverse of fftshift (they differ for odd extents).
ComplexGrid ifftshift(const ComplexGrid& x);

/// Same shifts for real planes.
Tensor fftshift(const Tensor& x);
Tensor ifftshift(const Tensor& x);

/// Euclidean distance of each entry from the grid center, on the centered
/// (center-is-DC) layout. Entry (floor(h/2), floor(w/2)) is zero.
Tensor centered_distance_matrix(std::size_t h, std::size_t w);

ComplexGrid real_to_complex(const Tensor& plane);

}  // namespace radapt
