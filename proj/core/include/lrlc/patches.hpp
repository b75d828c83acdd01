#pragma once

#include <vector>

#include "lrlc/tensor.hpp"

namespace lrlc {

/// Local input patches of one image, one row per output position.
/// Row (i*W + j) is the h x w x Cin patch centered at (i, j) under SAME zero
/// padding and stride 1, flattened row-major.
template <typename T>
struct PatchMatrix {
  std::size_t rows = 0;  // H*W
  std::size_t cols = 0;  // h*w*Cin
  Tensor<T> data;        // shape {rows, cols}
};

namespace detail {

/// im2col into a caller-provided buffer: rows for images [n0, n1) of the
/// batch, laid out [(n-n0)*H*W, fh*fw*C] row-major. Out-of-bounds reads are 0.
template <typename T>
void im2col(const Tensor<T>& input, std::size_t fh, std::size_t fw, std::size_t n0,
            std::size_t n1, T* col) {
  const std::size_t H = input.extent(1), W = input.extent(2), C = input.extent(3);
  const std::size_t patch = fh * fw * C;
  const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(fh / 2);
  const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(fw / 2);
  const T* in = input.data();
  for (std::size_t n = n0; n < n1; ++n) {
    const T* img = in + n * H * W * C;
    T* dst = col + (n - n0) * H * W * patch;
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        T* row = dst + (i * W + j) * patch;
        for (std::size_t y = 0; y < fh; ++y) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + y) - oy;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) {
            for (std::size_t x = 0; x < fw * C; ++x) row[y * fw * C + x] = T{0};
            continue;
          }
          for (std::size_t x = 0; x < fw; ++x) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + x) - ox;
            T* cell = row + (y * fw + x) * C;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) {
              for (std::size_t z = 0; z < C; ++z) cell[z] = T{0};
            } else {
              const T* src = img + (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * C;
              for (std::size_t z = 0; z < C; ++z) cell[z] = src[z];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds patch rows back into the image gradient.
template <typename T>
void col2im_add(const T* col, std::size_t fh, std::size_t fw, std::size_t n0, std::size_t n1,
                Tensor<T>& input_grad) {
  const std::size_t H = input_grad.extent(1), W = input_grad.extent(2), C = input_grad.extent(3);
  const std::size_t patch = fh * fw * C;
  const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(fh / 2);
  const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(fw / 2);
  T* out = input_grad.data();
  for (std::size_t n = n0; n < n1; ++n) {
    T* img = out + n * H * W * C;
    const T* src_base = col + (n - n0) * H * W * patch;
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const T* row = src_base + (i * W + j) * patch;
        for (std::size_t y = 0; y < fh; ++y) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + y) - oy;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t x = 0; x < fw; ++x) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + x) - ox;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
            T* cell = img + (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * C;
            const T* val = row + (y * fw + x) * C;
            for (std::size_t z = 0; z < C; ++z) cell[z] += val[z];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Extracts SAME-padded, stride-1 local patches for every batch element.
/// Filter extents must be odd so patches are centered.
template <typename T>
std::vector<PatchMatrix<T>> extract_patches(const Tensor<T>& input, std::size_t filter_h,
                                            std::size_t filter_w) {
  require<ShapeError>(input.rank() == 4, "extract_patches expects N x H x W x C, got ",
                      shape_str(input.shape()));
  require<ConfigError>(filter_h % 2 == 1 && filter_w % 2 == 1,
                       "extract_patches: filter extents must be odd, got ", filter_h, "x",
                       filter_w);
  require<ConfigError>(filter_h >= 1 && filter_w >= 1, "extract_patches: empty filter");
  const std::size_t N = input.extent(0), H = input.extent(1), W = input.extent(2),
                    C = input.extent(3);
  std::vector<PatchMatrix<T>> out;
  out.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    PatchMatrix<T> pm;
    pm.rows = H * W;
    pm.cols = filter_h * filter_w * C;
    pm.data = Tensor<T>({pm.rows, pm.cols});
    detail::im2col(input, filter_h, filter_w, n, n + 1, pm.data.data());
    out.push_back(std::move(pm));
  }
  return out;
}

}  // namespace lrlc
