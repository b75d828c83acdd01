#pragma once

#include <string>

#include "lrlc/tensor.hpp"

namespace lrlc {

/// H x W map as CSV (one row per line, %.9g) — values round-trip float32.
void write_heatmap_csv(const std::string& path, const TensorF& map);

/// Binary 8-bit PGM (P5); values are clamped to [0, 1] and scaled to 0..255.
void write_heatmap_pgm(const std::string& path, const TensorF& map);

TensorF read_heatmap_csv(const std::string& path);

}  // namespace lrlc
