#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>

#include "lrlc/tensor.hpp"

namespace lrlc {

/// Flat binary tensor container, used by checkpoints and heatmap export:
///   "LRLC" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim | u32 extents...
/// followed by little-endian scalars in row-major order.
inline constexpr char kTensorMagic[4] = {'L', 'R', 'L', 'C'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class Dtype : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

void write_tensor(std::ostream& out, const Tensor<float>& t);
void write_tensor(std::ostream& out, const Tensor<double>& t);
AnyTensor read_tensor(std::istream& in, const std::string& context = "tensor stream");

void save_tensor(const std::string& path, const Tensor<float>& t);
void save_tensor(const std::string& path, const Tensor<double>& t);
AnyTensor load_tensor(const std::string& path);

/// Loads and converts to the requested scalar type.
template <typename T>
Tensor<T> load_tensor_as(const std::string& path) {
  AnyTensor any = load_tensor(path);
  if (auto* f = std::get_if<Tensor<float>>(&any)) return cast<T>(*f);
  return cast<T>(std::get<Tensor<double>>(any));
}

}  // namespace lrlc
