#include "lrlc/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace lrlc {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& context) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require<FormatError>(static_cast<bool>(in), context, ": truncated at offset ",
                       static_cast<long long>(in.tellg()));
  return v;
}

template <typename T>
void write_tensor_impl(std::ostream& out, const Tensor<T>& t, Dtype dtype) {
  out.write(kTensorMagic, 4);
  write_raw(out, kTensorVersion);
  write_raw(out, static_cast<std::uint8_t>(dtype));
  require<ShapeError>(t.rank() <= std::numeric_limits<std::uint8_t>::max(),
                      "tensor rank too large to serialize");
  write_raw(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d = 0; d < t.rank(); ++d) {
    require<ShapeError>(t.extent(d) <= std::numeric_limits<std::uint32_t>::max(),
                        "tensor extent too large to serialize");
    write_raw(out, static_cast<std::uint32_t>(t.extent(d)));
  }
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
  require<FormatError>(static_cast<bool>(out), "tensor write failed");
}

template <typename T>
Tensor<T> read_payload(std::istream& in, Shape shape, const std::string& context) {
  Tensor<T> t(std::move(shape));
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  require<FormatError>(static_cast<bool>(in), context, ": truncated payload");
  return t;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor<float>& t) {
  write_tensor_impl(out, t, Dtype::kFloat32);
}

void write_tensor(std::ostream& out, const Tensor<double>& t) {
  write_tensor_impl(out, t, Dtype::kFloat64);
}

AnyTensor read_tensor(std::istream& in, const std::string& context) {
  char magic[4];
  in.read(magic, 4);
  require<FormatError>(static_cast<bool>(in) && std::memcmp(magic, kTensorMagic, 4) == 0, context,
                       ": bad magic (expected \"LRLC\")");
  const auto version = read_raw<std::uint32_t>(in, context);
  require<FormatError>(version == kTensorVersion, context, ": unsupported version ", version);
  const auto dtype = read_raw<std::uint8_t>(in, context);
  const auto ndim = read_raw<std::uint8_t>(in, context);
  Shape shape(ndim);
  for (std::size_t d = 0; d < ndim; ++d) shape[d] = read_raw<std::uint32_t>(in, context);
  switch (static_cast<Dtype>(dtype)) {
    case Dtype::kFloat32:
      return read_payload<float>(in, std::move(shape), context);
    case Dtype::kFloat64:
      return read_payload<double>(in, std::move(shape), context);
  }
  throw FormatError(detail::concat(context, ": unknown dtype code ", int(dtype)));
}

namespace {

template <typename T>
void save_impl(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  require<FormatError>(static_cast<bool>(out), "cannot open ", path, " for writing");
  write_tensor(out, t);
  out.close();
  require<FormatError>(static_cast<bool>(out), "write to ", path, " failed");
}

}  // namespace

void save_tensor(const std::string& path, const Tensor<float>& t) { save_impl(path, t); }
void save_tensor(const std::string& path, const Tensor<double>& t) { save_impl(path, t); }

AnyTensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<FormatError>(static_cast<bool>(in), "cannot open ", path);
  return read_tensor(in, path);
}

}  // namespace lrlc
