#include "usbl/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "usbl/error.hpp"

namespace usbl {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swapping");

constexpr std::array<char, 4> kMagic = {'U', 'S', 'B', 'L'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::ifstream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return static_cast<std::size_t>(in.gcount()) == sizeof(T);
}

void check_dims(std::span<const std::uint64_t> dims, std::size_t value_count) {
  if (dims.empty() || dims.size() > kMaxTensorDims)
    throw Error(ErrorCode::ShapeMismatch, "tensor rank must be in [1, 4]");
  for (auto d : dims)
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, "tensor dims must be >= 1");
  if (element_count(dims) != value_count)
    throw Error(ErrorCode::ShapeMismatch, "value count does not match product of dims");
}

template <typename T>
void write_impl(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                std::span<const T> values, DType dtype) {
  check_dims(dims, values.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put(out, kTensorVersion);
  put(out, static_cast<std::uint8_t>(dtype));
  put(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put(out, d);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

template <typename T>
std::vector<std::uint64_t> read_impl(const std::filesystem::path& path, DType expected,
                                     std::vector<T>& values) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4) throw Error(ErrorCode::Truncated, "header: " + path.string());
  if (magic != kMagic) throw Error(ErrorCode::BadMagic, path.string());
  std::uint32_t version = 0;
  std::uint8_t dtype = 0;
  std::uint32_t ndim = 0;
  if (!get(in, version) || !get(in, dtype) || !get(in, ndim))
    throw Error(ErrorCode::Truncated, "header: " + path.string());
  if (version != kTensorVersion)
    throw Error(ErrorCode::BadMagic, "unsupported version " + std::to_string(version));
  if (dtype != static_cast<std::uint8_t>(expected))
    throw Error(ErrorCode::DtypeMismatch, "dtype code " + std::to_string(dtype) + " in " +
                                              path.string());
  if (ndim == 0 || ndim > kMaxTensorDims)
    throw Error(ErrorCode::ShapeMismatch, "bad rank in " + path.string());
  std::vector<std::uint64_t> dims(ndim);
  for (auto& d : dims) {
    if (!get(in, d)) throw Error(ErrorCode::Truncated, "dims: " + path.string());
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero dim in " + path.string());
  }
  const auto count = element_count(dims);
  values.resize(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::uint64_t>(in.gcount()) != count * sizeof(T))
    throw Error(ErrorCode::Truncated, "payload: " + path.string());
  return dims;
}

}  // namespace

std::uint64_t element_count(std::span<const std::uint64_t> dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::size_t tensor_header_size(std::size_t ndim) { return 4 + 4 + 1 + 4 + 8 * ndim; }

void write_tensor(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                  std::span<const float> values) {
  write_impl(path, dims, values, DType::Float32);
}

Tensor read_tensor(const std::filesystem::path& path) {
  Tensor t;
  t.dims = read_impl(path, DType::Float32, t.values);
  return t;
}

void write_tensor64(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                    std::span<const double> values) {
  write_impl(path, dims, values, DType::Float64);
}

Tensor64 read_tensor64(const std::filesystem::path& path) {
  Tensor64 t;
  t.dims = read_impl(path, DType::Float64, t.values);
  return t;
}

}  // namespace usbl
