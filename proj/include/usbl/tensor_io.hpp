#pragma once

// Self-describing binary tensor files.
//
// Layout (little-endian throughout):
//   magic    4 bytes  "USBL"
//   version  u32      (currently 1)
//   dtype    u8       0 = float32, 1 = float64
//   ndim     u32      1..4
//   dims     ndim x u64, each >= 1
//   payload  row-major values

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace usbl {

inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::size_t kMaxTensorDims = 4;

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

struct Tensor64 {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

std::uint64_t element_count(std::span<const std::uint64_t> dims);

/// Header size in bytes for a tensor of the given rank.
std::size_t tensor_header_size(std::size_t ndim);

void write_tensor(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                  std::span<const float> values);
Tensor read_tensor(const std::filesystem::path& path);

// float64 variant, used for fitted parameters where float32 would lose the
// optimizer's precision.
void write_tensor64(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                    std::span<const double> values);
Tensor64 read_tensor64(const std::filesystem::path& path);

}  // namespace usbl
