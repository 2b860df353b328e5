#pragma once

// HOFF tensor files: "HOFF" | u32 version (=1) | u8 dtype | u32 ndim |
// u32 dims[ndim] | row-major payload. All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace handsoff::hoff {

enum class DType : std::uint8_t { u8 = 0, f32 = 1 };

inline constexpr std::uint32_t kVersion = 1;

struct Tensor {
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> u8;  // payload when dtype == u8
    std::vector<float> f32;        // payload when dtype == f32

    static Tensor of_floats(std::vector<std::uint32_t> dims, std::vector<float> values);
    static Tensor of_bytes(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> values);

    std::size_t element_count() const;

    bool operator==(const Tensor&) const = default;
};

std::vector<std::uint8_t> encode(const Tensor& tensor);
Tensor decode(std::span<const std::uint8_t> bytes);

void write(const std::filesystem::path& path, const Tensor& tensor);
Tensor read(const std::filesystem::path& path);

}  // namespace handsoff::hoff
