#include "handsoff/hoff.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "handsoff/errors.hpp"

namespace handsoff::hoff {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    if (pos + 4 > bytes.size()) throw IoError("HOFF: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

}  // namespace

Tensor Tensor::of_floats(std::vector<std::uint32_t> dims, std::vector<float> values) {
    if (product(dims) != values.size()) throw ShapeError("HOFF: payload does not match dims");
    Tensor t;
    t.dtype = DType::f32;
    t.dims = std::move(dims);
    t.f32 = std::move(values);
    return t;
}

Tensor Tensor::of_bytes(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> values) {
    if (product(dims) != values.size()) throw ShapeError("HOFF: payload does not match dims");
    Tensor t;
    t.dtype = DType::u8;
    t.dims = std::move(dims);
    t.u8 = std::move(values);
    return t;
}

std::size_t Tensor::element_count() const { return product(dims); }

std::vector<std::uint8_t> encode(const Tensor& tensor) {
    const std::size_t n = tensor.element_count();
    const std::size_t have = tensor.dtype == DType::u8 ? tensor.u8.size() : tensor.f32.size();
    if (have != n) throw ShapeError("HOFF: payload does not match dims");

    std::vector<std::uint8_t> out{'H', 'O', 'F', 'F'};
    put_u32(out, kVersion);
    out.push_back(static_cast<std::uint8_t>(tensor.dtype));
    put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
    for (auto d : tensor.dims) put_u32(out, d);
    if (tensor.dtype == DType::u8) {
        out.insert(out.end(), tensor.u8.begin(), tensor.u8.end());
    } else {
        out.reserve(out.size() + 4 * n);
        for (float f : tensor.f32) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

Tensor decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "HOFF", 4) != 0) throw IoError("HOFF: bad magic");
    std::size_t pos = 4;
    const std::uint32_t version = get_u32(bytes, pos);
    if (version != kVersion) throw IoError("HOFF: unsupported version " + std::to_string(version));
    if (pos >= bytes.size()) throw IoError("HOFF: truncated header");
    const std::uint8_t code = bytes[pos++];
    if (code > 1) throw IoError("HOFF: unknown dtype code " + std::to_string(code));
    Tensor t;
    t.dtype = static_cast<DType>(code);
    const std::uint32_t ndim = get_u32(bytes, pos);
    if (ndim > 16) throw IoError("HOFF: implausible ndim " + std::to_string(ndim));
    for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(get_u32(bytes, pos));
    const std::size_t n = t.element_count();
    const std::size_t elem = t.dtype == DType::u8 ? 1 : 4;
    if (bytes.size() - pos != n * elem) throw IoError("HOFF: payload length does not match dims");
    if (t.dtype == DType::u8) {
        t.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    } else {
        t.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.f32[i] = std::bit_cast<float>(get_u32(bytes, pos));
    }
    return t;
}

void write(const std::filesystem::path& path, const Tensor& tensor) {
    const auto bytes = encode(tensor);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

Tensor read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

}  // namespace handsoff::hoff
