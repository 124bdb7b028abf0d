#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace demerge {

static_assert(std::endian::native == std::endian::little,
              "DEMCKPT payloads are little-endian and are mapped directly onto host floats");

enum class DType : std::uint8_t { F32, F64 };

[[nodiscard]] constexpr std::size_t dtype_size(DType dtype) noexcept {
    return dtype == DType::F32 ? 4 : 8;
}

[[nodiscard]] std::string_view dtype_name(DType dtype) noexcept;

/// Parses "f32" / "f64"; anything else yields nullopt.
[[nodiscard]] std::optional<DType> parse_dtype(std::string_view name) noexcept;

using Shape = std::vector<std::uint64_t>;

/// Number of elements described by `shape`; the empty shape is a scalar (1).
/// Throws FormatError on overflow.
[[nodiscard]] std::uint64_t element_count(std::span<const std::uint64_t> shape);

struct TensorMeta {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
    std::uint64_t byte_offset = 0;
    std::uint64_t byte_length = 0;

    [[nodiscard]] std::uint64_t elements() const { return byte_length / dtype_size(dtype); }

    friend bool operator==(const TensorMeta&, const TensorMeta&) = default;
};

/// Widens raw little-endian payload bytes to doubles. `out.size()` must equal
/// the element count of `bytes`.
void decode_f64(DType dtype, std::span<const std::byte> bytes, std::span<double> out);

/// Narrows doubles into raw payload bytes of `dtype`. Returns the flat index of
/// the first element whose stored value is not finite, or nullopt.
std::optional<std::size_t> encode_f64(DType dtype, std::span<const double> values, std::span<std::byte> out);

} // namespace demerge
