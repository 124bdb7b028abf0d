#include "demerge/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include <fmt/core.h>

#include "demerge/errors.hpp"

namespace demerge {

std::string_view dtype_name(DType dtype) noexcept {
    return dtype == DType::F32 ? "f32" : "f64";
}

std::optional<DType> parse_dtype(std::string_view name) noexcept {
    if (name == "f32") return DType::F32;
    if (name == "f64") return DType::F64;
    return std::nullopt;
}

std::uint64_t element_count(std::span<const std::uint64_t> shape) {
    std::uint64_t count = 1;
    for (auto dim : shape) {
        if (dim != 0 && count > std::numeric_limits<std::uint64_t>::max() / dim) {
            throw FormatError("tensor shape element count overflows 64 bits");
        }
        count *= dim;
    }
    return count;
}

void decode_f64(DType dtype, std::span<const std::byte> bytes, std::span<double> out) {
    if (bytes.size() != out.size() * dtype_size(dtype)) {
        throw FormatError(fmt::format("decode: {} payload bytes do not hold {} elements", bytes.size(), out.size()));
    }
    if (dtype == DType::F64) {
        std::memcpy(out.data(), bytes.data(), bytes.size());
        return;
    }
    const std::byte* src = bytes.data();
    for (std::size_t i = 0; i < out.size(); ++i, src += sizeof(float)) {
        float value;
        std::memcpy(&value, src, sizeof(float));
        out[i] = value;
    }
}

std::optional<std::size_t> encode_f64(DType dtype, std::span<const double> values, std::span<std::byte> out) {
    if (out.size() != values.size() * dtype_size(dtype)) {
        throw FormatError(fmt::format("encode: {} payload bytes do not hold {} elements", out.size(), values.size()));
    }
    std::optional<std::size_t> first_bad;
    std::byte* dst = out.data();
    if (dtype == DType::F64) {
        std::memcpy(dst, values.data(), out.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i])) return i;
        }
        return std::nullopt;
    }
    for (std::size_t i = 0; i < values.size(); ++i, dst += sizeof(float)) {
        const auto value = static_cast<float>(values[i]);
        if (!first_bad && !std::isfinite(value)) first_bad = i;
        std::memcpy(dst, &value, sizeof(float));
    }
    return first_bad;
}

} // namespace demerge
