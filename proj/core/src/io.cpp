#include "demerge/io.hpp"

#include <algorithm>
#include <atomic>
#include <climits>
#include <sstream>
#include <system_error>

#include <fmt/core.h>
#include <unistd.h>
#include <zlib.h>

#include "demerge/errors.hpp"

namespace demerge {

void Crc32::update(std::span<const std::byte> bytes) noexcept {
    uLong crc = value_;
    const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
    std::size_t remaining = bytes.size();
    // zlib takes a 32-bit length.
    while (remaining > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, UINT_MAX));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        remaining -= chunk;
    }
    value_ = static_cast<std::uint32_t>(crc);
}

std::uint32_t Crc32::of(std::span<const std::byte> bytes) noexcept {
    Crc32 crc;
    crc.update(bytes);
    return crc.value();
}

std::uint32_t Crc32::of(std::string_view text) noexcept {
    return of(std::as_bytes(std::span(text.data(), text.size())));
}

std::filesystem::path scratch_path(const std::filesystem::path& path, std::string_view tag) {
    static std::atomic<unsigned> counter{0};
    auto result = path;
    result += fmt::format(".{}-{}-{}", tag, ::getpid(), counter.fetch_add(1));
    return result;
}

AtomicFile::AtomicFile(std::filesystem::path destination)
    : destination_(std::move(destination)), temp_(scratch_path(destination_, "tmp")) {
    out_.open(temp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError(fmt::format("cannot create '{}'", temp_.string()));
}

AtomicFile::~AtomicFile() {
    if (!committed_) {
        out_.close();
        std::error_code ignored;
        std::filesystem::remove(temp_, ignored);
    }
}

void AtomicFile::write(std::span<const std::byte> bytes) {
    out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out_) throw IoError(fmt::format("write to '{}' failed", temp_.string()));
}

void AtomicFile::write(std::string_view text) {
    write(std::as_bytes(std::span(text.data(), text.size())));
}

void AtomicFile::commit() {
    out_.flush();
    if (!out_) throw IoError(fmt::format("flush of '{}' failed", temp_.string()));
    out_.close();
    std::error_code ec;
    std::filesystem::rename(temp_, destination_, ec);
    if (ec) throw IoError(fmt::format("cannot rename '{}' to '{}': {}", temp_.string(), destination_.string(), ec.message()));
    committed_ = true;
}

void write_file_atomic(const std::filesystem::path& destination, std::string_view text) {
    AtomicFile file(destination);
    file.write(text);
    file.commit();
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) throw IoError(fmt::format("read of '{}' failed", path.string()));
    return std::move(buffer).str();
}

} // namespace demerge
