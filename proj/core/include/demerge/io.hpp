#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string_view>

namespace demerge {

/// Incremental CRC-32 (ISO-HDLC polynomial, as used by zlib and PNG).
class Crc32 {
public:
    void update(std::span<const std::byte> bytes) noexcept;
    [[nodiscard]] std::uint32_t value() const noexcept { return value_; }

    [[nodiscard]] static std::uint32_t of(std::span<const std::byte> bytes) noexcept;
    [[nodiscard]] static std::uint32_t of(std::string_view text) noexcept;

private:
    std::uint32_t value_ = 0;
};

/// Output file written under a temporary name beside `destination` and
/// renamed into place by `commit()`. If never committed, the temporary is removed.
class AtomicFile {
public:
    explicit AtomicFile(std::filesystem::path destination);
    ~AtomicFile();

    AtomicFile(const AtomicFile&) = delete;
    AtomicFile& operator=(const AtomicFile&) = delete;

    [[nodiscard]] std::ofstream& stream() noexcept { return out_; }
    void write(std::span<const std::byte> bytes);
    void write(std::string_view text);
    void commit();

    [[nodiscard]] const std::filesystem::path& temp_path() const noexcept { return temp_; }

private:
    std::filesystem::path destination_;
    std::filesystem::path temp_;
    std::ofstream out_;
    bool committed_ = false;
};

/// Writes `text` to `destination` atomically.
void write_file_atomic(const std::filesystem::path& destination, std::string_view text);

/// Reads an entire file; throws IoError.
[[nodiscard]] std::string read_text_file(const std::filesystem::path& path);

/// Unique sibling path `<path>.<tag>-<pid>-<counter>` for scratch files.
[[nodiscard]] std::filesystem::path scratch_path(const std::filesystem::path& path, std::string_view tag);

} // namespace demerge
