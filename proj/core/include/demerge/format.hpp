#pragma once

// DEMCKPT container:
//
//   bytes 0-7    magic "DEMCKPT\0"
//   bytes 8-11   format version, u32 little-endian (= 1)
//   bytes 12-19  header length in bytes, u64 little-endian
//   header       compact UTF-8 JSON:
//                {"tensors":[{"name","dtype","shape","offset","length"}...],
//                 "data_crc32":N,"kind":"model"|"delta","index_crc32":M}
//   data         raw little-endian payloads, row-major, concatenated in
//                index order, no padding
//
// `index_crc32` is the CRC-32 of the same header serialized without that
// field. Readers only accept byte-canonical headers, so write -> read -> write
// is byte-identical.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "demerge/checkpoint.hpp"
#include "demerge/io.hpp"

namespace demerge {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::string_view kMagic{"DEMCKPT\0", 8};
inline constexpr std::size_t kPrefixSize = 20;

/// Random-access byte provider. Implementations are immutable after
/// construction and safe to read concurrently.
class ByteSource {
public:
    virtual ~ByteSource() = default;
    [[nodiscard]] virtual std::uint64_t size() const = 0;
    virtual void read_at(std::uint64_t offset, std::span<std::byte> out) const = 0;
};

[[nodiscard]] std::shared_ptr<const ByteSource> open_file_source(const std::filesystem::path& path);
[[nodiscard]] std::shared_ptr<const ByteSource> memory_source(std::vector<std::byte> bytes);

/// Canonical header text for a layout. `metas` must already satisfy validate_layout.
[[nodiscard]] std::string encode_header(CheckpointKind kind, std::span<const TensorMeta> metas, std::uint32_t data_crc32);

/// The fixed 20-byte prefix preceding a header of `header_length` bytes.
[[nodiscard]] std::array<std::byte, kPrefixSize> encode_prefix(std::uint64_t header_length);

/// Validated, lazily read DEMCKPT file. Opening checks the prefix, the index
/// (canonical form and index CRC) and streams the data section once to verify
/// its CRC; tensor payloads are only read on request.
class CheckpointReader final : public TensorSource {
public:
    explicit CheckpointReader(std::shared_ptr<const ByteSource> source);

    [[nodiscard]] static CheckpointReader open(const std::filesystem::path& path);
    [[nodiscard]] static CheckpointReader from_bytes(std::vector<std::byte> bytes);

    [[nodiscard]] CheckpointKind kind() const override { return kind_; }
    [[nodiscard]] std::span<const TensorMeta> metas() const override { return metas_; }
    void read_into(std::size_t index, std::span<std::byte> out) const override;

    [[nodiscard]] std::uint32_t data_crc32() const noexcept { return data_crc32_; }
    [[nodiscard]] std::uint64_t data_offset() const noexcept { return data_offset_; }

    [[nodiscard]] Checkpoint materialize() const;

private:
    std::shared_ptr<const ByteSource> source_;
    CheckpointKind kind_ = CheckpointKind::Model;
    std::vector<TensorMeta> metas_;
    std::uint32_t data_crc32_ = 0;
    std::uint64_t data_offset_ = 0;
};

/// Serializes any checkpoint. Reads the source twice (CRC pass, then payload pass).
void write_checkpoint(const TensorSource& checkpoint, std::ostream& out);
[[nodiscard]] std::vector<std::byte> serialize_checkpoint(const TensorSource& checkpoint);

/// Writes to `path` through a temporary file and an atomic rename.
void save_checkpoint(const TensorSource& checkpoint, const std::filesystem::path& path);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Streaming DEMCKPT writer. Payloads are spooled to a scratch file beside the
/// destination while the data CRC accumulates; `finish()` emits prefix + header,
/// appends the spool in bounded chunks and renames the result into place.
class CheckpointFileWriter final : public TensorSink {
public:
    explicit CheckpointFileWriter(std::filesystem::path destination);
    ~CheckpointFileWriter() override;

    CheckpointFileWriter(const CheckpointFileWriter&) = delete;
    CheckpointFileWriter& operator=(const CheckpointFileWriter&) = delete;

    void begin(CheckpointKind kind, std::span<const TensorMeta> metas) override;
    void write(std::size_t index, std::span<const std::byte> payload) override;
    void finish() override;

private:
    std::filesystem::path destination_;
    std::filesystem::path spool_path_;
    std::ofstream spool_;
    Crc32 crc_;
    CheckpointKind kind_ = CheckpointKind::Model;
    std::vector<TensorMeta> metas_;
    std::size_t next_ = 0;
};

} // namespace demerge
