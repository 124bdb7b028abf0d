#include "demerge/format.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <ostream>
#include <sstream>
#include <system_error>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "demerge/errors.hpp"

namespace demerge {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kChunkBytes = std::size_t{1} << 20;

class FileByteSource final : public ByteSource {
public:
    explicit FileByteSource(const std::filesystem::path& path) : path_(path.string()) {
        fd_ = ::open(path_.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd_ < 0) throw IoError(fmt::format("cannot open '{}': {}", path_, std::strerror(errno)));
        struct stat st {};
        if (::fstat(fd_, &st) != 0) {
            ::close(fd_);
            throw IoError(fmt::format("cannot stat '{}': {}", path_, std::strerror(errno)));
        }
        size_ = static_cast<std::uint64_t>(st.st_size);
    }
    ~FileByteSource() override { ::close(fd_); }

    FileByteSource(const FileByteSource&) = delete;
    FileByteSource& operator=(const FileByteSource&) = delete;

    std::uint64_t size() const override { return size_; }

    void read_at(std::uint64_t offset, std::span<std::byte> out) const override {
        if (offset > size_ || out.size() > size_ - offset) {
            throw FormatError(fmt::format("'{}': read of {} bytes at {} runs past end of file", path_, out.size(), offset));
        }
        std::size_t done = 0;
        while (done < out.size()) {
            const auto n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError(fmt::format("read of '{}' failed: {}", path_, std::strerror(errno)));
            }
            if (n == 0) throw FormatError(fmt::format("'{}' truncated while reading", path_));
            done += static_cast<std::size_t>(n);
        }
    }

private:
    std::string path_;
    int fd_ = -1;
    std::uint64_t size_ = 0;
};

class MemoryByteSource final : public ByteSource {
public:
    explicit MemoryByteSource(std::vector<std::byte> bytes) : bytes_(std::move(bytes)) {}

    std::uint64_t size() const override { return bytes_.size(); }

    void read_at(std::uint64_t offset, std::span<std::byte> out) const override {
        if (offset > bytes_.size() || out.size() > bytes_.size() - offset) {
            throw FormatError(fmt::format("read of {} bytes at {} runs past end of buffer", out.size(), offset));
        }
        std::memcpy(out.data(), bytes_.data() + offset, out.size());
    }

private:
    std::vector<std::byte> bytes_;
};

ordered_json index_json(CheckpointKind kind, std::span<const TensorMeta> metas, std::uint32_t data_crc32) {
    auto tensors = ordered_json::array();
    for (const auto& m : metas) {
        ordered_json entry;
        entry["name"] = m.name;
        entry["dtype"] = dtype_name(m.dtype);
        entry["shape"] = m.shape;
        entry["offset"] = m.byte_offset;
        entry["length"] = m.byte_length;
        tensors.push_back(std::move(entry));
    }
    ordered_json header;
    header["tensors"] = std::move(tensors);
    header["data_crc32"] = data_crc32;
    header["kind"] = kind_name(kind);
    return header;
}

std::string dump_canonical(const ordered_json& j) {
    try {
        return j.dump();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("header is not valid UTF-8 JSON: {}", e.what()));
    }
}

std::string encode_header_with(CheckpointKind kind, std::span<const TensorMeta> metas, std::uint32_t data_crc32,
                               std::uint32_t index_crc32) {
    auto header = index_json(kind, metas, data_crc32);
    header["index_crc32"] = index_crc32;
    return dump_canonical(header);
}

std::uint32_t index_checksum(CheckpointKind kind, std::span<const TensorMeta> metas, std::uint32_t data_crc32) {
    return Crc32::of(dump_canonical(index_json(kind, metas, data_crc32)));
}

std::uint64_t require_unsigned(const ordered_json& j, std::string_view what) {
    if (!j.is_number_unsigned()) throw FormatError(fmt::format("header field {} must be a non-negative integer", what));
    return j.get<std::uint64_t>();
}

std::uint32_t require_u32(const ordered_json& j, std::string_view what) {
    const auto value = require_unsigned(j, what);
    if (value > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError(fmt::format("header field {} exceeds 32 bits", what));
    }
    return static_cast<std::uint32_t>(value);
}

const ordered_json& require_field(const ordered_json& object, const char* key) {
    auto it = object.find(key);
    if (it == object.end()) throw FormatError(fmt::format("header is missing field '{}'", key));
    return *it;
}

std::uint32_t data_checksum(const TensorSource& source) {
    if (const auto* in_memory = dynamic_cast<const Checkpoint*>(&source)) {
        return Crc32::of(in_memory->data());
    }
    Crc32 crc;
    std::vector<std::byte> buffer;
    for (std::size_t i = 0; i < source.metas().size(); ++i) {
        buffer.resize(source.metas()[i].byte_length);
        source.read_into(i, buffer);
        crc.update(buffer);
    }
    return crc.value();
}

} // namespace

std::shared_ptr<const ByteSource> open_file_source(const std::filesystem::path& path) {
    return std::make_shared<FileByteSource>(path);
}

std::shared_ptr<const ByteSource> memory_source(std::vector<std::byte> bytes) {
    return std::make_shared<MemoryByteSource>(std::move(bytes));
}

std::string encode_header(CheckpointKind kind, std::span<const TensorMeta> metas, std::uint32_t data_crc32) {
    return encode_header_with(kind, metas, data_crc32, index_checksum(kind, metas, data_crc32));
}

std::array<std::byte, kPrefixSize> encode_prefix(std::uint64_t header_length) {
    std::array<std::byte, kPrefixSize> prefix{};
    std::memcpy(prefix.data(), kMagic.data(), kMagic.size());
    const std::uint32_t version = kFormatVersion;
    std::memcpy(prefix.data() + 8, &version, sizeof(version));
    std::memcpy(prefix.data() + 12, &header_length, sizeof(header_length));
    return prefix;
}

// --- reader ---------------------------------------------------------------

CheckpointReader::CheckpointReader(std::shared_ptr<const ByteSource> source) : source_(std::move(source)) {
    const auto file_size = source_->size();
    if (file_size < kPrefixSize) throw FormatError(fmt::format("file of {} bytes is shorter than the prefix", file_size));

    std::array<std::byte, kPrefixSize> prefix{};
    source_->read_at(0, prefix);
    if (std::memcmp(prefix.data(), kMagic.data(), kMagic.size()) != 0) throw FormatError("bad magic");
    std::uint32_t version = 0;
    std::memcpy(&version, prefix.data() + 8, sizeof(version));
    if (version != kFormatVersion) throw FormatError(fmt::format("unsupported format version {}", version));
    std::uint64_t header_length = 0;
    std::memcpy(&header_length, prefix.data() + 12, sizeof(header_length));
    if (header_length > file_size - kPrefixSize) {
        throw FormatError(fmt::format("header length {} exceeds file size {}", header_length, file_size));
    }

    std::string header_text(header_length, '\0');
    source_->read_at(kPrefixSize, std::as_writable_bytes(std::span(header_text)));

    ordered_json header;
    try {
        header = ordered_json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("header is not valid JSON: {}", e.what()));
    }
    if (!header.is_object()) throw FormatError("header must be a JSON object");

    const auto& tensors = require_field(header, "tensors");
    if (!tensors.is_array()) throw FormatError("header field tensors must be an array");
    metas_.reserve(tensors.size());
    for (const auto& entry : tensors) {
        if (!entry.is_object()) throw FormatError("tensor entry must be an object");
        TensorMeta meta;
        const auto& name = require_field(entry, "name");
        if (!name.is_string()) throw FormatError("tensor name must be a string");
        meta.name = name.get<std::string>();
        const auto& dtype = require_field(entry, "dtype");
        const auto parsed_dtype = dtype.is_string() ? parse_dtype(dtype.get<std::string>()) : std::nullopt;
        if (!parsed_dtype) throw FormatError(fmt::format("tensor '{}' has an unsupported dtype", meta.name));
        meta.dtype = *parsed_dtype;
        const auto& shape = require_field(entry, "shape");
        if (!shape.is_array()) throw FormatError(fmt::format("tensor '{}' shape must be an array", meta.name));
        for (const auto& dim : shape) meta.shape.push_back(require_unsigned(dim, "shape"));
        meta.byte_offset = require_unsigned(require_field(entry, "offset"), "offset");
        meta.byte_length = require_unsigned(require_field(entry, "length"), "length");
        metas_.push_back(std::move(meta));
    }
    data_crc32_ = require_u32(require_field(header, "data_crc32"), "data_crc32");
    const auto& kind = require_field(header, "kind");
    const auto parsed_kind = kind.is_string() ? parse_kind(kind.get<std::string>()) : std::nullopt;
    if (!parsed_kind) throw FormatError("header kind must be \"model\" or \"delta\"");
    kind_ = *parsed_kind;
    const auto stored_index_crc = require_u32(require_field(header, "index_crc32"), "index_crc32");

    validate_layout(metas_);
    if (encode_header_with(kind_, metas_, data_crc32_, stored_index_crc) != header_text) {
        throw FormatError("header is not in canonical form");
    }
    if (index_checksum(kind_, metas_, data_crc32_) != stored_index_crc) {
        throw IntegrityError("index checksum mismatch");
    }

    data_offset_ = kPrefixSize + header_length;
    const std::uint64_t declared = metas_.empty() ? 0 : metas_.back().byte_offset + metas_.back().byte_length;
    const std::uint64_t available = file_size - data_offset_;
    if (declared > available) {
        throw FormatError(fmt::format("data section truncated: index declares {} bytes, file holds {}", declared, available));
    }
    if (declared < available) {
        throw FormatError(fmt::format("{} trailing bytes after the data section", available - declared));
    }

    Crc32 crc;
    std::vector<std::byte> chunk(std::min<std::uint64_t>(declared, kChunkBytes));
    for (std::uint64_t pos = 0; pos < declared;) {
        const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(chunk.size(), declared - pos));
        source_->read_at(data_offset_ + pos, std::span(chunk).first(n));
        crc.update(std::span(chunk).first(n));
        pos += n;
    }
    if (crc.value() != data_crc32_) {
        throw IntegrityError(fmt::format("data checksum mismatch: stored {:#010x}, computed {:#010x}", data_crc32_, crc.value()));
    }
}

CheckpointReader CheckpointReader::open(const std::filesystem::path& path) {
    return CheckpointReader(open_file_source(path));
}

CheckpointReader CheckpointReader::from_bytes(std::vector<std::byte> bytes) {
    return CheckpointReader(memory_source(std::move(bytes)));
}

void CheckpointReader::read_into(std::size_t index, std::span<std::byte> out) const {
    const auto& meta = metas_.at(index);
    if (out.size() != meta.byte_length) {
        throw FormatError(fmt::format("read buffer for '{}' has {} bytes, need {}", meta.name, out.size(), meta.byte_length));
    }
    source_->read_at(data_offset_ + meta.byte_offset, out);
}

Checkpoint CheckpointReader::materialize() const {
    std::vector<std::byte> data(data_size());
    source_->read_at(data_offset_, data);
    return Checkpoint(kind_, metas_, std::move(data));
}

// --- writers --------------------------------------------------------------

void write_checkpoint(const TensorSource& checkpoint, std::ostream& out) {
    const auto metas = checkpoint.metas();
    validate_layout(metas);
    const auto header = encode_header(checkpoint.kind(), metas, data_checksum(checkpoint));
    const auto prefix = encode_prefix(header.size());
    out.write(reinterpret_cast<const char*>(prefix.data()), prefix.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    if (const auto* in_memory = dynamic_cast<const Checkpoint*>(&checkpoint)) {
        const auto data = in_memory->data();
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    } else {
        std::vector<std::byte> buffer;
        for (std::size_t i = 0; i < metas.size(); ++i) {
            buffer.resize(metas[i].byte_length);
            checkpoint.read_into(i, buffer);
            out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
        }
    }
    if (!out) throw IoError("checkpoint write failed");
}

std::vector<std::byte> serialize_checkpoint(const TensorSource& checkpoint) {
    std::ostringstream out(std::ios::binary);
    write_checkpoint(checkpoint, out);
    const auto text = std::move(out).str();
    const auto bytes = std::as_bytes(std::span(text));
    return {bytes.begin(), bytes.end()};
}

void save_checkpoint(const TensorSource& checkpoint, const std::filesystem::path& path) {
    AtomicFile file(path);
    write_checkpoint(checkpoint, file.stream());
    file.commit();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return CheckpointReader::open(path).materialize();
}

CheckpointFileWriter::CheckpointFileWriter(std::filesystem::path destination)
    : destination_(std::move(destination)) {}

CheckpointFileWriter::~CheckpointFileWriter() {
    if (!spool_path_.empty()) {
        spool_.close();
        std::error_code ignored;
        std::filesystem::remove(spool_path_, ignored);
    }
}

void CheckpointFileWriter::begin(CheckpointKind kind, std::span<const TensorMeta> metas) {
    validate_layout(metas);
    kind_ = kind;
    metas_.assign(metas.begin(), metas.end());
    next_ = 0;
    crc_ = Crc32{};
    spool_path_ = scratch_path(destination_, "spool");
    spool_.open(spool_path_, std::ios::binary | std::ios::trunc);
    if (!spool_) throw IoError(fmt::format("cannot create spool file '{}'", spool_path_.string()));
}

void CheckpointFileWriter::write(std::size_t index, std::span<const std::byte> payload) {
    if (index != next_ || index >= metas_.size()) {
        throw FormatError(fmt::format("tensor {} written out of order (expected {})", index, next_));
    }
    if (payload.size() != metas_[index].byte_length) {
        throw FormatError(fmt::format("tensor '{}' payload has {} bytes, expected {}", metas_[index].name,
                                      payload.size(), metas_[index].byte_length));
    }
    spool_.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!spool_) throw IoError(fmt::format("write to spool '{}' failed", spool_path_.string()));
    crc_.update(payload);
    ++next_;
}

void CheckpointFileWriter::finish() {
    if (spool_path_.empty()) throw FormatError("checkpoint writer finished before begin()");
    if (next_ != metas_.size()) {
        throw FormatError(fmt::format("checkpoint finished after {} of {} tensors", next_, metas_.size()));
    }
    spool_.close();
    if (!spool_) throw IoError(fmt::format("closing spool '{}' failed", spool_path_.string()));

    const auto header = encode_header(kind_, metas_, crc_.value());
    AtomicFile out(destination_);
    out.write(encode_prefix(header.size()));
    out.write(header);

    std::ifstream spool(spool_path_, std::ios::binary);
    if (!spool) throw IoError(fmt::format("cannot reopen spool '{}'", spool_path_.string()));
    std::vector<char> chunk(kChunkBytes);
    while (spool) {
        spool.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
        const auto n = spool.gcount();
        if (n > 0) out.write(std::as_bytes(std::span(chunk.data(), static_cast<std::size_t>(n))));
    }
    if (spool.bad()) throw IoError(fmt::format("read of spool '{}' failed", spool_path_.string()));
    out.commit();

    std::error_code ignored;
    std::filesystem::remove(spool_path_, ignored);
    spool_path_.clear();
}

} // namespace demerge
