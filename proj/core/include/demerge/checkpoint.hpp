#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "demerge/tensor.hpp"

namespace demerge {

/// Model checkpoints hold parameters; Delta checkpoints hold a distribution
/// vector (fine-tuned minus base).
enum class CheckpointKind : std::uint8_t { Model, Delta };

[[nodiscard]] std::string_view kind_name(CheckpointKind kind) noexcept;
[[nodiscard]] std::optional<CheckpointKind> parse_kind(std::string_view name) noexcept;

/// Read-only, random-access view of a checkpoint. Metas are sorted byte-wise
/// by name with contiguous offsets. Implementations must allow concurrent
/// `read_into` calls from several threads.
class TensorSource {
public:
    virtual ~TensorSource() = default;

    [[nodiscard]] virtual CheckpointKind kind() const = 0;
    [[nodiscard]] virtual std::span<const TensorMeta> metas() const = 0;

    /// Copies the payload of tensor `index` into `out` (`out.size()` == byte_length).
    virtual void read_into(std::size_t index, std::span<std::byte> out) const = 0;

    [[nodiscard]] std::vector<std::byte> read_bytes(std::size_t index) const;
    [[nodiscard]] std::vector<double> read_f64(std::size_t index) const;

    /// Reads tensor `index` widened to doubles, reusing the caller's buffers.
    void read_f64_into(std::size_t index, std::vector<double>& out, std::vector<std::byte>& scratch) const;

    [[nodiscard]] std::optional<std::size_t> find(std::string_view name) const;
    [[nodiscard]] std::uint64_t data_size() const;
    [[nodiscard]] std::uint64_t total_elements() const;
    [[nodiscard]] std::uint64_t largest_tensor_bytes() const;
};

/// Consumer of a checkpoint produced one tensor at a time, in index order.
class TensorSink {
public:
    virtual ~TensorSink() = default;
    virtual void begin(CheckpointKind kind, std::span<const TensorMeta> metas) = 0;
    virtual void write(std::size_t index, std::span<const std::byte> payload) = 0;
    virtual void finish() = 0;
};

/// Sorts metas by name, assigns contiguous offsets and lengths from dtype and
/// shape. Throws FormatError on duplicate or empty names.
[[nodiscard]] std::vector<TensorMeta> canonical_layout(std::vector<TensorMeta> metas);

/// Checks the layout invariants of an already ordered index. Throws FormatError.
void validate_layout(std::span<const TensorMeta> metas);

/// In-memory checkpoint with a contiguous data section.
class Checkpoint final : public TensorSource {
public:
    Checkpoint() = default;
    explicit Checkpoint(CheckpointKind kind) : kind_(kind) {}

    /// Builds a checkpoint from an already canonical index and its data section.
    Checkpoint(CheckpointKind kind, std::vector<TensorMeta> metas, std::vector<std::byte> data);

    [[nodiscard]] CheckpointKind kind() const override { return kind_; }
    [[nodiscard]] std::span<const TensorMeta> metas() const override { return metas_; }
    void read_into(std::size_t index, std::span<std::byte> out) const override;

    void set_kind(CheckpointKind kind) noexcept { kind_ = kind; }

    /// Inserts a tensor at its sorted position. Throws FormatError on a
    /// duplicate name or a payload whose size does not match dtype x shape.
    void add(std::string name, DType dtype, Shape shape, std::span<const std::byte> payload);

    /// Same as `add`, encoding `values` into `dtype`.
    void add_values(std::string name, DType dtype, Shape shape, std::span<const double> values);

    [[nodiscard]] std::span<const std::byte> data() const noexcept { return data_; }
    [[nodiscard]] std::span<const std::byte> payload(std::size_t index) const;
    [[nodiscard]] std::vector<double> values(std::string_view name) const;

    friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
        return a.kind_ == b.kind_ && a.metas_ == b.metas_ && a.data_ == b.data_;
    }

private:
    CheckpointKind kind_ = CheckpointKind::Model;
    std::vector<TensorMeta> metas_;
    std::vector<std::byte> data_;
};

/// Sink that assembles an in-memory Checkpoint.
class CheckpointBuilder final : public TensorSink {
public:
    void begin(CheckpointKind kind, std::span<const TensorMeta> metas) override;
    void write(std::size_t index, std::span<const std::byte> payload) override;
    void finish() override;

    /// Returns the finished checkpoint. Only valid after `finish()`.
    [[nodiscard]] Checkpoint take();

private:
    CheckpointKind kind_ = CheckpointKind::Model;
    std::vector<TensorMeta> metas_;
    std::vector<std::byte> data_;
    std::size_t next_ = 0;
    bool finished_ = false;
};

/// Succeeds iff both sides carry the same (name, dtype, shape) set; otherwise
/// throws CompatibilityError listing every offending tensor name.
void check_compatibility(const TensorSource& a, const TensorSource& b);

/// Resource accounting for a streaming pass.
struct StreamStats {
    std::size_t tensors = 0;
    std::uint64_t elements = 0;
    /// Largest number of payload/accumulator bytes resident at once.
    std::size_t peak_buffer_bytes = 0;
};

/// Streams every tensor of `source` into `sink` through a single reusable buffer.
StreamStats copy_checkpoint(const TensorSource& source, TensorSink& sink);

} // namespace demerge
