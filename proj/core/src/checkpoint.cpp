#include "demerge/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include <fmt/core.h>

#include "demerge/errors.hpp"

namespace demerge {

std::string_view kind_name(CheckpointKind kind) noexcept {
    return kind == CheckpointKind::Model ? "model" : "delta";
}

std::optional<CheckpointKind> parse_kind(std::string_view name) noexcept {
    if (name == "model") return CheckpointKind::Model;
    if (name == "delta") return CheckpointKind::Delta;
    return std::nullopt;
}

// --- TensorSource ---------------------------------------------------------

std::vector<std::byte> TensorSource::read_bytes(std::size_t index) const {
    std::vector<std::byte> out(metas()[index].byte_length);
    read_into(index, out);
    return out;
}

std::vector<double> TensorSource::read_f64(std::size_t index) const {
    std::vector<double> out;
    std::vector<std::byte> scratch;
    read_f64_into(index, out, scratch);
    return out;
}

void TensorSource::read_f64_into(std::size_t index, std::vector<double>& out, std::vector<std::byte>& scratch) const {
    const auto& meta = metas()[index];
    if (meta.dtype == DType::F64) {
        out.resize(meta.elements());
        read_into(index, std::as_writable_bytes(std::span(out)));
        return;
    }
    scratch.resize(meta.byte_length);
    read_into(index, scratch);
    out.resize(meta.elements());
    decode_f64(meta.dtype, scratch, out);
}

std::optional<std::size_t> TensorSource::find(std::string_view name) const {
    const auto all = metas();
    auto it = std::lower_bound(all.begin(), all.end(), name,
                               [](const TensorMeta& m, std::string_view n) { return m.name < n; });
    if (it == all.end() || it->name != name) return std::nullopt;
    return static_cast<std::size_t>(it - all.begin());
}

std::uint64_t TensorSource::data_size() const {
    std::uint64_t total = 0;
    for (const auto& m : metas()) total += m.byte_length;
    return total;
}

std::uint64_t TensorSource::total_elements() const {
    std::uint64_t total = 0;
    for (const auto& m : metas()) total += m.elements();
    return total;
}

std::uint64_t TensorSource::largest_tensor_bytes() const {
    std::uint64_t largest = 0;
    for (const auto& m : metas()) largest = std::max(largest, m.byte_length);
    return largest;
}

// --- layout ---------------------------------------------------------------

std::vector<TensorMeta> canonical_layout(std::vector<TensorMeta> metas) {
    std::sort(metas.begin(), metas.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < metas.size(); ++i) {
        auto& m = metas[i];
        if (m.name.empty()) throw FormatError("tensor name must not be empty");
        if (i > 0 && metas[i - 1].name == m.name) {
            throw FormatError(fmt::format("duplicate tensor name '{}'", m.name));
        }
        const auto count = element_count(m.shape);
        m.byte_offset = offset;
        m.byte_length = count * dtype_size(m.dtype);
        offset += m.byte_length;
    }
    return metas;
}

void validate_layout(std::span<const TensorMeta> metas) {
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < metas.size(); ++i) {
        const auto& m = metas[i];
        if (m.name.empty()) throw FormatError("tensor name must not be empty");
        if (i > 0 && !(metas[i - 1].name < m.name)) {
            throw FormatError(fmt::format("index not strictly sorted by name at '{}'", m.name));
        }
        const auto count = element_count(m.shape);
        if (count > UINT64_MAX / dtype_size(m.dtype) || m.byte_length != count * dtype_size(m.dtype)) {
            throw FormatError(fmt::format("tensor '{}' length {} does not match dtype and shape", m.name, m.byte_length));
        }
        if (m.byte_offset != expected_offset) {
            throw FormatError(fmt::format("tensor '{}' offset {} leaves a gap or overlap (expected {})", m.name,
                                          m.byte_offset, expected_offset));
        }
        if (m.byte_length > UINT64_MAX - expected_offset) throw FormatError("data section size overflows 64 bits");
        expected_offset += m.byte_length;
    }
}

// --- Checkpoint -----------------------------------------------------------

Checkpoint::Checkpoint(CheckpointKind kind, std::vector<TensorMeta> metas, std::vector<std::byte> data)
    : kind_(kind), metas_(std::move(metas)), data_(std::move(data)) {
    validate_layout(metas_);
    const std::uint64_t expected = metas_.empty() ? 0 : metas_.back().byte_offset + metas_.back().byte_length;
    if (expected != data_.size()) {
        throw FormatError(fmt::format("data section is {} bytes but the index describes {}", data_.size(), expected));
    }
}

void Checkpoint::read_into(std::size_t index, std::span<std::byte> out) const {
    const auto bytes = payload(index);
    if (out.size() != bytes.size()) {
        throw FormatError(fmt::format("read buffer for '{}' has {} bytes, need {}", metas_[index].name, out.size(),
                                      bytes.size()));
    }
    std::memcpy(out.data(), bytes.data(), bytes.size());
}

std::span<const std::byte> Checkpoint::payload(std::size_t index) const {
    const auto& m = metas_.at(index);
    return std::span(data_).subspan(m.byte_offset, m.byte_length);
}

std::vector<double> Checkpoint::values(std::string_view name) const {
    auto index = find(name);
    if (!index) throw FormatError(fmt::format("no tensor named '{}'", name));
    return read_f64(*index);
}

void Checkpoint::add(std::string name, DType dtype, Shape shape, std::span<const std::byte> payload) {
    if (name.empty()) throw FormatError("tensor name must not be empty");
    const auto count = element_count(shape);
    const auto length = count * dtype_size(dtype);
    if (payload.size() != length) {
        throw FormatError(fmt::format("tensor '{}' payload has {} bytes, dtype x shape needs {}", name,
                                      payload.size(), length));
    }
    auto it = std::lower_bound(metas_.begin(), metas_.end(), name,
                               [](const TensorMeta& m, const std::string& n) { return m.name < n; });
    if (it != metas_.end() && it->name == name) {
        throw FormatError(fmt::format("duplicate tensor name '{}'", name));
    }
    const std::uint64_t offset = it == metas_.end() ? data_.size() : it->byte_offset;
    data_.insert(data_.begin() + static_cast<std::ptrdiff_t>(offset), payload.begin(), payload.end());
    auto inserted = metas_.insert(it, TensorMeta{std::move(name), dtype, std::move(shape), offset, length});
    for (auto later = inserted + 1; later != metas_.end(); ++later) later->byte_offset += length;
}

void Checkpoint::add_values(std::string name, DType dtype, Shape shape, std::span<const double> values) {
    std::vector<std::byte> payload(values.size() * dtype_size(dtype));
    if (auto bad = encode_f64(dtype, values, payload)) {
        throw NumericsError(fmt::format("tensor '{}' element {} is not finite in {}", name, *bad, dtype_name(dtype)));
    }
    add(std::move(name), dtype, std::move(shape), payload);
}

// --- CheckpointBuilder ----------------------------------------------------

void CheckpointBuilder::begin(CheckpointKind kind, std::span<const TensorMeta> metas) {
    kind_ = kind;
    metas_.assign(metas.begin(), metas.end());
    validate_layout(metas_);
    data_.clear();
    data_.reserve(metas_.empty() ? 0 : metas_.back().byte_offset + metas_.back().byte_length);
    next_ = 0;
    finished_ = false;
}

void CheckpointBuilder::write(std::size_t index, std::span<const std::byte> payload) {
    if (index != next_ || index >= metas_.size()) {
        throw FormatError(fmt::format("tensor {} written out of order (expected {})", index, next_));
    }
    if (payload.size() != metas_[index].byte_length) {
        throw FormatError(fmt::format("tensor '{}' payload has {} bytes, expected {}", metas_[index].name,
                                      payload.size(), metas_[index].byte_length));
    }
    data_.insert(data_.end(), payload.begin(), payload.end());
    ++next_;
}

void CheckpointBuilder::finish() {
    if (next_ != metas_.size()) {
        throw FormatError(fmt::format("checkpoint finished after {} of {} tensors", next_, metas_.size()));
    }
    finished_ = true;
}

Checkpoint CheckpointBuilder::take() {
    if (!finished_) throw FormatError("checkpoint builder taken before finish()");
    finished_ = false;
    next_ = 0;
    return Checkpoint(kind_, std::move(metas_), std::move(data_));
}

// --- compatibility & copy -------------------------------------------------

void check_compatibility(const TensorSource& a, const TensorSource& b) {
    const auto ma = a.metas();
    const auto mb = b.metas();
    std::vector<std::string> mismatched;
    std::string detail;
    auto note = [&](const std::string& name, std::string_view why) {
        mismatched.push_back(name);
        if (!detail.empty()) detail += "; ";
        detail += fmt::format("'{}' {}", name, why);
    };
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < ma.size() || j < mb.size()) {
        if (j == mb.size() || (i < ma.size() && ma[i].name < mb[j].name)) {
            note(ma[i++].name, "missing from second checkpoint");
        } else if (i == ma.size() || mb[j].name < ma[i].name) {
            note(mb[j++].name, "missing from first checkpoint");
        } else {
            if (ma[i].dtype != mb[j].dtype) {
                note(ma[i].name, "dtype differs");
            } else if (ma[i].shape != mb[j].shape) {
                note(ma[i].name, "shape differs");
            }
            ++i;
            ++j;
        }
    }
    if (!mismatched.empty()) {
        throw CompatibilityError(fmt::format("incompatible checkpoints: {}", detail), std::move(mismatched));
    }
}

StreamStats copy_checkpoint(const TensorSource& source, TensorSink& sink) {
    StreamStats stats;
    const auto metas = source.metas();
    sink.begin(source.kind(), metas);
    std::vector<std::byte> buffer;
    buffer.reserve(source.largest_tensor_bytes());
    for (std::size_t i = 0; i < metas.size(); ++i) {
        buffer.resize(metas[i].byte_length);
        source.read_into(i, buffer);
        sink.write(i, buffer);
        stats.peak_buffer_bytes = std::max(stats.peak_buffer_bytes, buffer.capacity());
        stats.elements += metas[i].elements();
        ++stats.tensors;
    }
    sink.finish();
    return stats;
}

} // namespace demerge
