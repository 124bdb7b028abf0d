#include "demerge/vector_arith.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <fmt/core.h>

#include "demerge/errors.hpp"

namespace demerge {
namespace {

template <typename T>
T load(const std::byte* p) noexcept {
    T value;
    std::memcpy(&value, p, sizeof(T));
    return value;
}

template <typename T>
void store(std::byte* p, T value) noexcept {
    std::memcpy(p, &value, sizeof(T));
}

// acc[j] (+)= weight * payload[j]
template <bool Assign>
void scale_into(DType dtype, std::span<const std::byte> payload, double weight, std::span<double> acc) {
    const std::byte* src = payload.data();
    if (dtype == DType::F32) {
        for (std::size_t j = 0; j < acc.size(); ++j, src += 4) {
            const double term = weight * static_cast<double>(load<float>(src));
            if constexpr (Assign) acc[j] = term; else acc[j] += term;
        }
    } else {
        for (std::size_t j = 0; j < acc.size(); ++j, src += 8) {
            const double term = weight * load<double>(src);
            if constexpr (Assign) acc[j] = term; else acc[j] += term;
        }
    }
}

template <typename T>
std::optional<std::size_t> subtract_typed(std::span<const std::byte> lhs, std::span<const std::byte> rhs,
                                          std::span<std::byte> out) {
    std::optional<std::size_t> bad;
    const std::size_t n = out.size() / sizeof(T);
    for (std::size_t j = 0; j < n; ++j) {
        const T diff = load<T>(lhs.data() + j * sizeof(T)) - load<T>(rhs.data() + j * sizeof(T));
        if (!bad && !std::isfinite(diff)) bad = j;
        store<T>(out.data() + j * sizeof(T), diff);
    }
    return bad;
}

// out = lhs - rhs in the payload dtype; returns the first non-finite index.
std::optional<std::size_t> subtract(DType dtype, std::span<const std::byte> lhs, std::span<const std::byte> rhs,
                                    std::span<std::byte> out) {
    return dtype == DType::F32 ? subtract_typed<float>(lhs, rhs, out) : subtract_typed<double>(lhs, rhs, out);
}

void encode_checked(const TensorMeta& meta, std::span<const double> acc, std::span<std::byte> out) {
    if (auto bad = encode_f64(meta.dtype, acc, out)) {
        throw NumericsError(fmt::format("tensor '{}' element {} is not finite after cast to {}", meta.name, *bad,
                                        dtype_name(meta.dtype)));
    }
}

void require_kind(const TensorSource& source, CheckpointKind kind, std::string_view what) {
    if (source.kind() != kind) {
        throw ConfigError(fmt::format("{} must be a {} checkpoint, got {}", what, kind_name(kind), kind_name(source.kind())));
    }
}

// Orders `sources` by the weight entries, verifying a one-to-one label match.
std::vector<const TensorSource*> align(std::span<const LabeledSource> sources, const WeightConfig& weights,
                                       std::string_view what) {
    std::set<std::string_view> labels;
    for (const auto& s : sources) {
        if (!labels.insert(s.label).second) throw ConfigError(fmt::format("duplicate {} label '{}'", what, s.label));
        if (!weights.find(s.label)) throw ConfigError(fmt::format("{} '{}' has no weight", what, s.label));
    }
    std::vector<const TensorSource*> ordered;
    ordered.reserve(weights.entries.size());
    for (const auto& e : weights.entries) {
        auto it = std::find_if(sources.begin(), sources.end(), [&](const auto& s) { return s.label == e.label; });
        if (it == sources.end()) throw ConfigError(fmt::format("weight '{}' has no matching {}", e.label, what));
        ordered.push_back(&it->source);
    }
    return ordered;
}

struct Meter {
    StreamStats stats;
    void sample(const TensorMeta& meta, std::initializer_list<std::size_t> capacities) {
        std::size_t resident = 0;
        for (auto c : capacities) resident += c;
        stats.peak_buffer_bytes = std::max(stats.peak_buffer_bytes, resident);
        stats.elements += meta.elements();
        ++stats.tensors;
    }
};

} // namespace

StreamStats extract_dv(const TensorSource& base, const TensorSource& finetuned, TensorSink& out) {
    require_kind(base, CheckpointKind::Model, "base");
    require_kind(finetuned, CheckpointKind::Model, "fine-tuned checkpoint");
    check_compatibility(base, finetuned);

    const auto metas = base.metas();
    out.begin(CheckpointKind::Delta, metas);
    Meter meter;
    std::vector<std::byte> base_buf;
    std::vector<std::byte> tuned_buf;
    base_buf.reserve(base.largest_tensor_bytes());
    tuned_buf.reserve(base.largest_tensor_bytes());
    for (std::size_t i = 0; i < metas.size(); ++i) {
        const auto& meta = metas[i];
        base_buf.resize(meta.byte_length);
        tuned_buf.resize(meta.byte_length);
        base.read_into(i, base_buf);
        finetuned.read_into(i, tuned_buf);
        if (auto bad = subtract(meta.dtype, tuned_buf, base_buf, tuned_buf)) {
            throw NumericsError(fmt::format("tensor '{}' element {} of the distribution vector is not finite", meta.name, *bad));
        }
        out.write(i, tuned_buf);
        meter.sample(meta, {base_buf.capacity(), tuned_buf.capacity()});
    }
    out.finish();
    return meter.stats;
}

Checkpoint extract_dv(const TensorSource& base, const TensorSource& finetuned) {
    CheckpointBuilder builder;
    extract_dv(base, finetuned, builder);
    return builder.take();
}

StreamStats compose_dem(const TensorSource& base, std::span<const LabeledSource> dvs, const WeightConfig& weights,
                        TensorSink& out) {
    weights.validate();
    require_kind(base, CheckpointKind::Model, "base");
    for (const auto& dv : dvs) {
        require_kind(dv.source, CheckpointKind::Delta, fmt::format("distribution vector '{}'", dv.label));
    }
    const auto ordered = align(dvs, weights, "distribution vector");
    for (const auto* dv : ordered) check_compatibility(base, *dv);

    const auto metas = base.metas();
    out.begin(CheckpointKind::Model, metas);
    Meter meter;
    std::vector<std::byte> base_buf;
    std::vector<std::byte> dv_buf;
    std::vector<double> acc;
    base_buf.reserve(base.largest_tensor_bytes());
    dv_buf.reserve(base.largest_tensor_bytes());
    for (std::size_t i = 0; i < metas.size(); ++i) {
        const auto& meta = metas[i];
        base_buf.resize(meta.byte_length);
        base.read_into(i, base_buf);
        acc.resize(meta.elements());
        decode_f64(meta.dtype, base_buf, acc);
        for (std::size_t k = 0; k < ordered.size(); ++k) {
            const double w = weights.entries[k].weight;
            if (w == 0.0) continue;
            dv_buf.resize(meta.byte_length);
            ordered[k]->read_into(i, dv_buf);
            scale_into<false>(meta.dtype, dv_buf, w, acc);
        }
        encode_checked(meta, acc, base_buf);
        out.write(i, base_buf);
        meter.sample(meta, {base_buf.capacity(), dv_buf.capacity(), acc.capacity() * sizeof(double)});
    }
    out.finish();
    return meter.stats;
}

Checkpoint compose_dem(const TensorSource& base, std::span<const LabeledSource> dvs, const WeightConfig& weights) {
    CheckpointBuilder builder;
    compose_dem(base, dvs, weights, builder);
    return builder.take();
}

StreamStats interpolate(std::span<const LabeledSource> models, const WeightConfig& weights, TensorSink& out) {
    if (weights.mode != WeightMode::Interpolation) throw ConfigError("interpolation needs weights in \"interpolation\" mode");
    weights.validate();
    for (const auto& m : models) require_kind(m.source, CheckpointKind::Model, fmt::format("model '{}'", m.label));
    const auto ordered = align(models, weights, "model");
    for (std::size_t k = 1; k < ordered.size(); ++k) check_compatibility(*ordered.front(), *ordered[k]);

    const auto& first = *ordered.front();
    const auto metas = first.metas();
    out.begin(CheckpointKind::Model, metas);
    Meter meter;
    std::vector<std::byte> model_buf;
    std::vector<double> acc;
    model_buf.reserve(first.largest_tensor_bytes());
    for (std::size_t i = 0; i < metas.size(); ++i) {
        const auto& meta = metas[i];
        model_buf.resize(meta.byte_length);
        acc.resize(meta.elements());
        for (std::size_t k = 0; k < ordered.size(); ++k) {
            ordered[k]->read_into(i, model_buf);
            if (k == 0) {
                scale_into<true>(meta.dtype, model_buf, weights.entries[k].weight, acc);
            } else {
                scale_into<false>(meta.dtype, model_buf, weights.entries[k].weight, acc);
            }
        }
        encode_checked(meta, acc, model_buf);
        out.write(i, model_buf);
        meter.sample(meta, {model_buf.capacity(), acc.capacity() * sizeof(double)});
    }
    out.finish();
    return meter.stats;
}

Checkpoint interpolate(std::span<const LabeledSource> models, const WeightConfig& weights) {
    CheckpointBuilder builder;
    interpolate(models, weights, builder);
    return builder.take();
}

double equivalence_check(const TensorSource& base, std::span<const LabeledSource> models, const WeightConfig& weights) {
    WeightConfig constrained = weights;
    constrained.mode = WeightMode::Interpolation;
    constrained.validate();
    require_kind(base, CheckpointKind::Model, "base");
    for (const auto& m : models) require_kind(m.source, CheckpointKind::Model, fmt::format("model '{}'", m.label));
    const auto ordered = align(models, constrained, "model");
    for (const auto* m : ordered) check_compatibility(base, *m);

    const auto metas = base.metas();
    std::vector<std::byte> base_buf;
    std::vector<std::byte> model_buf;
    std::vector<std::byte> dv_buf;
    std::vector<double> interp_acc;
    std::vector<double> dem_acc;
    std::vector<double> interp_cast;
    double max_diff = 0.0;
    for (std::size_t i = 0; i < metas.size(); ++i) {
        const auto& meta = metas[i];
        const auto n = meta.elements();
        base_buf.resize(meta.byte_length);
        model_buf.resize(meta.byte_length);
        dv_buf.resize(meta.byte_length);
        interp_acc.resize(n);
        dem_acc.resize(n);
        base.read_into(i, base_buf);
        decode_f64(meta.dtype, base_buf, dem_acc);
        for (std::size_t k = 0; k < ordered.size(); ++k) {
            const double w = constrained.entries[k].weight;
            ordered[k]->read_into(i, model_buf);
            if (k == 0) {
                scale_into<true>(meta.dtype, model_buf, w, interp_acc);
            } else {
                scale_into<false>(meta.dtype, model_buf, w, interp_acc);
            }
            if (auto bad = subtract(meta.dtype, model_buf, base_buf, dv_buf)) {
                throw NumericsError(fmt::format("tensor '{}' element {} of the distribution vector is not finite", meta.name, *bad));
            }
            if (w != 0.0) scale_into<false>(meta.dtype, dv_buf, w, dem_acc);
        }
        // Round both routes through the storage dtype before comparing.
        encode_checked(meta, interp_acc, model_buf);
        encode_checked(meta, dem_acc, dv_buf);
        interp_cast.resize(n);
        decode_f64(meta.dtype, model_buf, interp_cast);
        decode_f64(meta.dtype, dv_buf, dem_acc);
        for (std::size_t j = 0; j < n; ++j) max_diff = std::max(max_diff, std::abs(interp_cast[j] - dem_acc[j]));
    }
    return max_diff;
}

} // namespace demerge
