#pragma once

#include <span>
#include <string>
#include <vector>

#include "demerge/checkpoint.hpp"
#include "demerge/weight_config.hpp"

namespace demerge {

/// A checkpoint tagged with the label its weight is looked up by.
struct LabeledSource {
    std::string label;
    const TensorSource& source;
};

// All operations stream tensor by tensor in canonical name order. For each
// tensor at most one base/model payload, one distribution-vector payload and
// one double accumulator are resident. Sums run in double precision in
// weight-entry order and are cast back to the tensor's dtype once.

/// Distribution vector: finetuned - base, element-wise in the tensor's dtype.
/// Both inputs must be Model checkpoints; the output is a Delta.
StreamStats extract_dv(const TensorSource& base, const TensorSource& finetuned, TensorSink& out);
[[nodiscard]] Checkpoint extract_dv(const TensorSource& base, const TensorSource& finetuned);

/// Distribution edited model: base + sum_i w_i * dv_i. Weights are matched to
/// `dvs` by label; entries with weight 0 contribute nothing, so an all-zero
/// config reproduces `base` bit for bit.
StreamStats compose_dem(const TensorSource& base, std::span<const LabeledSource> dvs, const WeightConfig& weights,
                        TensorSink& out);
[[nodiscard]] Checkpoint compose_dem(const TensorSource& base, std::span<const LabeledSource> dvs,
                                     const WeightConfig& weights);

/// Weighted average of fine-tuned models: sum_i w_i * model_i with sum_i w_i = 1.
StreamStats interpolate(std::span<const LabeledSource> models, const WeightConfig& weights, TensorSink& out);
[[nodiscard]] Checkpoint interpolate(std::span<const LabeledSource> models, const WeightConfig& weights);

/// Largest element-wise |interpolate(models) - compose_dem(base, models - base)|
/// over all tensors, both routes stored in the tensors' dtype. Requires the
/// weights to sum to one (ConfigError otherwise).
[[nodiscard]] double equivalence_check(const TensorSource& base, std::span<const LabeledSource> models,
                                       const WeightConfig& weights);

} // namespace demerge
