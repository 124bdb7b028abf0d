#pragma once

#include <cstdint>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "demerge/checkpoint.hpp"
#include "demerge/vector_arith.hpp"
#include "demerge/weight_config.hpp"

namespace demerge {

/// A checkpoint seen as one long vector: tensors in canonical name order,
/// row-major within each tensor. Compatible checkpoints give index-aligned views.
class FlatView {
public:
    explicit FlatView(const TensorSource& source) : source_(&source) {}

    [[nodiscard]] std::uint64_t length() const { return source_->total_elements(); }
    [[nodiscard]] std::size_t chunks() const { return source_->metas().size(); }

    /// Elements of tensor `index`, i.e. the slice [offset(index), offset(index+1)).
    void read_chunk(std::size_t index, std::vector<double>& out, std::vector<std::byte>& scratch) const {
        source_->read_f64_into(index, out, scratch);
    }

    [[nodiscard]] std::vector<double> to_vector() const;

private:
    const TensorSource* source_;
};

/// sqrt(sum (a - b)^2) over the flattened checkpoints, accumulated in double.
[[nodiscard]] double euclidean_distance(const TensorSource& a, const TensorSource& b);

/// Euclidean norm of one flattened checkpoint.
[[nodiscard]] double l2_norm(const TensorSource& a);

/// <a, b> / (|a| |b|) over flattened distribution vectors, clamped to [-1, 1].
/// Throws DegenerateInput if either side has zero norm.
[[nodiscard]] double cosine_similarity(const TensorSource& a, const TensorSource& b);

inline constexpr std::string_view kUngroupedLayer = "_ungrouped";

/// Maps tensor names to layer keys through the first capture group of a
/// regular expression (searched, not fully matched). Names that do not
/// match fall into "_ungrouped".
class LayerGrouping {
public:
    static constexpr std::string_view kDefaultPattern = R"(layers\.(\d+)\.)";

    /// Throws ConfigError on an invalid pattern or one without a capture group.
    explicit LayerGrouping(std::string pattern = std::string(kDefaultPattern));

    [[nodiscard]] std::string key_for(std::string_view tensor_name) const;
    [[nodiscard]] const std::string& pattern() const noexcept { return pattern_; }

private:
    std::string pattern_;
    std::regex regex_;
};

/// Numeric keys ascending by value, then the rest byte-wise.
[[nodiscard]] bool layer_key_less(std::string_view a, std::string_view b);

struct LayerDistanceRow {
    std::string layer_key;
    double distance = 0.0;
    /// distance / max distance of the pair; 0 for every row when all distances are 0.
    double normalized = 0.0;
};

/// Per-layer Euclidean distance between two compatible checkpoints.
[[nodiscard]] std::vector<LayerDistanceRow> layerwise_distance(const TensorSource& a, const TensorSource& b,
                                                               const LayerGrouping& grouping = LayerGrouping{});

/// Sorts rows by layer key and fills in `normalized`.
[[nodiscard]] std::vector<LayerDistanceRow> normalize_layer_rows(std::vector<LayerDistanceRow> rows);

/// Weight-space geometry of a set of fine-tuned models / distribution vectors
/// relative to one base model.
struct AnalyticsReport {
    std::size_t base_tensors = 0;
    std::uint64_t base_elements = 0;

    /// Labels in input order: models first, then distribution vectors.
    std::vector<std::string> labels;
    /// |delta_i| per label, followed by a "DEM" row when labels are present.
    std::vector<std::pair<std::string, double>> distance_from_base;
    /// Pairwise cosine of the distribution vectors (labels x labels).
    std::vector<std::vector<double>> dv_cosine_matrix;
    /// Weights of the combined vector used for `dem_vs_dv_cosine`.
    std::optional<WeightConfig> dem_weights;
    /// cosine(sum_i w_i delta_i, delta_j) per label.
    std::vector<double> dem_vs_dv_cosine;
    /// Layer rows per label.
    std::vector<std::pair<std::string, std::vector<LayerDistanceRow>>> layerwise;
    std::string layer_pattern;

    [[nodiscard]] std::string to_json() const;
    [[nodiscard]] std::string distance_csv() const;
    [[nodiscard]] std::string cosine_csv() const;
    [[nodiscard]] std::string dem_cosine_csv() const;
    [[nodiscard]] std::string layerwise_csv() const;
};

/// Single streaming pass over all inputs. Models contribute model - base; dvs
/// contribute themselves. `dem_weights` defaults to 0.25 for every label.
[[nodiscard]] AnalyticsReport analytics_report(const TensorSource& base, std::span<const LabeledSource> models,
                                               std::span<const LabeledSource> dvs,
                                               const std::optional<WeightConfig>& dem_weights = std::nullopt,
                                               const LayerGrouping& grouping = LayerGrouping{});

} // namespace demerge
