#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace demerge {

enum class WeightMode { Dem, Interpolation };

[[nodiscard]] std::string_view mode_name(WeightMode mode) noexcept;

struct WeightEntry {
    std::string label;
    double weight = 0.0;

    friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

/// Merge coefficients, one per labelled source. Entry order is the summation
/// order used by every merge.
///
/// JSON form: {"mode": "dem" | "interpolation", "weights": {label: weight, ...}}
/// (label order in the document is preserved).
struct WeightConfig {
    WeightMode mode = WeightMode::Dem;
    std::vector<WeightEntry> entries;

    /// Tolerance on the sum of weights in interpolation mode.
    static constexpr double kSumTolerance = 1e-9;

    /// Throws ConfigError if labels repeat, a weight is not finite, or an
    /// interpolation config does not sum to one.
    void validate() const;

    /// Non-fatal observations (negative weights, weights above one).
    [[nodiscard]] std::vector<std::string> warnings() const;

    [[nodiscard]] double sum() const noexcept;
    [[nodiscard]] const WeightEntry* find(std::string_view label) const noexcept;

    /// Every label gets the same weight.
    [[nodiscard]] static WeightConfig uniform(WeightMode mode, const std::vector<std::string>& labels, double weight);

    /// Parses and validates the JSON form. Throws ConfigError.
    [[nodiscard]] static WeightConfig from_json(std::string_view text);
    [[nodiscard]] std::string to_json() const;

    friend bool operator==(const WeightConfig&, const WeightConfig&) = default;
};

} // namespace demerge
