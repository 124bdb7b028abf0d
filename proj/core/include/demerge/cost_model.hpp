#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace demerge {

/// One training or validation run: `steps` steps of `seconds_per_step` on `gpus` GPUs.
struct RunCost {
    std::string label;
    double seconds_per_step = 0.0;
    std::uint64_t steps = 0;
    std::uint64_t gpus = 1;

    /// Throws ConfigError unless seconds_per_step > 0 (finite) and gpus >= 1.
    void validate() const;
};

/// c = k * t * g / 3600.
[[nodiscard]] double gpu_hours(const RunCost& run);

/// Sum of the training runs plus `trials` validation runs.
[[nodiscard]] double dem_total_cost(std::span<const RunCost> runs, const RunCost& validation, std::uint64_t trials);

/// n data sources, m candidate weights per source, average training steps T
/// and validation steps V.
struct SearchCostParams {
    std::uint64_t sources = 0;
    std::uint64_t weights_per_source = 0;
    std::uint64_t train_steps = 0;
    std::uint64_t validation_steps = 0;
};

struct SearchComplexity {
    double combinations = 0.0;          // m^n
    double mixing_cost = 0.0;           // m^n (T + V)
    double dem_cost = 0.0;              // n (T + V) + m^n V
    double run_reduction_factor = 0.0;  // m^n / n
    /// m == 1: a single candidate per source, so there is nothing to search
    /// and DEM's extra validation passes make it the costlier route.
    bool degenerate = false;
};

/// Throws ConfigError for non-positive parameters and NumericsError when any
/// quantity exceeds 2^53 (where doubles stop representing integers exactly).
[[nodiscard]] SearchComplexity search_complexity(const SearchCostParams& params);

/// mixing_total / dem_total. Throws ConfigError unless dem_total > 0.
[[nodiscard]] double savings_ratio(double mixing_total, double dem_total);

/// Candidate mixing weights per data source; the search space is their
/// Cartesian product.
struct MixingGrid {
    std::vector<std::pair<std::string, std::vector<double>>> sources;

    [[nodiscard]] std::uint64_t combinations() const;
    /// Mixed-radix decoding of `index`, last source varying fastest.
    [[nodiscard]] std::vector<double> combination(std::uint64_t index) const;
    /// `k` distinct combination indices drawn with a seeded mt19937_64.
    [[nodiscard]] std::vector<std::uint64_t> sample(std::uint64_t k, std::uint64_t seed) const;
};

/// Inputs of a cost comparison, loaded from a JSON scenario file.
struct CostScenario {
    std::string name;
    std::vector<RunCost> dem_runs;
    RunCost validation;
    std::uint64_t validation_trials = 0;

    RunCost mixing_run;
    std::uint64_t mixing_trials = 0;
    /// Reported average cost of one data-mixing run, if known.
    std::optional<double> mixing_average_gpu_hours;
    std::optional<MixingGrid> mixing_grid;
    std::optional<SearchCostParams> search;

    [[nodiscard]] static CostScenario from_json(std::string_view text);
};

struct CostLine {
    std::string label;
    RunCost run;
    std::uint64_t multiplier = 1;
    double gpu_hours_each = 0.0;
    double total = 0.0;
};

struct CostReport {
    std::string name;
    std::vector<CostLine> dem_lines;
    double dem_total = 0.0;

    CostLine mixing_line;
    /// Mixing total via the table row: gpu_hours(run) * trials.
    double mixing_total_from_run = 0.0;
    /// Mixing total via the reported per-run average, if given.
    std::optional<double> mixing_total_from_average;
    /// Headline mixing total: the average route when available, else the row route.
    double mixing_total = 0.0;
    double savings = 0.0;

    std::optional<std::uint64_t> grid_combinations;
    std::optional<SearchComplexity> complexity;
    std::optional<SearchCostParams> search;

    [[nodiscard]] std::string to_json() const;
    /// Human-readable summary laid out like a training-cost table.
    [[nodiscard]] std::string to_table() const;
};

[[nodiscard]] CostReport cost_report(const CostScenario& scenario);

} // namespace demerge
