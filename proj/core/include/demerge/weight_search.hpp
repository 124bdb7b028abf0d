#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "demerge/evaluator.hpp"
#include "demerge/vector_arith.hpp"
#include "demerge/weight_config.hpp"

namespace demerge {

struct TrialRecord {
    WeightConfig weights;
    /// Set for successful trials.
    std::optional<EvaluationResult> result;
    /// Evaluator failure message for failed trials.
    std::string error;

    [[nodiscard]] bool ok() const noexcept { return result.has_value(); }

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct SearchReport {
    std::string strategy;
    std::vector<TrialRecord> trials;
    std::size_t best_index = 0;
    std::optional<std::uint64_t> rng_seed;

    [[nodiscard]] const TrialRecord& best() const { return trials.at(best_index); }
    [[nodiscard]] std::string to_json() const;

    friend bool operator==(const SearchReport&, const SearchReport&) = default;
};

struct SearchOptions {
    /// Directory receiving candidate checkpoints. Empty: a fresh directory
    /// under the system temp dir, removed afterwards unless `keep_candidates`.
    std::filesystem::path work_dir;
    bool keep_candidates = false;
    /// Maximum number of trials evaluated concurrently.
    std::size_t jobs = 1;
};

/// Seed used by random search when none is given.
inline constexpr std::uint64_t kDefaultSearchSeed = 20240601;

/// 0.05, 0.10, ..., 0.50.
[[nodiscard]] std::vector<double> default_grid();

/// Index of the successful trial with the smallest objective, earliest on ties.
/// Throws SearchFailed when no trial succeeded.
[[nodiscard]] std::size_t select_best(std::span<const TrialRecord> trials);

/// One DEM per grid value with the same coefficient on every distribution
/// vector; exactly `grid.size()` evaluator calls.
[[nodiscard]] SearchReport grid_search_single_coeff(const TensorSource& base, std::span<const LabeledSource> dvs,
                                                    std::span<const double> grid, Evaluator& evaluator,
                                                    const SearchOptions& options = {});

/// `k` weight vectors, each entry drawn i.i.d. from U[0,1) by a seeded
/// mt19937_64 (53-bit mantissa draws, trial-major then label order). In
/// interpolation mode each draw is normalized to sum to one.
[[nodiscard]] std::vector<WeightConfig> random_weight_configs(const std::vector<std::string>& labels, std::size_t k,
                                                              std::uint64_t seed, WeightMode mode);

/// Random search over per-vector weights; exactly `k` evaluator calls.
[[nodiscard]] SearchReport random_search(const TensorSource& base, std::span<const LabeledSource> dvs, std::size_t k,
                                         std::uint64_t seed, Evaluator& evaluator, WeightMode mode,
                                         const SearchOptions& options = {});

/// Evaluates explicit weight configurations (the engine behind both searches).
[[nodiscard]] SearchReport run_trials(std::string strategy, const TensorSource& base, std::span<const LabeledSource> dvs,
                                      std::vector<WeightConfig> configs, Evaluator& evaluator,
                                      const SearchOptions& options, std::optional<std::uint64_t> rng_seed);

/// Best weights stored in a search report JSON document.
[[nodiscard]] WeightConfig replay_weights(std::string_view report_json);

} // namespace demerge
