#include "demerge/weight_search.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include <unistd.h>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "demerge/errors.hpp"
#include "demerge/format.hpp"

namespace demerge {
namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::string> labels_of(std::span<const LabeledSource> dvs) {
    std::vector<std::string> labels;
    labels.reserve(dvs.size());
    for (const auto& dv : dvs) labels.push_back(dv.label);
    return labels;
}

class WorkDir {
public:
    explicit WorkDir(const SearchOptions& options) : keep_(options.keep_candidates) {
        std::error_code ec;
        if (options.work_dir.empty()) {
            static std::atomic<unsigned> counter{0};
            path_ = std::filesystem::temp_directory_path() /
                    fmt::format("demerge-search-{}-{}", ::getpid(), counter.fetch_add(1));
            owned_ = true;
        } else {
            path_ = options.work_dir;
        }
        std::filesystem::create_directories(path_, ec);
        if (ec) throw IoError(fmt::format("cannot create work directory '{}': {}", path_.string(), ec.message()));
    }
    ~WorkDir() {
        if (owned_ && !keep_) {
            std::error_code ignored;
            std::filesystem::remove_all(path_, ignored);
        }
    }
    WorkDir(const WorkDir&) = delete;
    WorkDir& operator=(const WorkDir&) = delete;

    [[nodiscard]] std::filesystem::path candidate(std::size_t index) const {
        return path_ / fmt::format("candidate-{:04}.demckpt", index);
    }
    [[nodiscard]] bool keep() const noexcept { return keep_; }

private:
    std::filesystem::path path_;
    bool keep_ = false;
    bool owned_ = false;
};

ordered_json weights_json(const WeightConfig& config) {
    return ordered_json::parse(config.to_json());
}

} // namespace

std::vector<double> default_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 10; ++i) grid.push_back(i / 20.0);
    return grid;
}

std::size_t select_best(std::span<const TrialRecord> trials) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (!trials[i].ok()) continue;
        if (!best || trials[i].result->objective < trials[*best].result->objective) best = i;
    }
    if (!best) throw SearchFailed(fmt::format("all {} trials failed", trials.size()));
    return *best;
}

SearchReport run_trials(std::string strategy, const TensorSource& base, std::span<const LabeledSource> dvs,
                        std::vector<WeightConfig> configs, Evaluator& evaluator, const SearchOptions& options,
                        std::optional<std::uint64_t> rng_seed) {
    if (configs.empty()) throw ConfigError("search needs at least one trial");
    for (const auto& c : configs) c.validate();
    for (const auto& dv : dvs) check_compatibility(base, dv.source);

    WorkDir work(options);
    SearchReport report;
    report.strategy = std::move(strategy);
    report.rng_seed = rng_seed;
    report.trials.resize(configs.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;
    auto worker = [&] {
        for (;;) {
            const auto index = next.fetch_add(1);
            if (index >= configs.size()) return;
            auto& trial = report.trials[index];
            trial.weights = configs[index];
            const auto path = work.candidate(index);
            try {
                CheckpointFileWriter writer(path);
                compose_dem(base, dvs, trial.weights, writer);
                try {
                    trial.result = evaluator.evaluate(path);
                } catch (const EvaluatorError& e) {
                    trial.error = e.what();
                }
                if (!work.keep()) {
                    std::error_code ignored;
                    std::filesystem::remove(path, ignored);
                }
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
                next.store(configs.size());
                return;
            }
        }
    };

    const auto jobs = std::max<std::size_t>(1, std::min(options.jobs, configs.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(jobs);
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }
    if (fatal) std::rethrow_exception(fatal);

    report.best_index = select_best(report.trials);
    return report;
}

SearchReport grid_search_single_coeff(const TensorSource& base, std::span<const LabeledSource> dvs,
                                      std::span<const double> grid, Evaluator& evaluator,
                                      const SearchOptions& options) {
    if (grid.empty()) throw ConfigError("grid must contain at least one value");
    const auto labels = labels_of(dvs);
    std::vector<WeightConfig> configs;
    configs.reserve(grid.size());
    for (double omega : grid) {
        if (!std::isfinite(omega)) throw ConfigError("grid values must be finite");
        configs.push_back(WeightConfig::uniform(WeightMode::Dem, labels, omega));
    }
    return run_trials("grid", base, dvs, std::move(configs), evaluator, options, std::nullopt);
}

std::vector<WeightConfig> random_weight_configs(const std::vector<std::string>& labels, std::size_t k,
                                                std::uint64_t seed, WeightMode mode) {
    if (k == 0) throw ConfigError("random search needs k >= 1");
    if (labels.empty()) throw ConfigError("random search needs at least one distribution vector");
    std::mt19937_64 rng(seed);
    auto uniform01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    std::vector<WeightConfig> configs;
    configs.reserve(k);
    for (std::size_t t = 0; t < k; ++t) {
        WeightConfig config{mode, {}};
        double total = 0.0;
        for (const auto& label : labels) {
            const double w = uniform01();
            total += w;
            config.entries.push_back({label, w});
        }
        if (mode == WeightMode::Interpolation) {
            for (auto& e : config.entries) {
                e.weight = total > 0.0 ? e.weight / total : 1.0 / static_cast<double>(labels.size());
            }
        }
        configs.push_back(std::move(config));
    }
    return configs;
}

SearchReport random_search(const TensorSource& base, std::span<const LabeledSource> dvs, std::size_t k,
                           std::uint64_t seed, Evaluator& evaluator, WeightMode mode, const SearchOptions& options) {
    auto configs = random_weight_configs(labels_of(dvs), k, seed, mode);
    return run_trials("random", base, dvs, std::move(configs), evaluator, options, seed);
}

std::string SearchReport::to_json() const {
    ordered_json doc;
    doc["strategy"] = strategy;
    doc["rng_seed"] = rng_seed ? ordered_json(*rng_seed) : ordered_json(nullptr);
    doc["evaluations"] = trials.size();
    doc["best_index"] = best_index;
    doc["best"] = trials.empty() ? ordered_json(nullptr) : weights_json(best().weights);
    auto list = ordered_json::array();
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto& t = trials[i];
        ordered_json entry;
        entry["index"] = i;
        entry["weights"] = weights_json(t.weights);
        if (t.ok()) {
            entry["status"] = "ok";
            entry["losses"] = t.result->per_dataset_losses;
            entry["objective"] = t.result->objective;
        } else {
            entry["status"] = "failed";
            entry["error"] = t.error;
        }
        list.push_back(std::move(entry));
    }
    doc["trials"] = std::move(list);
    return doc.dump(2) + "\n";
}

WeightConfig replay_weights(std::string_view report_json) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(report_json);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("search report is not valid JSON: {}", e.what()));
    }
    if (!doc.is_object() || !doc.contains("trials") || !doc.contains("best_index") ||
        !doc["best_index"].is_number_unsigned()) {
        throw ConfigError("document is not a search report");
    }
    const auto best = doc["best_index"].get<std::size_t>();
    if (!doc["trials"].is_array() || best >= doc["trials"].size() || !doc["trials"][best].contains("weights")) {
        throw ConfigError("search report has no best trial");
    }
    return WeightConfig::from_json(doc["trials"][best]["weights"].dump());
}

} // namespace demerge
