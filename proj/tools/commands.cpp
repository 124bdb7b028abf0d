#include "commands.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "demerge/analytics.hpp"
#include "demerge/cost_model.hpp"
#include "demerge/errors.hpp"
#include "demerge/evaluator.hpp"
#include "demerge/format.hpp"
#include "demerge/io.hpp"
#include "demerge/vector_arith.hpp"
#include "demerge/weight_search.hpp"

namespace demerge::cli {
namespace {

struct OpenedSet {
    std::vector<std::unique_ptr<CheckpointReader>> readers;
    std::vector<LabeledSource> sources;
};

OpenedSet open_all(const std::vector<LabeledPath>& specs) {
    OpenedSet set;
    set.readers.reserve(specs.size());
    for (const auto& spec : specs) {
        set.readers.push_back(std::make_unique<CheckpointReader>(CheckpointReader::open(spec.path)));
    }
    for (std::size_t i = 0; i < specs.size(); ++i) set.sources.push_back({specs[i].label, *set.readers[i]});
    return set;
}

bool looks_inline(const std::string& text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    return first != std::string::npos && text[first] == '{';
}

// Inline JSON, a WeightConfig file, or a search report (replays its best trial).
WeightConfig load_weights(const std::string& spec) {
    if (spec.empty()) throw UsageError("--weights is required");
    if (looks_inline(spec)) return WeightConfig::from_json(spec);
    if (!std::filesystem::exists(spec)) throw UsageError(fmt::format("--weights: '{}' is neither JSON nor a file", spec));
    const auto text = read_text_file(spec);
    const auto doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_object() && doc.contains("trials") && doc.contains("best_index")) return replay_weights(text);
    return WeightConfig::from_json(text);
}

void print_warnings(const WeightConfig& weights) {
    for (const auto& w : weights.warnings()) std::cerr << "WARNING: " << w << "\n";
}

void require_output(const std::string& output) {
    if (output.empty()) throw UsageError("-o/--output is required");
}

std::filesystem::path sibling(const std::filesystem::path& report, std::string_view suffix) {
    auto stem = report;
    stem.replace_extension();
    stem += suffix;
    return stem;
}

} // namespace

std::vector<LabeledPath> parse_labeled_paths(const std::vector<std::string>& specs, const char* flag) {
    std::vector<LabeledPath> out;
    std::set<std::string> labels;
    for (const auto& spec : specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
            throw UsageError(fmt::format("{} expects LABEL=PATH, got '{}'", flag, spec));
        }
        LabeledPath lp{spec.substr(0, eq), spec.substr(eq + 1)};
        if (!labels.insert(lp.label).second) throw UsageError(fmt::format("{}: duplicate label '{}'", flag, lp.label));
        out.push_back(std::move(lp));
    }
    return out;
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> grid;
    std::stringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        double value = 0.0;
        try {
            value = std::stod(item, &used);
        } catch (const std::exception&) {
            throw UsageError(fmt::format("--grid: '{}' is not a number", item));
        }
        if (item.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(value)) {
            throw UsageError(fmt::format("--grid: '{}' is not a finite number", item));
        }
        grid.push_back(value);
    }
    if (grid.empty()) throw UsageError("--grid must list at least one value");
    return grid;
}

int run_diff(const DiffArgs& args) {
    require_output(args.output);
    const auto base = CheckpointReader::open(args.base);
    const auto tuned = CheckpointReader::open(args.finetuned);
    CheckpointFileWriter writer(args.output);
    const auto stats = extract_dv(base, tuned, writer);
    std::cout << fmt::format("wrote distribution vector {} ({} tensors, {} elements)\n", args.output, stats.tensors,
                             stats.elements);
    return kOk;
}

int run_merge(const MergeArgs& args) {
    require_output(args.output);
    const auto specs = parse_labeled_paths(args.dvs, "--dv");
    const auto weights = load_weights(args.weights);
    print_warnings(weights);
    const auto base = CheckpointReader::open(args.base);
    const auto dvs = open_all(specs);
    CheckpointFileWriter writer(args.output);
    const auto stats = compose_dem(base, dvs.sources, weights, writer);
    std::cout << fmt::format("wrote merged model {} ({} tensors, {} elements)\n", args.output, stats.tensors,
                             stats.elements);
    return kOk;
}

int run_interp(const InterpArgs& args) {
    require_output(args.output);
    const auto specs = parse_labeled_paths(args.models, "--model");
    if (specs.empty()) throw UsageError("interp needs at least one --model");
    const auto weights = load_weights(args.weights);
    print_warnings(weights);
    const auto models = open_all(specs);
    CheckpointFileWriter writer(args.output);
    const auto stats = interpolate(models.sources, weights, writer);
    std::cout << fmt::format("wrote interpolated model {} ({} tensors, {} elements)\n", args.output, stats.tensors,
                             stats.elements);
    return kOk;
}

int run_search(const SearchArgs& args) {
    const auto specs = parse_labeled_paths(args.dvs, "--dv");
    if (specs.empty()) throw UsageError("search needs at least one --dv");
    if (args.evaluator.empty()) throw UsageError("--evaluator is required");
    if (args.jobs == 0) throw UsageError("--jobs must be at least 1");
    WeightMode mode = WeightMode::Dem;
    if (args.mode == "interpolation") {
        mode = WeightMode::Interpolation;
    } else if (args.mode != "dem") {
        throw UsageError(fmt::format("--mode must be dem or interpolation, got '{}'", args.mode));
    }
    std::vector<double> grid = default_grid();
    if (args.strategy == "grid" && !args.grid.empty()) grid = parse_grid(args.grid);
    if (args.strategy == "random" && args.k == 0) throw UsageError("-k must be at least 1");

    SearchOptions options;
    options.jobs = args.jobs;
    options.keep_candidates = args.keep;
    options.work_dir = args.work_dir.empty() && args.keep ? std::filesystem::path("search-candidates")
                                                          : std::filesystem::path(args.work_dir);

    const auto base = CheckpointReader::open(args.base);
    const auto dvs = open_all(specs);
    auto evaluator = SubprocessEvaluator::shell(args.evaluator);
    const auto report = args.strategy == "grid"
                            ? grid_search_single_coeff(base, dvs.sources, grid, evaluator, options)
                            : random_search(base, dvs.sources, args.k, args.seed, evaluator, mode, options);

    write_file_atomic(args.report, report.to_json());
    for (const auto& trial : report.trials) {
        if (!trial.ok()) std::cerr << "WARNING: trial failed: " << trial.error << "\n";
    }
    const auto& best = report.best();
    std::cout << fmt::format("best trial {} of {}: objective {:.10g}\n", report.best_index, report.trials.size(),
                             best.result->objective);
    if (args.strategy == "grid" && !best.weights.entries.empty()) {
        std::cout << fmt::format("best omega = {:g}\n", best.weights.entries.front().weight);
    }
    std::cout << "weights: " << best.weights.to_json() << "\n";
    std::cout << "report: " << args.report << "\n";
    return kOk;
}

int run_analyze(const AnalyzeArgs& args) {
    require_output(args.output);
    const auto model_specs = parse_labeled_paths(args.models, "--model");
    const auto dv_specs = parse_labeled_paths(args.dvs, "--dv");
    const LayerGrouping grouping(args.layer_pattern.empty() ? std::string(LayerGrouping::kDefaultPattern)
                                                            : args.layer_pattern);
    std::optional<WeightConfig> weights;
    if (!args.weights.empty()) weights = load_weights(args.weights);

    const auto base = CheckpointReader::open(args.base);
    const auto models = open_all(model_specs);
    const auto dvs = open_all(dv_specs);
    const auto report = analytics_report(base, models.sources, dvs.sources, weights, grouping);

    write_file_atomic(args.output, report.to_json());
    std::cout << "report: " << args.output << "\n";
    if (args.csv) {
        const std::filesystem::path out(args.output);
        const std::pair<std::string_view, std::string> mirrors[] = {
            {".distance.csv", report.distance_csv()},
            {".cosine.csv", report.cosine_csv()},
            {".dem_cosine.csv", report.dem_cosine_csv()},
            {".layerwise.csv", report.layerwise_csv()},
        };
        for (const auto& [suffix, text] : mirrors) {
            const auto path = sibling(out, suffix);
            write_file_atomic(path, text);
            std::cout << "csv: " << path.string() << "\n";
        }
    }
    for (const auto& [label, distance] : report.distance_from_base) {
        std::cout << fmt::format("{:<16} {:>14.6f}\n", label, distance);
    }
    return kOk;
}

int run_cost(const CostArgs& args) {
    if (args.scenario.empty()) throw UsageError("--scenario is required");
    const auto scenario = CostScenario::from_json(read_text_file(args.scenario));
    const auto report = cost_report(scenario);
    std::cout << report.to_table();
    if (!args.output.empty()) write_file_atomic(args.output, report.to_json());
    return kOk;
}

int run_inspect(const std::string& path) {
    const auto reader = CheckpointReader::open(path);
    std::cout << fmt::format("{}: kind={} tensors={} elements={} data_bytes={} data_crc32={:#010x}\n", path,
                             kind_name(reader.kind()), reader.metas().size(), reader.total_elements(),
                             reader.data_size(), reader.data_crc32());
    for (const auto& m : reader.metas()) {
        std::string shape;
        for (std::size_t i = 0; i < m.shape.size(); ++i) shape += (i ? "," : "") + std::to_string(m.shape[i]);
        std::cout << fmt::format("  {} {} [{}] offset={} length={}\n", m.name, dtype_name(m.dtype), shape,
                                 m.byte_offset, m.byte_length);
    }
    return kOk;
}

} // namespace demerge::cli
