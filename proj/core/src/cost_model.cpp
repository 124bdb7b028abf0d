#include "demerge/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "demerge/errors.hpp"

namespace demerge {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kExactIntegerLimit = 9007199254740992.0;  // 2^53

void guard_exact(double value, std::string_view what) {
    if (!(value <= kExactIntegerLimit)) {
        throw NumericsError(fmt::format("{} exceeds 2^53 and cannot be represented exactly", what));
    }
}

template <typename T>
T get_field(const ordered_json& object, const char* key, std::string_view where) {
    auto it = object.find(key);
    if (it == object.end()) throw ConfigError(fmt::format("{}: missing field \"{}\"", where, key));
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(fmt::format("{}: field \"{}\" has the wrong type", where, key));
    }
}

std::uint64_t get_count(const ordered_json& object, const char* key, std::string_view where) {
    auto it = object.find(key);
    if (it == object.end()) throw ConfigError(fmt::format("{}: missing field \"{}\"", where, key));
    if (!it->is_number_unsigned()) throw ConfigError(fmt::format("{}: \"{}\" must be a non-negative integer", where, key));
    return it->get<std::uint64_t>();
}

RunCost parse_run(const ordered_json& j, std::string_view where) {
    if (!j.is_object()) throw ConfigError(fmt::format("{}: run must be an object", where));
    RunCost run;
    run.label = get_field<std::string>(j, "label", where);
    run.seconds_per_step = get_field<double>(j, "time_per_step", where);
    run.steps = get_count(j, "steps", where);
    run.gpus = get_count(j, "gpus", where);
    run.validate();
    return run;
}

ordered_json run_json(const CostLine& line) {
    return {{"label", line.label},
            {"time_per_step", line.run.seconds_per_step},
            {"steps", line.run.steps},
            {"gpus", line.run.gpus},
            {"multiplier", line.multiplier},
            {"gpu_hours_each", line.gpu_hours_each},
            {"gpu_hours", line.total}};
}

CostLine make_line(std::string label, const RunCost& run, std::uint64_t multiplier) {
    CostLine line{std::move(label), run, multiplier, gpu_hours(run), 0.0};
    line.total = line.gpu_hours_each * static_cast<double>(multiplier);
    return line;
}

} // namespace

void RunCost::validate() const {
    if (!(seconds_per_step > 0.0) || !std::isfinite(seconds_per_step)) {
        throw ConfigError(fmt::format("run '{}': time per step must be positive and finite", label));
    }
    if (gpus < 1) throw ConfigError(fmt::format("run '{}': needs at least one GPU", label));
}

double gpu_hours(const RunCost& run) {
    run.validate();
    return static_cast<double>(run.steps) * run.seconds_per_step * static_cast<double>(run.gpus) / 3600.0;
}

double dem_total_cost(std::span<const RunCost> runs, const RunCost& validation, std::uint64_t trials) {
    double total = 0.0;
    for (const auto& run : runs) total += gpu_hours(run);
    if (trials > 0) total += static_cast<double>(trials) * gpu_hours(validation);
    return total;
}

SearchComplexity search_complexity(const SearchCostParams& p) {
    if (p.sources == 0 || p.weights_per_source == 0 || p.train_steps == 0 || p.validation_steps == 0) {
        throw ConfigError("search cost parameters n, m, T and V must all be positive");
    }
    const auto n = static_cast<double>(p.sources);
    const auto m = static_cast<double>(p.weights_per_source);
    const auto steps = static_cast<double>(p.train_steps) + static_cast<double>(p.validation_steps);
    guard_exact(steps, "T + V");

    double combinations = 1.0;
    for (std::uint64_t i = 0; i < p.sources; ++i) {
        combinations *= m;
        guard_exact(combinations, "m^n");
    }
    SearchComplexity out;
    out.combinations = combinations;
    out.mixing_cost = combinations * steps;
    guard_exact(out.mixing_cost, "m^n (T + V)");
    out.dem_cost = n * steps + combinations * static_cast<double>(p.validation_steps);
    guard_exact(out.dem_cost, "n (T + V) + m^n V");
    out.run_reduction_factor = combinations / n;
    out.degenerate = p.weights_per_source == 1;
    return out;
}

double savings_ratio(double mixing_total, double dem_total) {
    if (!(dem_total > 0.0) || !std::isfinite(dem_total) || !std::isfinite(mixing_total)) {
        throw ConfigError(fmt::format("savings ratio needs a positive DEM total (got {})", dem_total));
    }
    return mixing_total / dem_total;
}

// --- MixingGrid -----------------------------------------------------------

std::uint64_t MixingGrid::combinations() const {
    if (sources.empty()) return 0;
    std::uint64_t total = 1;
    for (const auto& [label, values] : sources) {
        if (values.empty()) return 0;
        if (total > UINT64_MAX / values.size()) throw NumericsError("mixing grid size overflows 64 bits");
        total *= values.size();
    }
    return total;
}

std::vector<double> MixingGrid::combination(std::uint64_t index) const {
    if (index >= combinations()) throw ConfigError(fmt::format("combination {} out of range", index));
    std::vector<double> out(sources.size());
    for (std::size_t s = sources.size(); s-- > 0;) {
        const auto& values = sources[s].second;
        out[s] = values[index % values.size()];
        index /= values.size();
    }
    return out;
}

std::vector<std::uint64_t> MixingGrid::sample(std::uint64_t k, std::uint64_t seed) const {
    const auto total = combinations();
    if (k > total) throw ConfigError(fmt::format("cannot sample {} of {} combinations", k, total));
    std::mt19937_64 rng(seed);
    std::set<std::uint64_t> taken;
    std::vector<std::uint64_t> out;
    out.reserve(k);
    while (out.size() < k) {
        // Rejection keeps the draw uniform without modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % total;
        std::uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        const auto index = r % total;
        if (taken.insert(index).second) out.push_back(index);
    }
    return out;
}

// --- scenario & report ----------------------------------------------------

CostScenario CostScenario::from_json(std::string_view text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("scenario is not valid JSON: {}", e.what()));
    }
    if (!doc.is_object()) throw ConfigError("scenario must be a JSON object");

    CostScenario s;
    s.name = doc.value("name", std::string{});

    if (!doc.contains("dem") || !doc["dem"].is_object()) throw ConfigError("scenario needs a \"dem\" object");
    const auto& dem = doc["dem"];
    if (!dem.contains("runs") || !dem["runs"].is_array()) throw ConfigError("dem: \"runs\" must be an array");
    for (const auto& run : dem["runs"]) s.dem_runs.push_back(parse_run(run, "dem.runs"));
    if (!dem.contains("validation")) throw ConfigError("dem: missing field \"validation\"");
    s.validation = parse_run(dem["validation"], "dem.validation");
    s.validation_trials = get_count(dem, "validation_trials", "dem");

    if (!doc.contains("data_mixing") || !doc["data_mixing"].is_object()) {
        throw ConfigError("scenario needs a \"data_mixing\" object");
    }
    const auto& mix = doc["data_mixing"];
    if (!mix.contains("run")) throw ConfigError("data_mixing: missing field \"run\"");
    s.mixing_run = parse_run(mix["run"], "data_mixing.run");
    s.mixing_trials = get_count(mix, "trials", "data_mixing");
    if (mix.contains("average_gpu_hours_per_run")) {
        const double avg = get_field<double>(mix, "average_gpu_hours_per_run", "data_mixing");
        if (!(avg >= 0.0) || !std::isfinite(avg)) throw ConfigError("data_mixing: average must be non-negative");
        s.mixing_average_gpu_hours = avg;
    }
    if (mix.contains("grid")) {
        if (!mix["grid"].is_object()) throw ConfigError("data_mixing: \"grid\" must map source labels to weight lists");
        MixingGrid grid;
        for (const auto& [label, values] : mix["grid"].items()) {
            if (!values.is_array() || values.empty()) {
                throw ConfigError(fmt::format("data_mixing.grid: '{}' needs a non-empty list", label));
            }
            std::vector<double> list;
            for (const auto& v : values) {
                if (!v.is_number()) throw ConfigError(fmt::format("data_mixing.grid: '{}' has a non-numeric entry", label));
                list.push_back(v.get<double>());
            }
            grid.sources.emplace_back(label, std::move(list));
        }
        s.mixing_grid = std::move(grid);
    }
    if (doc.contains("search")) {
        const auto& sp = doc["search"];
        if (!sp.is_object()) throw ConfigError("\"search\" must be an object");
        s.search = SearchCostParams{get_count(sp, "n", "search"), get_count(sp, "m", "search"),
                                    get_count(sp, "T", "search"), get_count(sp, "V", "search")};
    }
    return s;
}

CostReport cost_report(const CostScenario& s) {
    CostReport r;
    r.name = s.name;
    for (const auto& run : s.dem_runs) r.dem_lines.push_back(make_line(run.label, run, 1));
    r.dem_lines.push_back(make_line(fmt::format("{} ({}x)", s.validation.label, s.validation_trials), s.validation,
                                    s.validation_trials));
    r.dem_total = dem_total_cost(s.dem_runs, s.validation, s.validation_trials);

    r.mixing_line = make_line(fmt::format("{} ({}x)", s.mixing_run.label, s.mixing_trials), s.mixing_run, s.mixing_trials);
    r.mixing_total_from_run = r.mixing_line.total;
    if (s.mixing_average_gpu_hours) {
        r.mixing_total_from_average = *s.mixing_average_gpu_hours * static_cast<double>(s.mixing_trials);
    }
    r.mixing_total = r.mixing_total_from_average.value_or(r.mixing_total_from_run);
    r.savings = savings_ratio(r.mixing_total, r.dem_total);

    if (s.mixing_grid) r.grid_combinations = s.mixing_grid->combinations();
    if (s.search) {
        r.search = s.search;
        r.complexity = search_complexity(*s.search);
    }
    return r;
}

std::string CostReport::to_json() const {
    ordered_json doc;
    doc["name"] = name;
    auto lines = ordered_json::array();
    for (const auto& l : dem_lines) lines.push_back(run_json(l));
    doc["dem"] = {{"runs", std::move(lines)}, {"total_gpu_hours", dem_total}};
    ordered_json mix;
    mix["run"] = run_json(mixing_line);
    mix["total_gpu_hours_from_run"] = mixing_total_from_run;
    mix["total_gpu_hours_from_average"] =
        mixing_total_from_average ? ordered_json(*mixing_total_from_average) : ordered_json(nullptr);
    mix["total_gpu_hours"] = mixing_total;
    mix["grid_combinations"] = grid_combinations ? ordered_json(*grid_combinations) : ordered_json(nullptr);
    doc["data_mixing"] = std::move(mix);
    doc["savings_ratio"] = savings;
    if (complexity && search) {
        doc["search_complexity"] = {{"n", search->sources},
                                    {"m", search->weights_per_source},
                                    {"T", search->train_steps},
                                    {"V", search->validation_steps},
                                    {"combinations", complexity->combinations},
                                    {"mixing_cost", complexity->mixing_cost},
                                    {"dem_cost", complexity->dem_cost},
                                    {"run_reduction_factor", complexity->run_reduction_factor},
                                    {"degenerate", complexity->degenerate}};
    }
    return doc.dump(2) + "\n";
}

std::string CostReport::to_table() const {
    std::string out;
    if (!name.empty()) out += name + "\n";
    out += fmt::format("{:<34}{:>11}{:>10}{:>8}{:>12}\n", "Train/Val Runs", "time/step", "# steps", "# gpus", "Cost");
    out += "DEM\n";
    for (const auto& l : dem_lines) {
        out += fmt::format("{:<34}{:>11.2f}{:>10}{:>8}{:>12.2f}\n", "- " + l.label, l.run.seconds_per_step, l.run.steps,
                           l.run.gpus, l.total);
    }
    out += fmt::format("{:<63}{:>12.2f}\n", "DEM total", dem_total);
    out += fmt::format("{:<34}{:>11.2f}{:>10}{:>8}{:>12.2f}\n", mixing_line.label, mixing_line.run.seconds_per_step,
                       mixing_line.run.steps, mixing_line.run.gpus, mixing_total_from_run);
    if (mixing_total_from_average) {
        out += fmt::format("{:<63}{:>12.2f}\n",
                           fmt::format("Data-mixing total (reported average x {})", mixing_line.multiplier),
                           *mixing_total_from_average);
    }
    out += fmt::format("{:<63}{:>12.2f}\n", "Data-mixing total (headline)", mixing_total);
    out += fmt::format("{:<63}{:>12.2f}\n", "Savings ratio (data mixing / DEM)", savings);
    if (grid_combinations) out += fmt::format("{:<63}{:>12}\n", "Data-mixing weight grid combinations", *grid_combinations);
    if (complexity && search) {
        out += fmt::format("Search complexity (n={}, m={}, T={}, V={}): mixing {:.0f}, DEM {:.0f}, run reduction x{:g}{}\n",
                           search->sources, search->weights_per_source, search->train_steps, search->validation_steps,
                           complexity->mixing_cost, complexity->dem_cost, complexity->run_reduction_factor,
                           complexity->degenerate ? " (m=1: nothing to search)" : "");
    }
    return out;
}

} // namespace demerge
