// demerge: build distribution edited models from fine-tuned checkpoints.

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "commands.hpp"
#include "demerge/errors.hpp"
#include "demerge/format.hpp"
#include "demerge/weight_search.hpp"

namespace {

using namespace demerge::cli;

std::string one_line(std::string text) {
    for (auto& c : text) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    return text;
}

int report(std::string_view kind, const std::string& detail, int code) {
    std::cerr << "ERROR " << kind << ": " << one_line(detail) << "\n";
    return code;
}

int exit_code_for(std::string_view kind) {
    if (kind == "EvaluatorError" || kind == "SearchFailed") return kEvaluator;
    if (kind == "ConfigError") return kUsage;
    return kData;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distribution edited models: extract, merge, search, analyze and cost."};
    app.name("demerge");
    app.set_version_flag("--version",
                         fmt::format("demerge 0.1.0 (DEMCKPT format version {})", demerge::kFormatVersion));
    app.set_config("--config", "", "TOML/INI file with default flag values (explicit flags win)");
    app.require_subcommand(1);

    int exit_code = kOk;
    std::function<int()> action;

    DiffArgs diff;
    auto* diff_cmd = app.add_subcommand("diff", "Distribution vector: FINETUNED - BASE");
    diff_cmd->add_option("base", diff.base, "Base model checkpoint")->required();
    diff_cmd->add_option("finetuned", diff.finetuned, "Fine-tuned model checkpoint")->required();
    diff_cmd->add_option("-o,--output", diff.output, "Output delta checkpoint")->required();
    diff_cmd->callback([&] { action = [&] { return run_diff(diff); }; });

    MergeArgs merge;
    auto* merge_cmd = app.add_subcommand("merge", "DEM: BASE + sum_i w_i * DV_i");
    merge_cmd->add_option("base", merge.base, "Base model checkpoint")->required();
    merge_cmd->add_option("--dv", merge.dvs, "Distribution vector as LABEL=PATH (repeatable)");
    merge_cmd->add_option("--weights", merge.weights, "Weights JSON, weights file, or search report")->required();
    merge_cmd->add_option("-o,--output", merge.output, "Output model checkpoint")->required();
    merge_cmd->callback([&] { action = [&] { return run_merge(merge); }; });

    InterpArgs interp;
    auto* interp_cmd = app.add_subcommand("interp", "Interpolation: sum_i w_i * MODEL_i with sum w_i = 1");
    interp_cmd->add_option("--model", interp.models, "Fine-tuned model as LABEL=PATH (repeatable)")->required();
    interp_cmd->add_option("--weights", interp.weights, "Weights JSON or weights file")->required();
    interp_cmd->add_option("-o,--output", interp.output, "Output model checkpoint")->required();
    interp_cmd->callback([&] { action = [&] { return run_interp(interp); }; });

    SearchArgs search;
    search.seed = demerge::kDefaultSearchSeed;
    auto* search_cmd = app.add_subcommand("search", "Search merge weights against an external evaluator");
    search_cmd->require_subcommand(1);
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("base", search.base, "Base model checkpoint")->required();
        cmd->add_option("--dv", search.dvs, "Distribution vector as LABEL=PATH (repeatable)")->required();
        cmd->add_option("--evaluator", search.evaluator,
                        "Shell command; the candidate path is appended as its last argument")
            ->required();
        cmd->add_option("--jobs", search.jobs, "Trials evaluated concurrently")->capture_default_str();
        cmd->add_flag("--keep", search.keep, "Keep candidate checkpoints");
        cmd->add_option("--workdir", search.work_dir, "Directory for candidate checkpoints");
        cmd->add_option("-o,--report", search.report, "Search report JSON")->capture_default_str();
    };
    auto* grid_cmd = search_cmd->add_subcommand("grid", "Single shared coefficient over a grid");
    add_common(grid_cmd);
    grid_cmd->add_option("--grid", search.grid, "Comma-separated coefficients (default 0.05,...,0.50)");
    grid_cmd->callback([&] {
        search.strategy = "grid";
        action = [&] { return run_search(search); };
    });
    auto* random_cmd = search_cmd->add_subcommand("random", "Independent U[0,1] weight per distribution vector");
    add_common(random_cmd);
    random_cmd->add_option("-k", search.k, "Number of trials")->capture_default_str();
    random_cmd->add_option("--seed", search.seed, "Random seed")->capture_default_str();
    random_cmd->add_option("--mode", search.mode, "dem or interpolation (normalized draws)")->capture_default_str();
    random_cmd->callback([&] {
        search.strategy = "random";
        action = [&] { return run_search(search); };
    });

    AnalyzeArgs analyze;
    auto* analyze_cmd = app.add_subcommand("analyze", "Weight-space distances, cosines and layer heatmap data");
    analyze_cmd->add_option("base", analyze.base, "Base model checkpoint")->required();
    analyze_cmd->add_option("--model", analyze.models, "Fine-tuned model as LABEL=PATH (repeatable)");
    analyze_cmd->add_option("--dv", analyze.dvs, "Distribution vector as LABEL=PATH (repeatable)");
    analyze_cmd->add_option("--layer-pattern", analyze.layer_pattern, "Regex whose first group is the layer key");
    analyze_cmd->add_option("--weights", analyze.weights, "Weights of the combined vector (default 0.25 each)");
    analyze_cmd->add_option("-o,--output", analyze.output, "Report JSON")->required();
    analyze_cmd->add_flag("--csv", analyze.csv, "Also write CSV mirrors next to the report");
    analyze_cmd->callback([&] { action = [&] { return run_analyze(analyze); }; });

    CostArgs cost;
    auto* cost_cmd = app.add_subcommand("cost", "GPU-hour comparison of DEM and data mixing");
    cost_cmd->add_option("--scenario", cost.scenario, "Scenario JSON")->required();
    cost_cmd->add_option("-o,--output", cost.output, "Optional cost report JSON");
    cost_cmd->callback([&] { action = [&] { return run_cost(cost); }; });

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "Validate a DEMCKPT file and print its index");
    inspect_cmd->add_option("file", inspect_path, "Checkpoint")->required();
    inspect_cmd->callback([&] { action = [&] { return run_inspect(inspect_path); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report("UsageError", e.what(), kUsage);
    }

    try {
        exit_code = action ? action() : kUsage;
    } catch (const UsageError& e) {
        return report("UsageError", e.what(), kUsage);
    } catch (const demerge::Error& e) {
        return report(e.kind(), e.what(), exit_code_for(e.kind()));
    } catch (const std::exception& e) {
        return report("InternalError", e.what(), kData);
    }
    return exit_code;
}
