#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace demerge::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 2,
    kData = 3,
    kEvaluator = 4,
};

/// Bad flag values detected before any file is touched.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LabeledPath {
    std::string label;
    std::string path;
};

/// Parses LABEL=PATH arguments; labels must be unique.
std::vector<LabeledPath> parse_labeled_paths(const std::vector<std::string>& specs, const char* flag);

/// Parses "0.05,0.1,..." into finite doubles.
std::vector<double> parse_grid(const std::string& csv);

struct DiffArgs {
    std::string base;
    std::string finetuned;
    std::string output;
};

struct MergeArgs {
    std::string base;
    std::vector<std::string> dvs;
    std::string weights;
    std::string output;
};

struct InterpArgs {
    std::vector<std::string> models;
    std::string weights;
    std::string output;
};

struct SearchArgs {
    std::string strategy;
    std::string base;
    std::vector<std::string> dvs;
    std::string evaluator;
    std::string grid;
    std::uint64_t k = 50;
    std::uint64_t seed = 0;
    std::string mode = "dem";
    std::size_t jobs = 1;
    bool keep = false;
    std::string work_dir;
    std::string report = "search-report.json";
};

struct AnalyzeArgs {
    std::string base;
    std::vector<std::string> models;
    std::vector<std::string> dvs;
    std::string layer_pattern;
    std::string weights;
    std::string output;
    bool csv = false;
};

struct CostArgs {
    std::string scenario;
    std::string output;
};

int run_diff(const DiffArgs& args);
int run_merge(const MergeArgs& args);
int run_interp(const InterpArgs& args);
int run_search(const SearchArgs& args);
int run_analyze(const AnalyzeArgs& args);
int run_cost(const CostArgs& args);
int run_inspect(const std::string& path);

} // namespace demerge::cli
