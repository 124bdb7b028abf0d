#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace demerge {

/// Per-dataset validation losses of one candidate and their unweighted mean.
struct EvaluationResult {
    std::map<std::string, double> per_dataset_losses;
    double objective = 0.0;

    /// Validates (non-empty, all finite) and computes the mean in label order.
    /// Throws EvaluatorError.
    [[nodiscard]] static EvaluationResult from_losses(std::map<std::string, double> losses);

    /// Parses evaluator stdout of the form {"losses": {label: number, ...}}.
    [[nodiscard]] static EvaluationResult parse(std::string_view json);

    friend bool operator==(const EvaluationResult&, const EvaluationResult&) = default;
};

/// Scores candidate checkpoints. Implementations must tolerate concurrent calls.
class Evaluator {
public:
    virtual ~Evaluator() = default;

    /// Throws EvaluatorError when the candidate cannot be scored.
    [[nodiscard]] virtual EvaluationResult evaluate(const std::filesystem::path& candidate) = 0;
};

struct ProcessResult {
    /// Exit code, or 128 + signal number when the child was killed.
    int exit_status = 0;
    std::string out;
    std::string err;
};

/// Runs `argv` (resolved through PATH) with stdin at /dev/null, capturing
/// stdout and stderr. Throws IoError if the process cannot be started.
[[nodiscard]] ProcessResult run_process(const std::vector<std::string>& argv);

/// Evaluator protocol: argv = command + candidate path; exit 0; stdout carries
/// {"losses": {...}}.
[[nodiscard]] EvaluationResult evaluate_candidate(const std::filesystem::path& candidate,
                                                  const std::vector<std::string>& command);

/// Evaluator backed by an external command.
class SubprocessEvaluator final : public Evaluator {
public:
    explicit SubprocessEvaluator(std::vector<std::string> command) : command_(std::move(command)) {}

    /// Runs `command_line` through /bin/sh, with the candidate path appended as
    /// the final positional argument.
    [[nodiscard]] static SubprocessEvaluator shell(std::string_view command_line);

    [[nodiscard]] EvaluationResult evaluate(const std::filesystem::path& candidate) override;

    [[nodiscard]] std::size_t invocations() const noexcept { return invocations_.load(); }

private:
    std::vector<std::string> command_;
    std::atomic<std::size_t> invocations_{0};
};

} // namespace demerge
