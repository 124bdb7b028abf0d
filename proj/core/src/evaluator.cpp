#include "demerge/evaluator.hpp"

#include <array>
#include <cerrno>
#include <cmath>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "demerge/errors.hpp"

extern char** environ;

namespace demerge {
namespace {

class Pipe {
public:
    Pipe() {
        if (::pipe2(fds_.data(), O_CLOEXEC) != 0) throw IoError(fmt::format("pipe failed: {}", std::strerror(errno)));
    }
    ~Pipe() {
        close_read();
        close_write();
    }
    Pipe(const Pipe&) = delete;
    Pipe& operator=(const Pipe&) = delete;

    int read_end() const noexcept { return fds_[0]; }
    int write_end() const noexcept { return fds_[1]; }
    void close_read() noexcept { reset(fds_[0]); }
    void close_write() noexcept { reset(fds_[1]); }

private:
    static void reset(int& fd) noexcept {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
    std::array<int, 2> fds_{-1, -1};
};

class SpawnActions {
public:
    SpawnActions() { ::posix_spawn_file_actions_init(&actions_); }
    ~SpawnActions() { ::posix_spawn_file_actions_destroy(&actions_); }
    SpawnActions(const SpawnActions&) = delete;
    SpawnActions& operator=(const SpawnActions&) = delete;
    posix_spawn_file_actions_t* get() noexcept { return &actions_; }

private:
    posix_spawn_file_actions_t actions_{};
};

void drain(Pipe& out_pipe, Pipe& err_pipe, std::string& out, std::string& err) {
    std::array<pollfd, 2> fds{{{out_pipe.read_end(), POLLIN, 0}, {err_pipe.read_end(), POLLIN, 0}}};
    std::array<std::string*, 2> sinks{&out, &err};
    std::array<char, 4096> buffer{};
    int open_fds = 2;
    while (open_fds > 0) {
        if (::poll(fds.data(), fds.size(), -1) < 0) {
            if (errno == EINTR) continue;
            throw IoError(fmt::format("poll failed: {}", std::strerror(errno)));
        }
        for (std::size_t i = 0; i < fds.size(); ++i) {
            if (fds[i].fd < 0 || fds[i].revents == 0) continue;
            const auto n = ::read(fds[i].fd, buffer.data(), buffer.size());
            if (n > 0) {
                sinks[i]->append(buffer.data(), static_cast<std::size_t>(n));
            } else if (n == 0 || errno != EINTR) {
                fds[i].fd = -1;
                --open_fds;
            }
        }
    }
}

} // namespace

EvaluationResult EvaluationResult::from_losses(std::map<std::string, double> losses) {
    if (losses.empty()) throw EvaluatorError("evaluator reported no losses");
    double total = 0.0;
    for (const auto& [label, loss] : losses) {
        if (!std::isfinite(loss)) throw EvaluatorError(fmt::format("loss for '{}' is not finite", label));
        total += loss;
    }
    EvaluationResult result;
    result.objective = total / static_cast<double>(losses.size());
    result.per_dataset_losses = std::move(losses);
    return result;
}

EvaluationResult EvaluationResult::parse(std::string_view json) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw EvaluatorError(fmt::format("evaluator output is not valid JSON: {}", e.what()));
    }
    if (!doc.is_object() || !doc.contains("losses") || !doc["losses"].is_object()) {
        throw EvaluatorError("evaluator output must be an object with a \"losses\" object");
    }
    std::map<std::string, double> losses;
    for (const auto& [label, value] : doc["losses"].items()) {
        if (!value.is_number()) throw EvaluatorError(fmt::format("loss for '{}' is not a number", label));
        losses.emplace(label, value.get<double>());
    }
    return from_losses(std::move(losses));
}

ProcessResult run_process(const std::vector<std::string>& argv) {
    if (argv.empty()) throw ConfigError("empty command");
    std::vector<char*> args;
    args.reserve(argv.size() + 1);
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    Pipe out_pipe;
    Pipe err_pipe;
    SpawnActions actions;
    ::posix_spawn_file_actions_addopen(actions.get(), STDIN_FILENO, "/dev/null", O_RDONLY, 0);
    ::posix_spawn_file_actions_adddup2(actions.get(), out_pipe.write_end(), STDOUT_FILENO);
    ::posix_spawn_file_actions_adddup2(actions.get(), err_pipe.write_end(), STDERR_FILENO);

    pid_t pid = 0;
    if (const int rc = ::posix_spawnp(&pid, args[0], actions.get(), nullptr, args.data(), environ); rc != 0) {
        throw IoError(fmt::format("cannot start '{}': {}", argv[0], std::strerror(rc)));
    }
    out_pipe.close_write();
    err_pipe.close_write();

    ProcessResult result;
    drain(out_pipe, err_pipe, result.out, result.err);

    int status = 0;
    while (::waitpid(pid, &status, 0) < 0) {
        if (errno != EINTR) throw IoError(fmt::format("waitpid failed: {}", std::strerror(errno)));
    }
    if (WIFEXITED(status)) {
        result.exit_status = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        result.exit_status = 128 + WTERMSIG(status);
    }
    return result;
}

EvaluationResult evaluate_candidate(const std::filesystem::path& candidate, const std::vector<std::string>& command) {
    if (!std::filesystem::exists(candidate)) {
        throw EvaluatorError(fmt::format("candidate '{}' does not exist", candidate.string()));
    }
    auto argv = command;
    argv.push_back(candidate.string());
    ProcessResult proc;
    try {
        proc = run_process(argv);
    } catch (const IoError& e) {
        throw EvaluatorError(e.what());
    }
    auto stderr_tail = [&] {
        std::string_view err = proc.err;
        while (!err.empty() && (err.back() == '\n' || err.back() == '\r')) err.remove_suffix(1);
        return err.empty() ? std::string{} : fmt::format(" (stderr: {})", err);
    };
    if (proc.exit_status != 0) {
        throw EvaluatorError(fmt::format("evaluator exited with status {}{}", proc.exit_status, stderr_tail()));
    }
    try {
        return EvaluationResult::parse(proc.out);
    } catch (const EvaluatorError& e) {
        throw EvaluatorError(fmt::format("{}{}", e.what(), stderr_tail()));
    }
}

SubprocessEvaluator SubprocessEvaluator::shell(std::string_view command_line) {
    return SubprocessEvaluator({"/bin/sh", "-c", fmt::format("{} \"$@\"", command_line), "sh"});
}

EvaluationResult SubprocessEvaluator::evaluate(const std::filesystem::path& candidate) {
    invocations_.fetch_add(1);
    return evaluate_candidate(candidate, command_);
}

} // namespace demerge
