#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace demerge {

/// Base class for every error raised by the library. `kind()` is the stable,
/// machine-parsable name the CLI prints as `ERROR <kind>: <detail>`.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual std::string_view kind() const noexcept = 0;
};

#define DEMERGE_DEFINE_ERROR(Name)                                                   \
    class Name : public Error {                                                      \
    public:                                                                          \
        using Error::Error;                                                          \
        [[nodiscard]] std::string_view kind() const noexcept override { return #Name; } \
    }

DEMERGE_DEFINE_ERROR(FormatError);
DEMERGE_DEFINE_ERROR(IntegrityError);
DEMERGE_DEFINE_ERROR(IoError);
DEMERGE_DEFINE_ERROR(NumericsError);
DEMERGE_DEFINE_ERROR(ConfigError);
DEMERGE_DEFINE_ERROR(EvaluatorError);
DEMERGE_DEFINE_ERROR(SearchFailed);
DEMERGE_DEFINE_ERROR(DegenerateInput);

#undef DEMERGE_DEFINE_ERROR

/// Raised when two checkpoints do not share the same (name, dtype, shape) set.
class CompatibilityError : public Error {
public:
    CompatibilityError(std::string message, std::vector<std::string> mismatched)
        : Error(std::move(message)), mismatched_(std::move(mismatched)) {}

    [[nodiscard]] std::string_view kind() const noexcept override { return "CompatibilityError"; }

    /// Tensor names that are missing on either side or differ in dtype/shape.
    [[nodiscard]] const std::vector<std::string>& mismatched() const noexcept { return mismatched_; }

private:
    std::vector<std::string> mismatched_;
};

} // namespace demerge
