#pragma once

#include <stdexcept>
#include <string>

namespace sag {

/// Numerically degenerate input: zero-norm rows under cosine distance,
/// zero-variance vectors fed to a correlation, and the like.
struct DegenerateInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File or wire-format problem: bad magic, truncated payload, NaN in CSV.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct DivergenceError : DegenerateInput {
    int epoch;
    explicit DivergenceError(int at_epoch)
        : DegenerateInput("training diverged at epoch " + std::to_string(at_epoch)),
          epoch(at_epoch) {}
};

} // namespace sag
