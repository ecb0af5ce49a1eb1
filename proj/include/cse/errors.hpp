#pragma once

#include <stdexcept>
#include <string>

namespace cse {

// Error taxonomy used across the engine. Everything derives from Error so
// callers (notably the CLI) can map failures to exit codes in one place.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller passed a tensor/argument that violates a documented precondition.
struct InvalidInputError : Error {
    explicit InvalidInputError(const std::string& msg) : Error(msg) {}
};

// Bad or inconsistent configuration (missing assets, shape contract broken).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Degenerate numeric input (zero-norm vector fed to cosine similarity).
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

// Defect synthesis could not produce a usable sample.
struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

// Checkpoint/bank/report file problems: corrupt, truncated, wrong version.
struct PersistenceError : Error {
    explicit PersistenceError(const std::string& msg) : Error(msg) {}
};

// Training diverged or produced non-finite losses.
struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

// Evaluation cannot be computed (e.g. single-class AUROC).
struct EvalError : Error {
    explicit EvalError(const std::string& msg) : Error(msg) {}
};

} // namespace cse
