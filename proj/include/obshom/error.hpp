#pragma once

#include <stdexcept>
#include <string>

namespace obshom {

enum class ErrorKind {
    invalid_grid,
    sampling,
    empty_region,
    grid_mismatch,
    non_convergence,
    infeasible,
    ellipticity,
    resolution,
    obstacle_range,
    degenerate_set,
    domain,
    range,
    fit,
    invariant_failure,
    config,
    io,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_grid: return "invalid-grid";
        case ErrorKind::sampling: return "sampling";
        case ErrorKind::empty_region: return "empty-region";
        case ErrorKind::grid_mismatch: return "grid-mismatch";
        case ErrorKind::non_convergence: return "non-convergence";
        case ErrorKind::infeasible: return "infeasible";
        case ErrorKind::ellipticity: return "ellipticity";
        case ErrorKind::resolution: return "resolution";
        case ErrorKind::obstacle_range: return "obstacle-range";
        case ErrorKind::degenerate_set: return "degenerate-set";
        case ErrorKind::domain: return "domain";
        case ErrorKind::range: return "range";
        case ErrorKind::fit: return "fit";
        case ErrorKind::invariant_failure: return "invariant-failure";
        case ErrorKind::config: return "config";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

/// All library failures are reported through this type; `kind()` classifies them.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Solver ran out of sweeps; carries the last complementarity residual.
class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& what, double last_residual, std::size_t sweeps)
        : Error(ErrorKind::non_convergence, what), last_residual_(last_residual), sweeps_(sweeps) {}

    double last_residual() const noexcept { return last_residual_; }
    std::size_t sweeps() const noexcept { return sweeps_; }

private:
    double last_residual_;
    std::size_t sweeps_;
};

} // namespace obshom
