#pragma once

#include <stdexcept>
#include <string>

namespace levytd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter lies outside its admissible domain (negative intensity, σ ≤ 0, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// The compensator integral does not exist for the requested law.
class DivergentIntegralError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

class UnsupportedLawError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

/// Tensor shapes do not compose.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller broke an API precondition (e.g. backward from a non-scalar root).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Forward simulation produced a non-finite state.
class SimulationDivergedError : public Error {
public:
    SimulationDivergedError(std::size_t trajectory, std::size_t step)
        : Error("simulation diverged: non-finite state in trajectory " + std::to_string(trajectory) +
                " at step " + std::to_string(step)),
          trajectory_(trajectory),
          step_(step) {}

    std::size_t trajectory() const noexcept { return trajectory_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t trajectory_;
    std::size_t step_;
};

/// Training produced a non-finite loss or gradient.
class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(std::size_t update, const std::string& what)
        : Error("training diverged at update " + std::to_string(update) + ": " + what), update_(update) {}

    std::size_t update() const noexcept { return update_; }

private:
    std::size_t update_;
};

/// Invalid run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace levytd
