#pragma once

#include <stdexcept>
#include <string>

namespace nnmpc {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Arguments outside the domain of a model equation (h <= 0, NaN, negative flow).
class DomainError : public Error {
public:
    using Error::Error;
};

/// An RK4 stage left the admissible region.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, int substage)
        : Error(what), substage_(substage) {}

    /// 1..4 for the RK4 stage that produced h <= 0, 0 for the final update.
    int substage() const noexcept { return substage_; }

private:
    int substage_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Not enough past samples to form a regression vector.
class HistoryError : public Error {
public:
    HistoryError(const std::string& what, std::size_t required, std::size_t available)
        : Error(what), required_(required), available_(available) {}

    std::size_t required() const noexcept { return required_; }
    std::size_t available() const noexcept { return available_; }

private:
    std::size_t required_;
    std::size_t available_;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int iteration)
        : Error(what), iteration_(iteration) {}

    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

class SolverError : public Error {
public:
    SolverError(const std::string& what, double lambda)
        : Error(what), lambda_(lambda) {}

    double lambda() const noexcept { return lambda_; }

private:
    double lambda_;
};

/// Malformed or inconsistent configuration; key_path names the offending entry.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, std::string key_path)
        : Error(what), key_path_(std::move(key_path)) {}

    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

class FileError : public Error {
public:
    using Error::Error;
};

}  // namespace nnmpc

namespace nnmpc {

/// A pipeline stage failed; what() is prefixed with the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace nnmpc
