#pragma once

#include <stdexcept>
#include <string>

namespace mta {

// Base for every failure the CLI maps to exit code 1. error_class() is the
// stable machine-parseable tag printed as "<class>: <message>".
class Error : public std::runtime_error {
public:
    Error(std::string cls, const std::string& msg)
        : std::runtime_error(msg), class_(std::move(cls)) {}
    const std::string& error_class() const { return class_; }

private:
    std::string class_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config-error", msg) {}
};

class ManifestParseError : public Error {
public:
    explicit ManifestParseError(const std::string& msg) : Error("manifest-parse-error", msg) {}
};

class ManifestValidationError : public Error {
public:
    explicit ManifestValidationError(const std::string& msg)
        : Error("manifest-validation-error", msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io-error", msg) {}
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error("checkpoint-error", msg) {}
};

class TrainingDivergence : public Error {
public:
    explicit TrainingDivergence(const std::string& msg) : Error("training-divergence", msg) {}
};

}  // namespace mta
