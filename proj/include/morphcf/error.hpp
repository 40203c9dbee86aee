#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace morphcf {

/// Error families. The CLI maps each family onto its exit code.
enum class ErrorKind { validation, io, transport };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

enum class ParseFailure { bad_magic, unsupported_version, truncated, zero_dims, trailing_bytes };

class ParseError : public IoError {
public:
    ParseError(ParseFailure failure, const std::string& what) : IoError(what), failure_(failure) {}
    ParseFailure failure() const noexcept { return failure_; }

private:
    ParseFailure failure_;
};

/// Raised by dataset loading; carries every problem found, not just the first.
class DatasetError : public ValidationError {
public:
    explicit DatasetError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

enum class TransportFailure { timeout, malformed_response, probability_out_of_range, connection };

class TransportError : public Error {
public:
    TransportError(TransportFailure failure, std::string subject_id, const std::string& what)
        : Error(ErrorKind::transport, what), failure_(failure), subject_id_(std::move(subject_id)) {}
    TransportFailure failure() const noexcept { return failure_; }
    const std::string& subject_id() const noexcept { return subject_id_; }

private:
    TransportFailure failure_;
    std::string subject_id_;
};

}  // namespace morphcf
