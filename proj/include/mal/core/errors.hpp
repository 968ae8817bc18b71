#pragma once

#include <stdexcept>
#include <string>

namespace mal {

// Broken caller preconditions (shape mismatch, non-scalar loss, hidden label read, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// NaN/Inf or a degenerate quantity inside a numeric kernel.
class NumericFault : public std::runtime_error {
public:
    NumericFault(const std::string& op, const std::string& what)
        : std::runtime_error(op + ": " + what), op_(op) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class PoolExhausted : public std::runtime_error {
public:
    PoolExhausted() : std::runtime_error("no unlabeled items left in the pool") {}
};

// A predictor was asked for output with no revealed labels to attend to.
class NoEvidence : public std::runtime_error {
public:
    NoEvidence() : std::runtime_error("no revealed labels to predict from") {}
};

class MissingEmbedding : public std::runtime_error {
public:
    explicit MissingEmbedding(long long id)
        : std::runtime_error("no embedding row for id " + std::to_string(id)) {}
};

class MissingScore : public std::runtime_error {
public:
    explicit MissingScore(long long id)
        : std::runtime_error("no a-priori score for item id " + std::to_string(id)) {}
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class EmptyStore : public std::runtime_error {
public:
    explicit EmptyStore(const std::string& source) : std::runtime_error(source + ": no records") {}
};

class TrainingFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MAL_REQUIRE(cond, msg)                                   \
    do {                                                         \
        if (!(cond)) throw ::mal::ContractViolation(msg);        \
    } while (0)

}  // namespace mal
