#pragma once

#include <stdexcept>
#include <string>

namespace advst {

// Shape/precondition violations: the caller broke an operation's contract.
class ContractError : public std::invalid_argument {
public:
    explicit ContractError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numeric domain violations (log of non-positive values, division by zero).
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& msg) : std::domain_error(msg) {}
};

// Object used in an invalid lifecycle state (e.g. second backward on a graph).
class StateError : public std::logic_error {
public:
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed external input; carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& msg, long long byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    long long offset;
};

// Transport cost requested between samples of different labels.
class InfiniteCostError : public std::runtime_error {
public:
    explicit InfiniteCostError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss; the message carries a state dump.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace advst
