#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace pcfgi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A left-hand side whose rule weights are all zero.
class NormalizationError : public Error {
 public:
  using Error::Error;
};

class UnknownTokenError : public Error {
 public:
  explicit UnknownTokenError(const std::string& token)
      : Error("unknown token '" + token + "'"), token_(token) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

class NoParseError : public Error {
 public:
  NoParseError() : Error("sentence has no derivation") {}
  explicit NoParseError(std::size_t sentence)
      : Error("sentence " + std::to_string(sentence) + " has no derivation"),
        sentence_(sentence) {}
  std::optional<std::size_t> sentence() const noexcept { return sentence_; }

 private:
  std::optional<std::size_t> sentence_;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation on a model that has not been trained yet.
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; line is 1-based, 0 when unknown.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace pcfgi
