#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace orderbkd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Precondition or configuration violation detected before any work is done.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// The external scorer could not be reached or broke the wire protocol.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The external scorer answered a request with an error object.
class ScorerError : public Error {
 public:
  using Error::Error;
};

class NoCandidateError : public Error {
 public:
  using Error::Error;
};

class NoValidPositionError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace orderbkd
