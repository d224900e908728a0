#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gril {

// Every error thrown by the library derives from Error. The CLI maps the
// subclasses onto exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Raised when the retriever has nothing left to expand or score.
class RetrievalExhausted : public Error {
 public:
  using Error::Error;
};

class SupervisionError : public Error {
 public:
  using Error::Error;
};

}  // namespace gril
