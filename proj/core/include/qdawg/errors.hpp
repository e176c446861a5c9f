#pragma once

#include <stdexcept>
#include <string>

namespace qdawg {

// Root of every error the library throws.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError;  // config.hpp, carries a ValidationReport

class ParseError : public Error {
  public:
    ParseError(const std::string& what, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const noexcept { return line_; }

  private:
    int line_;
};

class OverlapError : public Error {
  public:
    using Error::Error;
};

class BandError : public Error {
  public:
    using Error::Error;
};

class EpochOverflowError : public Error {
  public:
    using Error::Error;
};

class MalformedStreamError : public Error {
  public:
    using Error::Error;
};

class PhysicsError : public Error {
  public:
    using Error::Error;
};

class DimensionError : public Error {
  public:
    using Error::Error;
};

}  // namespace qdawg
