#pragma once

#include <stdexcept>
#include <string>

namespace coopmcts {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Schema or syntax violation in a scenario, spec or dataset file. The
/// message starts with the offending field path, e.g. "agents[2].v: ...".
class ParseError : public Error {
 public:
  ParseError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class RandomizationError : public Error {
 public:
  using Error::Error;
};

// Weights file errors.
class ShapeError : public Error {
 public:
  using Error::Error;
};
class TruncationError : public Error {
 public:
  using Error::Error;
};
class ChecksumError : public Error {
 public:
  using Error::Error;
};

// Dataset errors.
class VersionError : public Error {
 public:
  using Error::Error;
};
class OffsetError : public Error {
 public:
  using Error::Error;
};

}  // namespace coopmcts
