#pragma once

#include <stdexcept>
#include <string>

namespace zhmt {

// Base for every error this library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class UnknownLanguage : public Error {
 public:
  explicit UnknownLanguage(const std::string& code)
      : Error("unknown language: '" + code + "'"), code_(code) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& stem)
      : Error("unequal line counts for paired files with stem '" + stem + "'"), stem_(stem) {}
  const std::string& stem() const noexcept { return stem_; }

 private:
  std::string stem_;
};

class InvalidToken : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  TemplateError(const std::string& msg, std::size_t line)
      : Error("template line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace zhmt
