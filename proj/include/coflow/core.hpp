#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace coflow {

// Vocabulary bounds shared by the quantizer, the event encoding and the model.
struct GridConfig {
  int resolution = 12;   // positions per beat (r)
  int max_beat = 1024;
  int max_duration = 96; // in steps

  bool valid() const { return resolution > 0 && max_beat > 0 && max_duration > 0; }
  bool operator==(const GridConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Errors. Each kind maps to a distinct CLI exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IneligiblePieceError : public Error {
 public:
  using Error::Error;
};

class StructureError : public Error {
 public:
  StructureError(const std::string& what, std::size_t index)
      : Error(what + " (event " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

class TooShortError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// round(num / den) with halves rounded away from zero, exact in integers.
inline std::int64_t div_round(std::int64_t num, std::int64_t den) {
  if (den < 0) {
    num = -num;
    den = -den;
  }
  if (num >= 0) return (2 * num + den) / (2 * den);
  return -((2 * -num + den) / (2 * den));
}

}  // namespace coflow
