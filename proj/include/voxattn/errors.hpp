#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voxattn {

/// Coarse classification used by the CLI to pick an exit code.
enum class ErrorKind {
  parse,     // malformed input files
  data,      // well-formed input with invalid values
  semantic,  // inconsistent arguments: domains, masks, modes, shapes
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0);
  /// 1-based header line, or 0 when the failure is not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#define VOXATTN_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

VOXATTN_DEFINE_ERROR(DataError, data)
VOXATTN_DEFINE_ERROR(EmptyInputError, data)
VOXATTN_DEFINE_ERROR(NumericsError, data)
VOXATTN_DEFINE_ERROR(ModeError, semantic)
VOXATTN_DEFINE_ERROR(DomainError, semantic)
VOXATTN_DEFINE_ERROR(ShapeError, semantic)
VOXATTN_DEFINE_ERROR(EmptyWindowError, semantic)
VOXATTN_DEFINE_ERROR(SignalMaskError, semantic)
VOXATTN_DEFINE_ERROR(MaskError, semantic)
VOXATTN_DEFINE_ERROR(SubsetError, semantic)
VOXATTN_DEFINE_ERROR(ConfigError, semantic)
VOXATTN_DEFINE_ERROR(RangeError, semantic)
VOXATTN_DEFINE_ERROR(InternalError, internal)

#undef VOXATTN_DEFINE_ERROR

}  // namespace voxattn
