#pragma once

#include <stdexcept>
#include <string>

namespace langtail {

/// Process exit codes used by the CLI.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

#define LANGTAIL_DECLARE_ERROR(Name, Code)                              \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    ExitCode exit_code() const noexcept override { return Code; }       \
  };

LANGTAIL_DECLARE_ERROR(FormatError, ExitCode::data)
LANGTAIL_DECLARE_ERROR(TruncationError, ExitCode::data)
LANGTAIL_DECLARE_ERROR(DataError, ExitCode::data)
LANGTAIL_DECLARE_ERROR(IoError, ExitCode::data)
LANGTAIL_DECLARE_ERROR(ShapeError, ExitCode::data)
LANGTAIL_DECLARE_ERROR(EmptyMaskError, ExitCode::data)
LANGTAIL_DECLARE_ERROR(EmptyBatchError, ExitCode::data)
LANGTAIL_DECLARE_ERROR(ConfigError, ExitCode::usage)
LANGTAIL_DECLARE_ERROR(DegenerateGraphError, ExitCode::numeric)
LANGTAIL_DECLARE_ERROR(DivergenceError, ExitCode::numeric)
LANGTAIL_DECLARE_ERROR(NormalizationError, ExitCode::numeric)
LANGTAIL_DECLARE_ERROR(NumericError, ExitCode::numeric)

#undef LANGTAIL_DECLARE_ERROR

}  // namespace langtail
