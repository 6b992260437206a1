#pragma once

#include <stdexcept>
#include <string>

namespace famt {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can catch a single type and still report the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define FAMT_DEFINE_ERROR(Name, Kind)                            \
  class Name : public Error {                                    \
   public:                                                       \
    using Error::Error;                                          \
    const char* kind() const noexcept override { return Kind; } \
  };

FAMT_DEFINE_ERROR(ConfigError, "configuration error")
FAMT_DEFINE_ERROR(InputError, "input error")
FAMT_DEFINE_ERROR(FormatError, "format error")
FAMT_DEFINE_ERROR(NumericalError, "numerical error")
FAMT_DEFINE_ERROR(LookupError, "lookup error")
FAMT_DEFINE_ERROR(ConflictError, "conflict error")
FAMT_DEFINE_ERROR(DataError, "data error")
FAMT_DEFINE_ERROR(TrainingError, "training error")
FAMT_DEFINE_ERROR(EvaluationError, "evaluation error")

#undef FAMT_DEFINE_ERROR

}  // namespace famt
