#pragma once

#include <stdexcept>
#include <string>

namespace tdl {

// Root of every error thrown by the library. The CLI maps NumericError to
// exit code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TDL_DEFINE_ERROR(Name)        \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  };

TDL_DEFINE_ERROR(FormatError)
TDL_DEFINE_ERROR(ValidationError)
TDL_DEFINE_ERROR(IoError)
TDL_DEFINE_ERROR(ShapeError)
TDL_DEFINE_ERROR(SizeError)
TDL_DEFINE_ERROR(AnnotationError)
TDL_DEFINE_ERROR(ConfigError)
TDL_DEFINE_ERROR(EmptyInputError)
TDL_DEFINE_ERROR(DegenerateInputError)
TDL_DEFINE_ERROR(MetricUndefinedError)
TDL_DEFINE_ERROR(NumericError)

#undef TDL_DEFINE_ERROR

}  // namespace tdl
