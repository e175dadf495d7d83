#ifndef PREFUSION_ERRORS_HPP
#define PREFUSION_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace prefusion {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PREFUSION_DEFINE_ERROR(Name)            \
  class Name : public Error {                   \
   public:                                      \
    explicit Name(const std::string& what)      \
        : Error(std::string(#Name ": ") + what) {} \
  }

PREFUSION_DEFINE_ERROR(SpecError);
PREFUSION_DEFINE_ERROR(ConfigError);
PREFUSION_DEFINE_ERROR(IoError);
PREFUSION_DEFINE_ERROR(MissingSourceId);
PREFUSION_DEFINE_ERROR(EmptyInput);
PREFUSION_DEFINE_ERROR(TooFewNeighbors);
PREFUSION_DEFINE_ERROR(UnknownClass);
PREFUSION_DEFINE_ERROR(ShapeMismatch);
PREFUSION_DEFINE_ERROR(DimensionMismatch);
PREFUSION_DEFINE_ERROR(OutOfRange);
PREFUSION_DEFINE_ERROR(EmptyValidSet);
PREFUSION_DEFINE_ERROR(DivergenceDetected);

#undef PREFUSION_DEFINE_ERROR

}  // namespace prefusion

#endif  // PREFUSION_ERRORS_HPP
