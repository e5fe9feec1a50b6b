#pragma once

#include <stdexcept>
#include <string>

namespace apc {

// All library failures derive from Error so callers can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class NotFoundError : public Error { using Error::Error; };
class DecodeError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class IncompatibleError : public Error { using Error::Error; };
class UnsupportedVersionError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class UndefinedMetricError : public Error { using Error::Error; };
class EmptyPoolError : public Error { using Error::Error; };

}  // namespace apc
