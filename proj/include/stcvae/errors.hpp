#pragma once

#include <stdexcept>
#include <string>

namespace stcvae {

/// Root of every error thrown by the library. Each module raises its own
/// subclass so callers can tell a bad layout from a corrupt file.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidLayout : public Error { using Error::Error; };
class OracleDomainError : public Error { using Error::Error; };
class EstimatorDomainError : public Error { using Error::Error; };
class ModelError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class MetricError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class FitError : public Error { using Error::Error; };
class ReportError : public Error { using Error::Error; };

}  // namespace stcvae
