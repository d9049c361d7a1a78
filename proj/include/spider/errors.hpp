#ifndef SPIDER_ERRORS_HPP
#define SPIDER_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace spider {

// Error taxonomy maps 1:1 onto process exit codes (see spider.h):
// config=2, data=3, numeric/invariant=4, io=5.
enum class ErrorCategory { Config = 2, Data = 3, Numeric = 4, Io = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), category_(cat) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::Config, m) {}
};

struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorCategory::Data, m) {}
};

// Shape/contract/invariant violations and numeric failures (NaN, divergence).
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorCategory::Numeric, m) {}
};

struct DimensionError : NumericError {
  explicit DimensionError(const std::string& m) : NumericError(m) {}
};

struct ContractError : NumericError {
  explicit ContractError(const std::string& m) : NumericError(m) {}
};

struct EmptyMaskError : NumericError {
  explicit EmptyMaskError(const std::string& m) : NumericError(m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorCategory::Io, m) {}
};

}  // namespace spider

#endif
