#pragma once

#include <stdexcept>
#include <string>

namespace dattn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct MaskingError : Error { using Error::Error; };
struct LayoutError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CorpusError : Error { using Error::Error; };
struct SchedulerError : Error { using Error::Error; };
struct OracleError : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };

}  // namespace dattn
