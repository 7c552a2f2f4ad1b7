#pragma once

#include <stdexcept>
#include <string>

namespace l1bsr {

// Bad input data: unreadable files, shape mismatches, precondition violations.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or parameters during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw DataError(what);
}

}  // namespace l1bsr
