// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace conseq {

// Every recoverable failure in the library derives from Error. The concrete
// type names the failure class; what() carries the detail.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CONSEQ_DEFINE_ERROR(Name)            \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(#Name ": " + what) {}        \
  }

CONSEQ_DEFINE_ERROR(InvalidArgument);
CONSEQ_DEFINE_ERROR(DimensionMismatch);
CONSEQ_DEFINE_ERROR(NotPositiveDefinite);
CONSEQ_DEFINE_ERROR(DegenerateInput);
CONSEQ_DEFINE_ERROR(UnsupportedCombination);
CONSEQ_DEFINE_ERROR(InvalidSpec);
CONSEQ_DEFINE_ERROR(ShapeMismatch);
CONSEQ_DEFINE_ERROR(BadMagic);
CONSEQ_DEFINE_ERROR(TruncatedFile);
CONSEQ_DEFINE_ERROR(CountMismatch);
CONSEQ_DEFINE_ERROR(BadLabel);
CONSEQ_DEFINE_ERROR(IoError);
CONSEQ_DEFINE_ERROR(ConfigError);
CONSEQ_DEFINE_ERROR(DegenerateTrajectory);

#undef CONSEQ_DEFINE_ERROR

}  // namespace conseq
