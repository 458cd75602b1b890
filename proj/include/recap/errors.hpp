#pragma once

#include <stdexcept>
#include <string>

namespace recap {

// Base of every error the library throws. Callers that only care about
// "something in recap failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RECAP_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

RECAP_DEFINE_ERROR(FormatError);
RECAP_DEFINE_ERROR(IoError);
RECAP_DEFINE_ERROR(DegenerateVectorError);
RECAP_DEFINE_ERROR(DuplicateIdError);
RECAP_DEFINE_ERROR(NotFoundError);
RECAP_DEFINE_ERROR(DimensionError);
RECAP_DEFINE_ERROR(EmptyPatchError);
RECAP_DEFINE_ERROR(MissingPatchesError);
RECAP_DEFINE_ERROR(ConfigError);
RECAP_DEFINE_ERROR(MissingTruthError);
RECAP_DEFINE_ERROR(NoCandidatesError);
RECAP_DEFINE_ERROR(IncompleteBundleError);

#undef RECAP_DEFINE_ERROR

}  // namespace recap
