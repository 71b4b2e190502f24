#pragma once

#include <stdexcept>
#include <string>

namespace flowsam {

// All failure conditions carry a stable short name so callers (and the CLI)
// can report them without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(name + ": " + what), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

#define FLOWSAM_ERROR_TYPE(NAME)                                        \
  class NAME : public Error {                                           \
   public:                                                              \
    explicit NAME(const std::string& what) : Error(#NAME, what) {}      \
  };

FLOWSAM_ERROR_TYPE(MissingVariable)
FLOWSAM_ERROR_TYPE(Unsupported)
FLOWSAM_ERROR_TYPE(IncompleteOrdering)
FLOWSAM_ERROR_TYPE(UntrainedChild)
FLOWSAM_ERROR_TYPE(UntrainedClique)
FLOWSAM_ERROR_TYPE(DegenerateSamples)
FLOWSAM_ERROR_TYPE(UnseedableClique)
FLOWSAM_ERROR_TYPE(StalledQueue)
FLOWSAM_ERROR_TYPE(EmptySeparator)
FLOWSAM_ERROR_TYPE(DimensionTooLarge)
FLOWSAM_ERROR_TYPE(DegenerateWeights)
FLOWSAM_ERROR_TYPE(LayoutMismatch)
FLOWSAM_ERROR_TYPE(NoAmbiguousFactors)
FLOWSAM_ERROR_TYPE(ParseError)
FLOWSAM_ERROR_TYPE(UnknownLandmarkId)
FLOWSAM_ERROR_TYPE(RankDeficient)

#undef FLOWSAM_ERROR_TYPE

}  // namespace flowsam
