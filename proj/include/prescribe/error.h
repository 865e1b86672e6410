#pragma once

#include <stdexcept>
#include <string>

namespace prescribe {

// Base class for every recoverable failure raised by the library. `kind()`
// is the stable machine-readable name used by the CLI and the HTTP API.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message);
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PRESCRIBE_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

// event_log
PRESCRIBE_DEFINE_ERROR(MissingColumn);
PRESCRIBE_DEFINE_ERROR(EmptyFile);
PRESCRIBE_DEFINE_ERROR(AllTracesRemoved);
PRESCRIBE_DEFINE_ERROR(ConfigError);
PRESCRIBE_DEFINE_ERROR(IoError);

// features
PRESCRIBE_DEFINE_ERROR(TraceTooShort);
PRESCRIBE_DEFINE_ERROR(NoDecisionPoint);
PRESCRIBE_DEFINE_ERROR(NoFeatures);
PRESCRIBE_DEFINE_ERROR(DimensionMismatch);

// orf
PRESCRIBE_DEFINE_ERROR(InsufficientOverlap);
PRESCRIBE_DEFINE_ERROR(DegenerateKernel);
PRESCRIBE_DEFINE_ERROR(ModelFormatError);

// policy
PRESCRIBE_DEFINE_ERROR(NoVariation);
PRESCRIBE_DEFINE_ERROR(TargetUnreachable);

// sensitivity
PRESCRIBE_DEFINE_ERROR(GroupUnknown);
PRESCRIBE_DEFINE_ERROR(FrontierUndefined);

// service
PRESCRIBE_DEFINE_ERROR(OutOfOrderEvent);
PRESCRIBE_DEFINE_ERROR(UnknownModel);
PRESCRIBE_DEFINE_ERROR(PolicyMissing);
PRESCRIBE_DEFINE_ERROR(UnknownCase);
PRESCRIBE_DEFINE_ERROR(NotApplicable);

#undef PRESCRIBE_DEFINE_ERROR

}  // namespace prescribe
