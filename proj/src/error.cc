#include "prescribe/error.h"

namespace prescribe {

Error::Error(std::string kind, const std::string& message)
    : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

}  // namespace prescribe
