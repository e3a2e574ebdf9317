#pragma once

#include <cmath>
#include <string>

#include "colddamp/errors.hpp"

namespace colddamp::detail {

inline void require_finite(double v, const std::string& field) {
  if (!std::isfinite(v)) throw ValidationError(field, "must be finite");
}

inline void require_positive(double v, const std::string& field) {
  require_finite(v, field);
  if (!(v > 0.0)) throw ValidationError(field, "must be > 0");
}

inline void require_non_negative(double v, const std::string& field) {
  require_finite(v, field);
  if (v < 0.0) throw ValidationError(field, "must be >= 0");
}

}  // namespace colddamp::detail
