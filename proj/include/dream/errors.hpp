#pragma once

#include <stdexcept>

namespace dream {

/// A loss, gradient or sampled value became NaN or infinite.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dream
