#pragma once

#include <stdexcept>
#include <string>

namespace lip3d {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape / axis mismatch between tensors or point clouds.
struct DimensionError : Error {
  using Error::Error;
};

// Bad argument values (out-of-range labels, invalid ranges, empty input).
struct ValueError : Error {
  using Error::Error;
};

// Landmark configuration that leaves a rigid correction undefined.
struct DegenerateCloudError : Error {
  using Error::Error;
};

// Malformed on-disk data; message carries file and offset/line.
struct ParseError : Error {
  using Error::Error;
};

// CLI / JSON config schema violation.
struct ConfigError : Error {
  using Error::Error;
};

// Training aborted (non-finite loss); message carries step, lr, grad norms.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace lip3d
