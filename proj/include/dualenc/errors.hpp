#pragma once

#include <stdexcept>
#include <string>

namespace dualenc {

// A file that cannot be opened at all. The CLI maps this to a usage error.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file that opened but does not conform to its format.
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dualenc
