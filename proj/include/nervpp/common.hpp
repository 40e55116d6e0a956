#pragma once

#include <stdexcept>
#include <string>

namespace nervpp {

// Malformed or inconsistent external input: files, streams, shapes that
// come from user data rather than programming mistakes.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf escaped a numeric stage.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace nervpp
