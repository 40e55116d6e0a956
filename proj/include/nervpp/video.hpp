#pragma once

#include <cstdint>
#include <vector>

#include "nervpp/tensor.hpp"

namespace nervpp {

// Planar (T,3,H,W) frame sequence with samples in [0,1].
struct VideoFrames {
    std::int64_t t = 0, h = 0, w = 0;
    std::vector<double> data;

    std::int64_t frame_elems() const { return 3 * h * w; }

    // DataError on dimension/length/range violations.
    void validate() const;

    Tensor frame(std::int64_t i) const;  // (1,3,H,W)
    Tensor to_tensor() const;            // (T,3,H,W)
};

}  // namespace nervpp
