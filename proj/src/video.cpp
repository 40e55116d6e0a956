#include "nervpp/video.hpp"

#include <string>

#include "nervpp/common.hpp"

namespace nervpp {

void VideoFrames::validate() const {
    if (t < 1 || h < 1 || w < 1)
        throw DataError("video dimensions must be positive, got T=" + std::to_string(t) +
                        " H=" + std::to_string(h) + " W=" + std::to_string(w));
    if (static_cast<std::int64_t>(data.size()) != t * frame_elems())
        throw DataError("video buffer length does not match T*3*H*W");
    for (double v : data)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("video samples must lie in [0,1]");
}

Tensor VideoFrames::frame(std::int64_t i) const {
    if (i < 0 || i >= t) throw DataError("frame index out of range");
    const std::int64_t n = frame_elems();
    const auto* p = data.data() + i * n;
    return Tensor::from_vector({1, 3, h, w}, std::vector<double>(p, p + n));
}

Tensor VideoFrames::to_tensor() const {
    validate();
    return Tensor::from_vector({t, 3, h, w}, data);
}

}  // namespace nervpp
