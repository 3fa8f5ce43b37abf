#pragma once

#include <cstddef>
#include <vector>

namespace petlab {

// Dense H x W x 3 image, RGB interleaved, double precision. Values are raw
// pixel intensities or normalized values depending on pipeline stage.
struct ImageTensor {
    int height = 0;
    int width = 0;
    std::vector<double> data; // (y * width + x) * 3 + c

    static ImageTensor zeros(int h, int w) {
        ImageTensor t;
        t.height = h;
        t.width = w;
        t.data.assign(static_cast<std::size_t>(h) * w * 3, 0.0);
        return t;
    }

    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

} // namespace petlab
