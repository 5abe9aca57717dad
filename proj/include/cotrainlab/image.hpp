#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cotrainlab/error.hpp"

namespace cotrainlab {

// Dense row-major H x W x C image, intensities in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;

    Image(int h, int w, int c, double fill = 0.0) : height(h), width(w), channels(c) {
        if (h < 0 || w < 0 || (c != 1 && c != 3)) {
            throw InvalidInputError("image: bad shape " + std::to_string(h) + "x" +
                                    std::to_string(w) + "x" + std::to_string(c));
        }
        data.assign(static_cast<std::size_t>(h) * w * c, fill);
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height) * width; }

    std::size_t index(int y, int x, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }

    double& at(int y, int x, int c = 0) noexcept { return data[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const noexcept { return data[index(y, x, c)]; }

    std::span<const double> values() const noexcept { return data; }

    bool same_shape(const Image& other) const noexcept {
        return height == other.height && width == other.width && channels == other.channels;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace cotrainlab
