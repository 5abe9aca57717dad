#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "cotrainlab/image.hpp"
#include "cotrainlab/rng.hpp"

namespace testutil {

using cotrainlab::Image;

inline Image noise_image(int h, int w, int c, std::uint64_t seed) {
    cotrainlab::Rng rng(seed * 7919 + 13);
    Image img(h, w, c);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

// Piecewise-constant blocks plus mild noise: gives Canny real edges.
inline Image blocky_image(int h, int w, int c, std::uint64_t seed) {
    cotrainlab::Rng rng(seed * 104729 + 1);
    Image img(h, w, c);
    const int by = 2 + static_cast<int>(rng.below(4));
    const int bx = 2 + static_cast<int>(rng.below(4));
    std::vector<double> level(64 * 3);
    for (double& v : level) v = rng.uniform();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) {
                const int cell = ((y / by) * 8 + (x / bx)) % 64;
                img.at(y, x, k) = std::clamp(level[cell * 3 + k] + 0.05 * (rng.uniform() - 0.5), 0.0, 1.0);
            }
    return img;
}

inline double max_diff(const Image& a, const Image& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

inline double sum(const Image& a) {
    double s = 0;
    for (double v : a.data) s += v;
    return s;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cotrainlab_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
