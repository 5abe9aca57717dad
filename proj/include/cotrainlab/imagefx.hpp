#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cotrainlab/image.hpp"
#include "cotrainlab/rng.hpp"

// Image kernels behind the shape priors (Sobel and Canny edge maps) and the
// dataset perturbations (tint, augmentation). All functions are pure.
// Borders use reflect-101 padding: for "abcd", index -1 maps to 'b'.
namespace cotrainlab::imagefx {

struct EdgeParams {
    int bilateral_diameter = 5;
    double bilateral_sigma_color = 75.0;  // 8-bit intensity units
    double bilateral_sigma_space = 75.0;  // pixels
    double canny_low = 100.0;             // 8-bit gradient units
    double canny_high = 200.0;
    int gaussian_kernel = 5;
    double gaussian_sigma = 5.0;
    int sobel_kernel = 3;
    int upsample_side = 128;

    // Throws InvalidConfigError when thresholds or kernel sizes are invalid.
    void validate() const;
};

// Per-class additive RGB offsets.
struct Tint {
    std::vector<std::array<double, 3>> rgb_offset;

    std::size_t classes() const noexcept { return rgb_offset.size(); }
};

struct AugmentConfig {
    int crop_pad = 0;
    bool hflip = false;
    double max_rot_deg = 0.0;

    bool enabled() const noexcept { return crop_pad > 0 || hflip || max_rot_deg > 0.0; }
};

// Maps an out-of-range coordinate into [0, n) by reflect-101.
int reflect_index(int i, int n) noexcept;

inline constexpr std::array<double, 3> kLumaWeights{0.299, 0.587, 0.114};

Image to_grayscale(const Image& img);

Image bilateral_filter(const Image& img, int diameter, double sigma_color, double sigma_space);

// Normalized 1-D Gaussian taps of odd length `kernel`.
std::vector<double> gaussian_taps(int kernel, double sigma);

Image gaussian_blur(const Image& img, int kernel, double sigma);

struct Gradients {
    Image gx;
    Image gy;
};

// 3x3 Sobel derivatives of a single-channel image (x to the right, y down).
Gradients sobel_gradients(const Image& gray);

// Largest |(Gx, Gy)| the 3x3 Sobel pair can produce on inputs in [0, 1].
double sobel_max_magnitude() noexcept;

Image sobel_edges(const Image& img, const EdgeParams& params);

Image canny_edges(const Image& img, const EdgeParams& params);

Image apply_tint(const Image& img, std::size_t class_id, const Tint& tints);

Image resize_bilinear(const Image& img, int new_h, int new_w);

Image hflip(const Image& img);

// Rotation about the image center with bilinear resampling.
Image rotate(const Image& img, double degrees);

// Reflect-pad by `pad` then crop an H x W window at (top, left) of the padded
// image; top and left lie in [0, 2 * pad].
Image pad_crop(const Image& img, int pad, int top, int left);

Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg);

}  // namespace cotrainlab::imagefx
