#include "cotrainlab/imagefx.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cotrainlab::imagefx {

namespace {

void require_odd(int k, const char* what) {
    if (k < 1 || k % 2 == 0) {
        throw InvalidInputError(std::string(what) + ": kernel size must be odd, got " +
                                std::to_string(k));
    }
}

double clamp01(double v) noexcept { return std::clamp(v, 0.0, 1.0); }

double sample_bilinear(const Image& img, double sy, double sx, int c) noexcept {
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const double fy = sy - y0;
    const double fx = sx - x0;
    const int ya = reflect_index(y0, img.height);
    const int yb = reflect_index(y0 + 1, img.height);
    const int xa = reflect_index(x0, img.width);
    const int xb = reflect_index(x0 + 1, img.width);
    const double top = (1.0 - fx) * img.at(ya, xa, c) + fx * img.at(ya, xb, c);
    const double bottom = (1.0 - fx) * img.at(yb, xa, c) + fx * img.at(yb, xb, c);
    return (1.0 - fy) * top + fy * bottom;
}

}  // namespace

void EdgeParams::validate() const {
    if (!(canny_low < canny_high)) {
        throw InvalidConfigError("edge params: canny_low must be below canny_high");
    }
    for (int k : {bilateral_diameter, gaussian_kernel, sobel_kernel}) {
        if (k < 3 || k % 2 == 0) {
            throw InvalidConfigError("edge params: kernel sizes must be odd and >= 3");
        }
    }
    if (sobel_kernel != 3) {
        throw InvalidConfigError("edge params: only the 3x3 Sobel kernel is supported");
    }
    if (bilateral_sigma_color <= 0 || bilateral_sigma_space <= 0 || gaussian_sigma <= 0) {
        throw InvalidConfigError("edge params: sigmas must be positive");
    }
    if (upsample_side < 1) {
        throw InvalidConfigError("edge params: upsample_side must be positive");
    }
}

int reflect_index(int i, int n) noexcept {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

Image to_grayscale(const Image& img) {
    if (img.channels != 3) {
        throw InvalidInputError("to_grayscale: expected 3 channels, got " +
                                std::to_string(img.channels));
    }
    Image out(img.height, img.width, 1);
    const double* src = img.data.data();
    for (std::size_t p = 0; p < out.data.size(); ++p, src += 3) {
        out.data[p] = clamp01(kLumaWeights[0] * src[0] + kLumaWeights[1] * src[1] +
                              kLumaWeights[2] * src[2]);
    }
    return out;
}

Image bilateral_filter(const Image& img, int diameter, double sigma_color, double sigma_space) {
    require_odd(diameter, "bilateral_filter");
    if (sigma_color <= 0 || sigma_space <= 0) {
        throw InvalidInputError("bilateral_filter: sigmas must be positive");
    }
    const int radius = diameter / 2;
    const int channels = img.channels;

    // Circular window; spatial weights precomputed.
    struct Tap {
        int dy, dx;
        double weight;
    };
    std::vector<Tap> taps;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dy * dy + dx * dx > radius * radius) continue;
            taps.push_back({dy, dx, std::exp(-(dy * dy + dx * dx) / (2.0 * sigma_space * sigma_space))});
        }
    }
    const double color_coeff = -0.5 / (sigma_color * sigma_color);

    Image out(img.height, img.width, channels);
    std::vector<double> acc(channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double* center = &img.data[img.index(y, x)];
            std::fill(acc.begin(), acc.end(), 0.0);
            double norm = 0.0;
            for (const Tap& t : taps) {
                const int ny = reflect_index(y + t.dy, img.height);
                const int nx = reflect_index(x + t.dx, img.width);
                const double* nb = &img.data[img.index(ny, nx)];
                double dist2 = 0.0;
                for (int c = 0; c < channels; ++c) {
                    const double d = (nb[c] - center[c]) * 255.0;
                    dist2 += d * d;
                }
                const double w = t.weight * std::exp(dist2 * color_coeff);
                norm += w;
                for (int c = 0; c < channels; ++c) acc[c] += w * nb[c];
            }
            for (int c = 0; c < channels; ++c) out.at(y, x, c) = clamp01(acc[c] / norm);
        }
    }
    return out;
}

std::vector<double> gaussian_taps(int kernel, double sigma) {
    require_odd(kernel, "gaussian_taps");
    if (sigma <= 0) throw InvalidInputError("gaussian_taps: sigma must be positive");
    const int radius = kernel / 2;
    std::vector<double> taps(kernel);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += taps[i + radius];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

Image gaussian_blur(const Image& img, int kernel, double sigma) {
    const auto taps = gaussian_taps(kernel, sigma);
    const int radius = kernel / 2;
    Image tmp(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    s += taps[k + radius] * img.at(y, reflect_index(x + k, img.width), c);
                }
                tmp.at(y, x, c) = s;
            }
        }
    }
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    s += taps[k + radius] * tmp.at(reflect_index(y + k, img.height), x, c);
                }
                out.at(y, x, c) = clamp01(s);
            }
        }
    }
    return out;
}

Gradients sobel_gradients(const Image& gray) {
    if (gray.channels != 1) throw InvalidInputError("sobel_gradients: expected 1 channel");
    const int h = gray.height;
    const int w = gray.width;
    Gradients g{Image(h, w, 1), Image(h, w, 1)};
    for (int y = 0; y < h; ++y) {
        const int ym = reflect_index(y - 1, h);
        const int yp = reflect_index(y + 1, h);
        for (int x = 0; x < w; ++x) {
            const int xm = reflect_index(x - 1, w);
            const int xp = reflect_index(x + 1, w);
            const double tl = gray.at(ym, xm), tc = gray.at(ym, x), tr = gray.at(ym, xp);
            const double ml = gray.at(y, xm), mr = gray.at(y, xp);
            const double bl = gray.at(yp, xm), bc = gray.at(yp, x), br = gray.at(yp, xp);
            g.gx.at(y, x) = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            g.gy.at(y, x) = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
        }
    }
    return g;
}

// max over directions u of sum_p max(0, u . k_p); attained at tan(theta) = 1/2.
double sobel_max_magnitude() noexcept { return std::sqrt(20.0); }

Image sobel_edges(const Image& img, const EdgeParams& params) {
    Image work = img;
    if (work.height != params.upsample_side || work.width != params.upsample_side) {
        work = resize_bilinear(work, params.upsample_side, params.upsample_side);
    }
    if (work.channels == 3) work = to_grayscale(work);
    work = gaussian_blur(work, params.gaussian_kernel, params.gaussian_sigma);
    const Gradients g = sobel_gradients(work);
    Image out(work.height, work.width, 1);
    const double scale = 1.0 / sobel_max_magnitude();
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = clamp01(std::hypot(g.gx.data[i], g.gy.data[i]) * scale);
    }
    return out;
}

Image canny_edges(const Image& img, const EdgeParams& params) {
    Image work = bilateral_filter(img, params.bilateral_diameter, params.bilateral_sigma_color,
                                  params.bilateral_sigma_space);
    if (work.channels == 3) work = to_grayscale(work);
    for (double& v : work.data) v *= 255.0;

    const int h = work.height;
    const int w = work.width;
    const Gradients g = sobel_gradients(work);
    std::vector<double> mag(work.data.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(g.gx.data[i], g.gy.data[i]);
    auto m = [&](int y, int x) {
        return mag[static_cast<std::size_t>(reflect_index(y, h)) * w + reflect_index(x, w)];
    };

    // Non-maximum suppression across the gradient direction, quantized to
    // 0/45/90/135 degrees. Plateaus keep the first pixel along the direction.
    const double tan22 = std::tan(M_PI / 8.0);
    const double tan67 = std::tan(3.0 * M_PI / 8.0);
    enum : std::uint8_t { kNone = 0, kWeak = 1, kStrong = 2 };
    std::vector<std::uint8_t> state(mag.size(), kNone);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double v = mag[i];
            if (v <= params.canny_low) continue;
            const double ax = std::abs(g.gx.data[i]);
            const double ay = std::abs(g.gy.data[i]);
            double before, after;
            if (ay <= tan22 * ax) {
                before = m(y, x - 1);
                after = m(y, x + 1);
            } else if (ay > tan67 * ax) {
                before = m(y - 1, x);
                after = m(y + 1, x);
            } else if ((g.gx.data[i] > 0) == (g.gy.data[i] > 0)) {
                before = m(y - 1, x - 1);
                after = m(y + 1, x + 1);
            } else {
                before = m(y - 1, x + 1);
                after = m(y + 1, x - 1);
            }
            if (v > before && v >= after) state[i] = v > params.canny_high ? kStrong : kWeak;
        }
    }

    // Hysteresis: flood fill from strong pixels through 8-connected weak ones.
    Image out(h, w, 1);
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (state[i] == kStrong) stack.push_back(i);
    }
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        if (out.data[i] != 0.0) continue;
        out.data[i] = 1.0;
        const int y = static_cast<int>(i / w);
        const int x = static_cast<int>(i % w);
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int ny = y + dy;
                const int nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
                if (state[j] != kNone && out.data[j] == 0.0) stack.push_back(j);
            }
        }
    }
    return out;
}

Image apply_tint(const Image& img, std::size_t class_id, const Tint& tints) {
    if (class_id >= tints.classes()) {
        throw InvalidInputError("apply_tint: class " + std::to_string(class_id) +
                                " has no tint (" + std::to_string(tints.classes()) + " defined)");
    }
    if (img.channels != 3) throw InvalidInputError("apply_tint: expected 3 channels");
    const auto& offset = tints.rgb_offset[class_id];
    Image out = img;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = clamp01(out.data[i] + offset[i % 3]);
    }
    return out;
}

Image resize_bilinear(const Image& img, int new_h, int new_w) {
    if (new_h < 1 || new_w < 1) {
        throw InvalidInputError("resize_bilinear: target dimensions must be positive");
    }
    if (img.height < 1 || img.width < 1) throw InvalidInputError("resize_bilinear: empty image");
    if (new_h == img.height && new_w == img.width) return img;
    Image out(new_h, new_w, img.channels);
    const double sy_scale = static_cast<double>(img.height) / new_h;
    const double sx_scale = static_cast<double>(img.width) / new_w;
    for (int y = 0; y < new_h; ++y) {
        const double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < new_w; ++x) {
            const double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double fx = sx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
                const double bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
                out.at(y, x, c) = clamp01((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

Image hflip(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
            }
        }
    }
    return out;
}

Image rotate(const Image& img, double degrees) {
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad);
    const double sn = std::sin(rad);
    const double cy = (img.height - 1) / 2.0;
    const double cx = (img.width - 1) / 2.0;
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            // Inverse map: rotate the output coordinate by -angle. No clamp, so
            // centered inputs survive augmentation unchanged in range.
            const double dy = y - cy;
            const double dx = x - cx;
            const double sx = cs * dx + sn * dy + cx;
            const double sy = -sn * dx + cs * dy + cy;
            for (int c = 0; c < img.channels; ++c) {
                out.at(y, x, c) = sample_bilinear(img, sy, sx, c);
            }
        }
    }
    return out;
}

Image pad_crop(const Image& img, int pad, int top, int left) {
    if (pad < 0 || top < 0 || left < 0 || top > 2 * pad || left > 2 * pad) {
        throw InvalidInputError("pad_crop: crop window outside the padded image");
    }
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y) {
        const int sy = reflect_index(y + top - pad, img.height);
        for (int x = 0; x < img.width; ++x) {
            const int sx = reflect_index(x + left - pad, img.width);
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg) {
    if (cfg.crop_pad < 0) throw InvalidInputError("augment: crop_pad must be >= 0");
    Image out = img;
    if (cfg.crop_pad > 0) {
        const auto span = static_cast<std::uint64_t>(2 * cfg.crop_pad + 1);
        const int top = static_cast<int>(rng.below(span));
        const int left = static_cast<int>(rng.below(span));
        out = pad_crop(out, cfg.crop_pad, top, left);
    }
    if (cfg.hflip && rng.bernoulli(0.5)) out = hflip(out);
    if (cfg.max_rot_deg > 0.0) out = rotate(out, rng.uniform(-cfg.max_rot_deg, cfg.max_rot_deg));
    return out;
}

}  // namespace cotrainlab::imagefx
