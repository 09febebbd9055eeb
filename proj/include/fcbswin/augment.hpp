#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "fcbswin/common.hpp"
#include "fcbswin/rng.hpp"
#include "fcbswin/tensor.hpp"

namespace fcbswin {

struct AugmentConfig {
    double flip_prob = 0.5;
    std::array<double, 2> scale_range{0.5, 1.5};
    std::array<double, 2> shear_deg{-22.5, 22.5};
    std::array<double, 2> translate_px{-48.0, 48.0};
    std::array<double, 2> rotate_deg{-180.0, 180.0};
    std::array<double, 2> brightness{0.6, 1.4};
    std::array<double, 2> contrast{0.5, 1.5};
    std::array<double, 2> saturation{0.75, 1.25};
    std::array<double, 2> hue_factor{0.99, 1.01};
    int64_t blur_kernel = 25;
    std::array<double, 2> blur_sigma{0.001, 2.0};

    void validate() const {
        check(flip_prob >= 0.0 && flip_prob <= 1.0, "flip_prob out of [0,1]");
        check(blur_kernel % 2 == 1 && blur_kernel >= 1, "blur_kernel must be odd");
        for (const auto& r : {scale_range, shear_deg, translate_px, rotate_deg, brightness,
                              contrast, saturation, hue_factor, blur_sigma})
            check(r[0] <= r[1], "range must satisfy lo <= hi");
    }

    /// All ranges collapsed to the identity transform; used by tests.
    static AugmentConfig identity() {
        AugmentConfig cfg;
        cfg.flip_prob = 0.0;
        cfg.scale_range = {1.0, 1.0};
        cfg.shear_deg = {0.0, 0.0};
        cfg.translate_px = {0.0, 0.0};
        cfg.rotate_deg = {0.0, 0.0};
        cfg.brightness = {1.0, 1.0};
        cfg.contrast = {1.0, 1.0};
        cfg.saturation = {1.0, 1.0};
        cfg.hue_factor = {1.0, 1.0};
        cfg.blur_sigma = {0.001, 0.001};
        return cfg;
    }
};

/// Per-sample stream: identical (global_seed, epoch, sample_index) keys yield
/// identical draw sequences regardless of worker scheduling.
inline Rng sample_rng(uint64_t global_seed, uint64_t epoch, uint64_t sample_index) {
    return Rng::keyed({global_seed, epoch, sample_index});
}

namespace detail {

/// 2x3 affine source<-destination map: src = A * (dst - c - t) + c, stored as
/// the inverse pieces so sampling needs one multiply-add per pixel.
struct AffineInverse {
    double a00, a01, a10, a11;  // inverse linear part
    double cx, cy;              // center of both frames
    double tx, ty;              // translation (destination frame)

    void src_of(double dx, double dy, double& sx, double& sy) const {
        double ux = dx - cx - tx;
        double uy = dy - cy - ty;
        sx = a00 * ux + a01 * uy + cx;
        sy = a10 * ux + a11 * uy + cy;
    }
};

struct GeometricDraw {
    bool hflip, vflip;
    double scale, shear, rotate, tx, ty;
};

/// Fixed draw order: hflip, vflip, scale, shear, rotate, tx, ty.
inline GeometricDraw draw_geometric(Rng& rng, const AugmentConfig& cfg) {
    GeometricDraw d;
    d.hflip = rng.bernoulli(cfg.flip_prob);
    d.vflip = rng.bernoulli(cfg.flip_prob);
    d.scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
    d.shear = rng.uniform(cfg.shear_deg[0], cfg.shear_deg[1]);
    d.rotate = rng.uniform(cfg.rotate_deg[0], cfg.rotate_deg[1]);
    d.tx = rng.uniform(cfg.translate_px[0], cfg.translate_px[1]);
    d.ty = rng.uniform(cfg.translate_px[0], cfg.translate_px[1]);
    return d;
}

/// Forward linear part is R(rotate) * Shear_x(shear) * diag(+-scale, +-scale)
/// about the image center (W-1)/2, (H-1)/2; inverted analytically.
inline AffineInverse affine_inverse(const GeometricDraw& d, int64_t h, int64_t w) {
    constexpr double deg = 3.14159265358979323846 / 180.0;
    double th = d.rotate * deg, sh = std::tan(d.shear * deg);
    double fx = (d.hflip ? -1.0 : 1.0) * d.scale;
    double fy = (d.vflip ? -1.0 : 1.0) * d.scale;
    double c = std::cos(th), s = std::sin(th);
    // M = R * Shear * F
    double m00 = c * fx, m01 = (c * sh - s) * fy;
    double m10 = s * fx, m11 = (s * sh + c) * fy;
    double det = m00 * m11 - m01 * m10;
    check(std::abs(det) > 1e-12, "degenerate affine transform");
    AffineInverse inv;
    inv.a00 = m11 / det;
    inv.a01 = -m01 / det;
    inv.a10 = -m10 / det;
    inv.a11 = m00 / det;
    inv.cx = (static_cast<double>(w) - 1.0) / 2.0;
    inv.cy = (static_cast<double>(h) - 1.0) / 2.0;
    inv.tx = d.tx;
    inv.ty = d.ty;
    return inv;
}

template <typename T>
T bilinear_at(const Tensor<T>& img, int64_t h, int64_t w, int64_t ch, int64_t c, double sy,
              double sx) {
    // zero fill outside the source extent
    int64_t x0 = static_cast<int64_t>(std::floor(sx));
    int64_t y0 = static_cast<int64_t>(std::floor(sy));
    double wx = sx - static_cast<double>(x0), wy = sy - static_cast<double>(y0);
    double acc = 0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            int64_t y = y0 + dy, x = x0 + dx;
            if (y < 0 || y >= h || x < 0 || x >= w) continue;
            double wgt = (dx ? wx : 1.0 - wx) * (dy ? wy : 1.0 - wy);
            acc += wgt * static_cast<double>(img.data[(y * w + x) * ch + c]);
        }
    return static_cast<T>(acc);
}

template <typename T>
T nearest_at(const Tensor<T>& img, int64_t h, int64_t w, double sy, double sx) {
    int64_t x = static_cast<int64_t>(std::llround(sx));
    int64_t y = static_cast<int64_t>(std::llround(sy));
    if (y < 0 || y >= h || x < 0 || x >= w) return T(0);
    return img.data[y * w + x];
}

template <typename T>
T rgb_gray(T r, T g, T b) {
    return static_cast<T>(0.299 * r + 0.587 * g + 0.114 * b);
}

template <typename T>
T clamp01(T v) {
    return std::min(T(1), std::max(T(0), v));
}

}  // namespace detail

/// Applies one sampled affine transform (flips, scale, shear, rotation,
/// translation) to the HxWx3 image (bilinear) and HxW mask (nearest); borders
/// fill with 0 and the mask stays binary.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> geometric_augment(const Tensor<T>& image, const Tensor<T>& mask,
                                                  Rng& rng, const AugmentConfig& cfg) {
    if (image.shape.size() != 3 || image.shape[2] != 3)
        throw ShapeMismatch("geometric_augment: image must be HxWx3");
    if (mask.shape.size() != 2 || mask.shape[0] != image.shape[0] ||
        mask.shape[1] != image.shape[1])
        throw ShapeMismatch("geometric_augment: mask dims must match image");
    cfg.validate();
    int64_t h = image.shape[0], w = image.shape[1];
    auto draw = detail::draw_geometric(rng, cfg);
    auto inv = detail::affine_inverse(draw, h, w);

    Tensor<T> out_img(image.shape);
    Tensor<T> out_mask(mask.shape);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double sx, sy;
            inv.src_of(static_cast<double>(x), static_cast<double>(y), sx, sy);
            for (int64_t c = 0; c < 3; ++c)
                out_img.data[(y * w + x) * 3 + c] = detail::bilinear_at(image, h, w, 3, c, sy, sx);
            out_mask.data[y * w + x] = detail::nearest_at(mask, h, w, sy, sx);
        }
    return {std::move(out_img), std::move(out_mask)};
}

namespace detail {

template <typename T>
void rgb_to_hsv(T r, T g, T b, T& hh, T& ss, T& vv) {
    T mx = std::max({r, g, b}), mn = std::min({r, g, b});
    T d = mx - mn;
    vv = mx;
    ss = mx > 0 ? d / mx : T(0);
    if (d == 0) {
        hh = 0;
        return;
    }
    T h6;
    if (mx == r)
        h6 = (g - b) / d;
    else if (mx == g)
        h6 = (b - r) / d + T(2);
    else
        h6 = (r - g) / d + T(4);
    hh = h6 / T(6);
    if (hh < 0) hh += T(1);
}

template <typename T>
void hsv_to_rgb(T hh, T ss, T vv, T& r, T& g, T& b) {
    T h6 = hh * T(6);
    int64_t i = static_cast<int64_t>(std::floor(h6)) % 6;
    if (i < 0) i += 6;
    T f = h6 - std::floor(h6);
    T p = vv * (T(1) - ss);
    T q = vv * (T(1) - ss * f);
    T t = vv * (T(1) - ss * (T(1) - f));
    switch (i) {
        case 0: r = vv, g = t, b = p; break;
        case 1: r = q, g = vv, b = p; break;
        case 2: r = p, g = vv, b = t; break;
        case 3: r = p, g = q, b = vv; break;
        case 4: r = t, g = p, b = vv; break;
        default: r = vv, g = p, b = q; break;
    }
}

/// Separable Gaussian blur, replicate borders, normalized kernel.
template <typename T>
void gaussian_blur_inplace(Tensor<T>& img, int64_t ksize, double sigma) {
    int64_t h = img.shape[0], w = img.shape[1], ch = img.shape[2];
    int64_t r = ksize / 2;
    std::vector<double> kernel(static_cast<size_t>(ksize));
    double sum = 0;
    for (int64_t i = -r; i <= r; ++i) {
        double v = std::exp(-0.5 * (static_cast<double>(i) / sigma) * (static_cast<double>(i) / sigma));
        kernel[static_cast<size_t>(i + r)] = v;
        sum += v;
    }
    for (auto& v : kernel) v /= sum;

    auto clampi = [](int64_t v, int64_t hi) { return std::min(hi - 1, std::max<int64_t>(0, v)); };
    Tensor<T> tmp(img.shape);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < ch; ++c) {
                double acc = 0;
                for (int64_t i = -r; i <= r; ++i)
                    acc += kernel[static_cast<size_t>(i + r)] *
                           static_cast<double>(img.data[(y * w + clampi(x + i, w)) * ch + c]);
                tmp.data[(y * w + x) * ch + c] = static_cast<T>(acc);
            }
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < ch; ++c) {
                double acc = 0;
                for (int64_t i = -r; i <= r; ++i)
                    acc += kernel[static_cast<size_t>(i + r)] *
                           static_cast<double>(tmp.data[(clampi(y + i, h) * w + x) * ch + c]);
                img.data[(y * w + x) * ch + c] = static_cast<T>(acc);
            }
}

}  // namespace detail

/// Color jitter (brightness, contrast, saturation, multiplicative HSV hue)
/// followed by Gaussian blur. Input and output are HxWx3 in [0,1]; clamps
/// instead of erroring. Draw order: brightness, contrast, saturation, hue,
/// sigma.
template <typename T>
Tensor<T> color_augment(const Tensor<T>& image, Rng& rng, const AugmentConfig& cfg) {
    if (image.shape.size() != 3 || image.shape[2] != 3)
        throw ShapeMismatch("color_augment: image must be HxWx3");
    cfg.validate();
    double b = rng.uniform(cfg.brightness[0], cfg.brightness[1]);
    double c = rng.uniform(cfg.contrast[0], cfg.contrast[1]);
    double s = rng.uniform(cfg.saturation[0], cfg.saturation[1]);
    double f = rng.uniform(cfg.hue_factor[0], cfg.hue_factor[1]);
    double sigma = rng.uniform(cfg.blur_sigma[0], cfg.blur_sigma[1]);

    Tensor<T> out = image;
    int64_t n = out.shape[0] * out.shape[1];
    // brightness
    for (auto& v : out.data) v = detail::clamp01(static_cast<T>(v * b));
    // contrast around the mean gray level
    double mean = 0;
    for (int64_t i = 0; i < n; ++i)
        mean += static_cast<double>(
            detail::rgb_gray(out.data[i * 3], out.data[i * 3 + 1], out.data[i * 3 + 2]));
    mean /= static_cast<double>(n);
    for (auto& v : out.data)
        v = detail::clamp01(static_cast<T>((static_cast<double>(v) - mean) * c + mean));
    // saturation: blend toward per-pixel gray
    for (int64_t i = 0; i < n; ++i) {
        T gray = detail::rgb_gray(out.data[i * 3], out.data[i * 3 + 1], out.data[i * 3 + 2]);
        for (int64_t k = 0; k < 3; ++k)
            out.data[i * 3 + k] = detail::clamp01(
                static_cast<T>(s * static_cast<double>(out.data[i * 3 + k]) + (1.0 - s) * gray));
    }
    // multiplicative hue in HSV, wrapped into [0,1)
    if (f != 1.0) {
        for (int64_t i = 0; i < n; ++i) {
            T hh, ss, vv;
            detail::rgb_to_hsv(out.data[i * 3], out.data[i * 3 + 1], out.data[i * 3 + 2], hh, ss,
                               vv);
            hh = static_cast<T>(std::fmod(static_cast<double>(hh) * f, 1.0));
            detail::hsv_to_rgb(hh, ss, vv, out.data[i * 3], out.data[i * 3 + 1],
                               out.data[i * 3 + 2]);
        }
    }
    detail::gaussian_blur_inplace(out, cfg.blur_kernel, sigma);
    for (auto& v : out.data) v = detail::clamp01(v);
    return out;
}

/// x -> 2x - 1, mapping [0,1] onto [-1,1].
template <typename T>
Tensor<T> normalize(const Tensor<T>& image) {
    Tensor<T> out = image;
    for (auto& v : out.data) v = static_cast<T>(2) * v - static_cast<T>(1);
    return out;
}

/// Bilinear image / nearest mask resize (half-pixel centers); mask stays
/// binary. A same-size resize is the identity.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> resize_pair(const Tensor<T>& image, const Tensor<T>& mask,
                                            int64_t out_h, int64_t out_w) {
    if (image.shape.size() != 3 || image.shape[2] != 3)
        throw ShapeMismatch("resize_pair: image must be HxWx3");
    if (mask.shape.size() != 2 || mask.shape[0] != image.shape[0] ||
        mask.shape[1] != image.shape[1])
        throw ShapeMismatch("resize_pair: mask dims must match image");
    int64_t h = image.shape[0], w = image.shape[1];
    if (h < 1 || w < 1 || out_h < 1 || out_w < 1) throw ZeroDimension("resize_pair");

    double sy = static_cast<double>(h) / static_cast<double>(out_h);
    double sx = static_cast<double>(w) / static_cast<double>(out_w);
    Tensor<T> out_img({out_h, out_w, 3});
    Tensor<T> out_mask({out_h, out_w});
    for (int64_t y = 0; y < out_h; ++y)
        for (int64_t x = 0; x < out_w; ++x) {
            double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
            double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
            // clamp so edges replicate rather than fade to the zero border
            double cy = std::min(static_cast<double>(h - 1), std::max(0.0, src_y));
            double cx = std::min(static_cast<double>(w - 1), std::max(0.0, src_x));
            for (int64_t c = 0; c < 3; ++c)
                out_img.data[(y * out_w + x) * 3 + c] =
                    detail::bilinear_at(image, h, w, 3, c, cy, cx);
            int64_t ny = std::min(h - 1, static_cast<int64_t>(std::floor(
                                             (static_cast<double>(y) + 0.5) * sy)));
            int64_t nx = std::min(w - 1, static_cast<int64_t>(std::floor(
                                             (static_cast<double>(x) + 0.5) * sx)));
            out_mask.data[y * out_w + x] = mask.data[ny * w + nx];
        }
    return {std::move(out_img), std::move(out_mask)};
}

/// Full training-time pipeline in the fixed order geometric -> color ->
/// normalize. Inputs are the already-resized [0,1] image and binary mask.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment_train_pair(const Tensor<T>& image, const Tensor<T>& mask,
                                                   Rng& rng, const AugmentConfig& cfg) {
    auto [gi, gm] = geometric_augment(image, mask, rng, cfg);
    Tensor<T> ci = color_augment(gi, rng, cfg);
    return {normalize(ci), std::move(gm)};
}

}  // namespace fcbswin
