#pragma once

// Modality-specific preprocessing that makes H&E and SHG images comparable
// before feature matching: hue extraction for the stained slide, min-max
// normalization, global histogram equalization, 5x5 median filtering, and
// the multi-resolution pyramid used by the exhaustive initial alignment.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmreg/core.hpp"

namespace mmreg {

struct PyramidLevel {
    RasterImage image;
    double scale = 1.0;  // this level's width / original width
};

// Hue channel of the HSV decomposition, normalized to [0, 1] (angle / 360).
// Zero-saturation pixels map to hue 0.
inline RasterImage rgb_to_hue(const RasterImage& img) {
    if (img.channels != 3)
        throw std::invalid_argument("rgb_to_hue: 3-channel image required");
    RasterImage out = RasterImage::zeros(img.width, img.height, 1);
    for (size_t p = 0; p < img.pixel_count(); ++p) {
        const float r = img.data[p * 3 + 0];
        const float g = img.data[p * 3 + 1];
        const float b = img.data[p * 3 + 2];
        const float hi = std::max({r, g, b});
        const float lo = std::min({r, g, b});
        const float delta = hi - lo;
        float h = 0.0f;
        if (delta > 0.0f) {
            if (hi == r)
                h = std::fmod((g - b) / delta, 6.0f);
            else if (hi == g)
                h = (b - r) / delta + 2.0f;
            else
                h = (r - g) / delta + 4.0f;
            h *= 60.0f;
            if (h < 0.0f) h += 360.0f;
        }
        out.data[p] = clamp01(h / 360.0f);
    }
    return out;
}

// Linear stretch of the intensity range to [0, 1]; constant images map to 0.
inline RasterImage normalize_minmax(const RasterImage& img) {
    float lo = img.data[0], hi = img.data[0];
    for (float v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    RasterImage out = img;
    if (hi <= lo) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        return out;
    }
    const float inv = 1.0f / (hi - lo);
    for (float& v : out.data) v = clamp01((v - lo) * inv);
    return out;
}

// Global histogram equalization over `bins` uniform bins on [0, 1]:
// every pixel is replaced by the CDF value of its bin.
inline RasterImage equalize_histogram(const RasterImage& img, int bins = 256) {
    if (img.channels != 1)
        throw std::invalid_argument("equalize_histogram: single-channel image required");
    if (bins < 2)
        throw std::invalid_argument("equalize_histogram: bins must be >= 2");
    std::vector<size_t> hist(bins, 0);
    auto bin_of = [&](float v) {
        int b = static_cast<int>(v * bins);
        return std::min(b, bins - 1);
    };
    for (float v : img.data) ++hist[bin_of(v)];
    std::vector<float> cdf(bins);
    size_t acc = 0;
    const double inv_n = 1.0 / static_cast<double>(img.data.size());
    for (int b = 0; b < bins; ++b) {
        acc += hist[b];
        cdf[b] = static_cast<float>(acc * inv_n);
    }
    RasterImage out = img;
    for (float& v : out.data) v = cdf[bin_of(v)];
    return out;
}

// 5x5 median filter with edge replication at the borders.
inline RasterImage median_filter_5x5(const RasterImage& img) {
    if (img.channels != 1)
        throw std::invalid_argument("median_filter_5x5: single-channel image required");
    if (img.width < 5 || img.height < 5)
        throw std::invalid_argument("median_filter_5x5: image smaller than 5x5");
    RasterImage out = RasterImage::zeros(img.width, img.height, 1);
    float window[25];
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            int k = 0;
            for (int dy = -2; dy <= 2; ++dy) {
                const int yy = std::clamp(y + dy, 0, img.height - 1);
                for (int dx = -2; dx <= 2; ++dx) {
                    const int xx = std::clamp(x + dx, 0, img.width - 1);
                    window[k++] = img.at(xx, yy);
                }
            }
            std::nth_element(window, window + 12, window + 25);
            out.at(x, y) = window[12];
        }
    }
    return out;
}

// Full H&E chain: hue -> normalize -> equalize -> median.
inline RasterImage preprocess_he(const RasterImage& img, int bins = 256) {
    if (img.channels != 3)
        throw std::invalid_argument("preprocess_he: 3-channel image required");
    return median_filter_5x5(equalize_histogram(normalize_minmax(rgb_to_hue(img)), bins));
}

// SHG chain: same without the HSV conversion.
inline RasterImage preprocess_shg(const RasterImage& img, int bins = 256) {
    if (img.channels != 1)
        throw std::invalid_argument("preprocess_shg: single-channel image required");
    return median_filter_5x5(equalize_histogram(normalize_minmax(img), bins));
}

// Channel-count dispatch: 3-channel inputs are treated as stained
// brightfield, single-channel as raw intensity.
inline RasterImage preprocess_for_registration(const RasterImage& img, int bins = 256) {
    return img.channels == 3 ? preprocess_he(img, bins) : preprocess_shg(img, bins);
}

// Aspect-preserving resize so that max(width, height) == target.
inline PyramidLevel resize_to_max_dim(const RasterImage& img, int target) {
    if (target < 1)
        throw std::invalid_argument("resize_to_max_dim: target must be >= 1");
    const int maxdim = std::max(img.width, img.height);
    int new_w, new_h;
    if (img.width >= img.height) {
        new_w = target;
        new_h = std::max(1, static_cast<int>(std::lround(
                                 static_cast<double>(img.height) * target / maxdim)));
    } else {
        new_h = target;
        new_w = std::max(1, static_cast<int>(std::lround(
                                 static_cast<double>(img.width) * target / maxdim)));
    }
    PyramidLevel lvl;
    lvl.image = resize_bilinear(img, new_w, new_h);
    lvl.scale = static_cast<double>(new_w) / img.width;
    return lvl;
}

}  // namespace mmreg
