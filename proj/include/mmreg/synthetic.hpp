#pragma once

// Seeded synthetic stained/structural image pairs with exact ground truth.
// The stained image is a pink background with purple blobs and fiber strokes;
// its structural counterpart is the gradient magnitude of the luminance,
// sparsified below a percentile (structure-only signal with missing data),
// then warped by the requested rotation/scale/translation plus a smooth
// sinusoidal deformation. The returned transform/field map target
// coordinates into the source frame (pull), so they are directly comparable
// with registration output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mmreg/core.hpp"
#include "mmreg/features.hpp"  // gaussian blur helper

namespace mmreg {

struct SyntheticPair {
    RasterImage he;   // 3-channel stained source
    RasterImage shg;  // 1-channel structural target
    AffineTransform2D gt_transform;  // affine part of the ground truth
    DisplacementField gt_field;      // total ground truth, sinusoid included
    LandmarkSet landmarks_source;    // grid landmarks mapped into the source frame
    LandmarkSet landmarks_target;    // grid landmarks on the target frame
};

namespace detail {

// deterministic uniform double in [0, 1) independent of library distributions
inline double next_u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

inline SyntheticPair make_synthetic_pair(uint64_t seed, int size, double rotation_deg,
                                         double tx, double ty, double deform_amplitude,
                                         double scale = 1.0) {
    if (size < 64) throw std::invalid_argument("make_synthetic_pair: size must be >= 64");
    if (deform_amplitude < 0.0)
        throw std::invalid_argument("make_synthetic_pair: negative deform amplitude");
    if (!(scale > 0.0)) throw std::invalid_argument("make_synthetic_pair: scale must be > 0");

    std::mt19937_64 rng(seed);
    auto u01 = [&rng]() { return detail::next_u01(rng); };

    SyntheticPair out;
    out.he = RasterImage::zeros(size, size, 3);

    auto hsv = [](double h, double s, double v, double rgb[3]) {
        const double hh = (h - std::floor(h)) * 6.0;
        const int sector = static_cast<int>(hh) % 6;
        const double f = hh - std::floor(hh);
        const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
        switch (sector) {
            case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
            case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
            case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
            case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
            case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
            default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
        }
    };

    // Stain model: the background and the nuclei-like blobs share one hue
    // family (they differ in brightness only), while the fiber strokes carry a
    // clearly separated hue. Hue extraction therefore isolates the fibers —
    // the same structures the gradient-magnitude channel is dominated by —
    // which is what makes the two modalities registrable at all.
    const double bg_hue = 0.83, fiber_hue = 0.97;

    // background: pale pink-lavender with a gentle brightness wave (hue-flat)
    double wave_fx = (1.0 + 2.0 * u01()) / size;
    double wave_fy = (1.0 + 2.0 * u01()) / size;
    double wave_ph = 2.0 * M_PI * u01();
    double bg_rgb[3];
    hsv(bg_hue, 0.15, 0.93, bg_rgb);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double gain =
                1.0 + 0.02 * std::sin(2.0 * M_PI * (x * wave_fx + y * wave_fy) + wave_ph);
            for (int c = 0; c < 3; ++c)
                out.he.data[(static_cast<size_t>(y) * size + x) * 3 + c] =
                    static_cast<float>(clamp01(bg_rgb[c] * gain));
        }

    auto blend = [&](int x, int y, double alpha, const double color[3]) {
        if (x < 0 || y < 0 || x >= size || y >= size || alpha <= 0.0) return;
        float* px = &out.he.data[(static_cast<size_t>(y) * size + x) * 3];
        for (int c = 0; c < 3; ++c)
            px[c] = static_cast<float>(clamp01((1.0 - alpha) * px[c] + alpha * color[c]));
    };

    // blobs: darker but hue-matched to the background, so they are strong in
    // luminance (visible to the structural channel) yet vanish under hue
    const int blob_count = std::max(30, size * size / 2600);
    for (int i = 0; i < blob_count; ++i) {
        const double cx = u01() * size, cy = u01() * size;
        const double r = 4.0 + 12.0 * u01();
        double color[3];
        hsv(bg_hue + 0.015 * (u01() - 0.5), 0.20 + 0.10 * u01(), 0.40 + 0.15 * u01(), color);
        const int x0 = static_cast<int>(std::floor(cx - r - 1)),
                  x1 = static_cast<int>(std::ceil(cx + r + 1));
        const int y0 = static_cast<int>(std::floor(cy - r - 1)),
                  y1 = static_cast<int>(std::ceil(cy + r + 1));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d = std::hypot(x - cx, y - cy);
                blend(x, y, std::clamp((r - d) / (0.35 * r), 0.0, 1.0), color);
            }
    }

    // fibers: dense stroke network in the contrasting hue; crossings make the
    // corner-like features both modalities detect at the same spots
    const int fiber_count = std::max(40, size * size / 2200);
    for (int i = 0; i < fiber_count; ++i) {
        const double px = u01() * size, py = u01() * size;
        const double phi = 2.0 * M_PI * u01();
        const double len = (40.0 + 100.0 * u01()) * size / 512.0;
        const double half_w = 1.6 + 1.4 * u01();
        double color[3];
        hsv(fiber_hue + 0.02 * (u01() - 0.5), 0.50 + 0.15 * u01(), 0.50 + 0.12 * u01(), color);
        const double ex = px + len * std::cos(phi), ey = py + len * std::sin(phi);
        const int x0 = static_cast<int>(std::floor(std::min(px, ex) - half_w - 2));
        const int x1 = static_cast<int>(std::ceil(std::max(px, ex) + half_w + 2));
        const int y0 = static_cast<int>(std::floor(std::min(py, ey) - half_w - 2));
        const int y1 = static_cast<int>(std::ceil(std::max(py, ey) + half_w + 2));
        const double seg_len2 = std::max(1e-9, (ex - px) * (ex - px) + (ey - py) * (ey - py));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double t =
                    std::clamp(((x - px) * (ex - px) + (y - py) * (ey - py)) / seg_len2, 0.0, 1.0);
                const double d = std::hypot(x - (px + t * (ex - px)), y - (py + t * (ey - py)));
                blend(x, y, 0.9 * std::clamp((half_w - d) / 1.5, 0.0, 1.0), color);
            }
    }

    // structural channel: blurred gradient magnitude of luminance, sparsified
    std::vector<float> lum(static_cast<size_t>(size) * size);
    for (size_t i = 0; i < lum.size(); ++i)
        lum[i] = 0.299f * out.he.data[3 * i] + 0.587f * out.he.data[3 * i + 1] +
                 0.114f * out.he.data[3 * i + 2];
    std::vector<float> mag(lum.size());
    auto lat = [&](int x, int y) {
        return static_cast<double>(
            lum[static_cast<size_t>(std::clamp(y, 0, size - 1)) * size + std::clamp(x, 0, size - 1)]);
    };
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double gx = 0.5 * (lat(x + 1, y) - lat(x - 1, y));
            const double gy = 0.5 * (lat(x, y + 1) - lat(x, y - 1));
            mag[static_cast<size_t>(y) * size + x] = static_cast<float>(std::hypot(gx, gy));
        }
    mag = detail::blur_plane(mag, size, size, 1.5);
    float lo = mag[0], hi = mag[0];
    for (float v : mag) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<float> structure(mag.size());
    for (size_t i = 0; i < mag.size(); ++i)
        structure[i] = hi > lo ? (mag[i] - lo) / (hi - lo) : 0.0f;
    std::vector<float> sorted = structure;
    const size_t cut = static_cast<size_t>(0.70 * (sorted.size() - 1));
    std::nth_element(sorted.begin(), sorted.begin() + cut, sorted.end());
    const float threshold = sorted[cut];
    RasterImage structure_img = RasterImage::zeros(size, size, 1);
    for (size_t i = 0; i < structure.size(); ++i)
        structure_img.data[i] = structure[i] >= threshold ? structure[i] : 0.0f;

    // ground-truth mapping: rotation . scale . translation about the center,
    // plus a smooth sinusoidal displacement
    const double c = (size - 1) / 2.0;
    out.gt_transform = compose_affine(
        AffineTransform2D::rotation_deg_about(rotation_deg, c, c),
        compose_affine(AffineTransform2D::scaling_about(scale, scale, c, c),
                       AffineTransform2D::translation(tx, ty)));
    const double lambda = size / 2.0;
    auto gt_map = [&](double x, double y) -> Point {
        const Point p = apply_affine_to_point(out.gt_transform, {x, y});
        return {p.x + deform_amplitude * std::sin(2.0 * M_PI * y / lambda + 0.7),
                p.y + deform_amplitude * std::sin(2.0 * M_PI * x / lambda + 1.3)};
    };

    out.shg = RasterImage::zeros(size, size, 1);
    out.gt_field = DisplacementField::zeros(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const Point p = gt_map(x, y);
            const size_t i = static_cast<size_t>(y) * size + x;
            out.shg.data[i] =
                static_cast<float>(sample_bilinear(structure_img, p.x, p.y, 0, Oob::Zero));
            out.gt_field.dx[i] = static_cast<float>(p.x - x);
            out.gt_field.dy[i] = static_cast<float>(p.y - y);
        }

    // 5x5 landmark grid on the target, mapped to the source by ground truth
    const double margin = size / 8.0;
    const double step = (size - 2.0 * margin) / 4.0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            const Point q{margin + j * step, margin + i * step};
            out.landmarks_target.points.push_back(q);
            out.landmarks_target.valid.push_back(1);
            out.landmarks_source.points.push_back(gt_map(q.x, q.y));
            out.landmarks_source.valid.push_back(1);
        }
    return out;
}

}  // namespace mmreg
