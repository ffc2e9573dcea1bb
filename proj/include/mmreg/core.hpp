#pragma once

// Core value types and geometric primitives shared by the whole library.
//
// Conventions used everywhere:
//  - Pixel coordinates: origin at the center of the top-left pixel,
//    x grows rightward, y grows downward. Pixel (i, j) covers the square
//    [i-0.5, i+0.5] x [j-0.5, j+0.5].
//  - Intensities are normalized reals in [0, 1] regardless of the on-disk
//    bit depth.
//  - Transforms and displacement fields use pull (backward) semantics:
//    every output pixel p reads the source at the mapped position, so an
//    AffineTransform2D maps target-frame coordinates into source-frame
//    coordinates and a DisplacementField stores u with sample point p + u(p).
//
// All types here are immutable in practice: operations never mutate their
// inputs and return fresh values, so instances can be shared across threads.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmreg {

// Runtime failure (I/O, numerical breakdown, protocol violation).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Divergence or other non-finite arithmetic; distinct so callers can map it
// to a dedicated exit code.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// ---------------------------------------------------------------------------
// RasterImage

struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;  // row-major, channel-interleaved

    RasterImage() = default;

    RasterImage(int w, int h, int c, std::vector<float> values)
        : width(w), height(h), channels(c), data(std::move(values)) {
        validate();
    }

    static RasterImage zeros(int w, int h, int c = 1) {
        if (w < 1 || h < 1 || (c != 1 && c != 3))
            throw std::invalid_argument("RasterImage: invalid dimensions");
        RasterImage img;
        img.width = w;
        img.height = h;
        img.channels = c;
        img.data.assign(static_cast<size_t>(w) * h * c, 0.0f);
        return img;
    }

    static RasterImage constant(int w, int h, int c, float value) {
        RasterImage img = zeros(w, h, c);
        std::fill(img.data.begin(), img.data.end(), value);
        return img;
    }

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }

    float& at(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    void validate() const {
        if (width < 1 || height < 1)
            throw std::invalid_argument("RasterImage: width and height must be >= 1");
        if (channels != 1 && channels != 3)
            throw std::invalid_argument("RasterImage: channels must be 1 or 3");
        if (data.size() != static_cast<size_t>(width) * height * channels)
            throw std::invalid_argument("RasterImage: data length != width*height*channels");
        for (float v : data)
            if (!(v >= 0.0f && v <= 1.0f))
                throw std::invalid_argument("RasterImage: intensity outside [0, 1]");
    }
};

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

// ---------------------------------------------------------------------------
// AffineTransform2D
//
// Stored as the six numbers (a11, a12, t1, a21, a22, t2) of the 2x3 matrix
//   [ a11 a12 t1 ]
//   [ a21 a22 t2 ]
// applied as p_src = A * [x, y, 1]^T with p in target-frame coordinates.

struct AffineTransform2D {
    double a11 = 1.0, a12 = 0.0, t1 = 0.0;
    double a21 = 0.0, a22 = 1.0, t2 = 0.0;

    static AffineTransform2D identity() { return {}; }

    static AffineTransform2D translation(double tx, double ty) {
        return {1.0, 0.0, tx, 0.0, 1.0, ty};
    }

    static AffineTransform2D scaling(double sx, double sy) {
        return {sx, 0.0, 0.0, 0.0, sy, 0.0};
    }

    // Rotation by `deg` about (cx, cy). With y pointing down, positive
    // angles rotate content clockwise on screen.
    static AffineTransform2D rotation_deg_about(double deg, double cx, double cy) {
        const double rad = deg * (M_PI / 180.0);
        const double c = std::cos(rad), s = std::sin(rad);
        return {c, -s, cx - c * cx + s * cy,
                s,  c, cy - s * cx - c * cy};
    }

    static AffineTransform2D scaling_about(double sx, double sy, double cx, double cy) {
        return {sx, 0.0, cx - sx * cx, 0.0, sy, cy - sy * cy};
    }

    double det() const { return a11 * a22 - a12 * a21; }

    void validate() const {
        for (double v : {a11, a12, t1, a21, a22, t2})
            if (!std::isfinite(v))
                throw std::invalid_argument("AffineTransform2D: non-finite entry");
        if (det() == 0.0)
            throw std::invalid_argument("AffineTransform2D: degenerate linear part");
    }
};

inline Point apply_affine_to_point(const AffineTransform2D& t, const Point& p) {
    return {t.a11 * p.x + t.a12 * p.y + t.t1,
            t.a21 * p.x + t.a22 * p.y + t.t2};
}

// Result applies b first, then a (matrix product of the homogeneous forms).
inline AffineTransform2D compose_affine(const AffineTransform2D& a,
                                        const AffineTransform2D& b) {
    AffineTransform2D r;
    r.a11 = a.a11 * b.a11 + a.a12 * b.a21;
    r.a12 = a.a11 * b.a12 + a.a12 * b.a22;
    r.t1  = a.a11 * b.t1  + a.a12 * b.t2 + a.t1;
    r.a21 = a.a21 * b.a11 + a.a22 * b.a21;
    r.a22 = a.a21 * b.a12 + a.a22 * b.a22;
    r.t2  = a.a21 * b.t1  + a.a22 * b.t2 + a.t2;
    return r;
}

inline AffineTransform2D invert_affine(const AffineTransform2D& t) {
    const double d = t.det();
    if (d == 0.0 || !std::isfinite(d))
        throw std::invalid_argument("invert_affine: degenerate transform");
    AffineTransform2D r;
    r.a11 =  t.a22 / d;
    r.a12 = -t.a12 / d;
    r.a21 = -t.a21 / d;
    r.a22 =  t.a11 / d;
    r.t1 = -(r.a11 * t.t1 + r.a12 * t.t2);
    r.t2 = -(r.a21 * t.t1 + r.a22 * t.t2);
    return r;
}

// Singular values of the 2x2 linear part, sorted ascending.
inline std::array<double, 2> scale_factors(const AffineTransform2D& t) {
    const double d = t.det();
    if (d == 0.0 || !std::isfinite(d))
        throw std::invalid_argument("scale_factors: degenerate linear part");
    const double e = t.a11 * t.a11 + t.a12 * t.a12 + t.a21 * t.a21 + t.a22 * t.a22;
    const double f1 = t.a11 * t.a11 + t.a12 * t.a12 - t.a21 * t.a21 - t.a22 * t.a22;
    const double f2 = t.a11 * t.a21 + t.a12 * t.a22;
    const double f = std::sqrt(f1 * f1 + 4.0 * f2 * f2);
    const double smax = std::sqrt(std::max(0.0, (e + f) / 2.0));
    const double smin = std::sqrt(std::max(0.0, (e - f) / 2.0));
    return {smin, smax};
}

// ---------------------------------------------------------------------------
// DisplacementField
//
// Dense per-pixel (dx, dy) in pixel units, pull semantics: the warped image
// at p samples the source at p + u(p).

struct DisplacementField {
    int width = 0;
    int height = 0;
    std::vector<float> dx;  // row-major planes
    std::vector<float> dy;

    DisplacementField() = default;

    static DisplacementField zeros(int w, int h) {
        if (w < 1 || h < 1)
            throw std::invalid_argument("DisplacementField: invalid dimensions");
        DisplacementField f;
        f.width = w;
        f.height = h;
        f.dx.assign(static_cast<size_t>(w) * h, 0.0f);
        f.dy.assign(static_cast<size_t>(w) * h, 0.0f);
        return f;
    }

    size_t size() const { return static_cast<size_t>(width) * height; }

    float& dx_at(int x, int y) { return dx[static_cast<size_t>(y) * width + x]; }
    float dx_at(int x, int y) const { return dx[static_cast<size_t>(y) * width + x]; }
    float& dy_at(int x, int y) { return dy[static_cast<size_t>(y) * width + x]; }
    float dy_at(int x, int y) const { return dy[static_cast<size_t>(y) * width + x]; }

    void validate() const {
        if (width < 1 || height < 1)
            throw std::invalid_argument("DisplacementField: invalid dimensions");
        if (dx.size() != size() || dy.size() != size())
            throw std::invalid_argument("DisplacementField: vector length != width*height");
        for (float v : dx)
            if (!std::isfinite(v)) throw std::invalid_argument("DisplacementField: non-finite dx");
        for (float v : dy)
            if (!std::isfinite(v)) throw std::invalid_argument("DisplacementField: non-finite dy");
    }

    // Bilinear interpolation of the field at a real-valued position.
    // Valid for x in [0, width-1], y in [0, height-1].
    Point sample(double x, double y) const {
        int x0 = static_cast<int>(std::floor(x));
        int y0 = static_cast<int>(std::floor(y));
        x0 = std::clamp(x0, 0, width - 1);
        y0 = std::clamp(y0, 0, height - 1);
        const int x1 = std::min(x0 + 1, width - 1);
        const int y1 = std::min(y0 + 1, height - 1);
        const double fx = std::clamp(x - x0, 0.0, 1.0);
        const double fy = std::clamp(y - y0, 0.0, 1.0);
        const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
        const double w01 = (1 - fx) * fy,       w11 = fx * fy;
        return {w00 * dx_at(x0, y0) + w10 * dx_at(x1, y0) + w01 * dx_at(x0, y1) + w11 * dx_at(x1, y1),
                w00 * dy_at(x0, y0) + w10 * dy_at(x1, y0) + w01 * dy_at(x0, y1) + w11 * dy_at(x1, y1)};
    }
};

// ---------------------------------------------------------------------------
// LandmarkSet

struct LandmarkSet {
    std::vector<Point> points;
    // Per-point validity; points flagged false are excluded from TRE.
    std::vector<char> valid;

    LandmarkSet() = default;
    explicit LandmarkSet(std::vector<Point> pts)
        : points(std::move(pts)), valid(points.size(), 1) {}

    size_t size() const { return points.size(); }

    size_t valid_count() const {
        size_t n = 0;
        for (char v : valid) n += (v != 0);
        return n;
    }
};

// ---------------------------------------------------------------------------
// RegistrationConfig

struct LevelSettings {
    // Diffusive regularization weight. Tuned so the smoothness penalty
    // dominates the per-pixel mutual-information gain of a rough field:
    // lighter weights let the optimizer shred the grid (folds) for a few
    // percent of similarity.
    double theta = 5.0;
    int iterations = 100;
    double step_size = 0.5;  // pixels
    int mi_bins = 16;
    int mi_window = 64;      // pixels
    int mi_stride = 32;      // pixels
};

struct FeatureParams {
    int max_keypoints = 1000;
    double match_ratio = 0.8;
    double ransac_threshold = 3.0;  // pixels at the matching resolution
    int ransac_iterations = 2000;
    double matcher_timeout_s = 60.0;  // external plugins only
};

struct RegistrationConfig {
    std::vector<double> angles = {0, 30, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330};
    std::vector<int> resolutions = {100, 200, 300, 400, 500};
    double scale_tolerance = 0.10;
    // Deformable levels ordered coarse to fine; level i runs at 1/2^(N-1-i)
    // of the working resolution, the last level at full working resolution.
    std::vector<LevelSettings> levels = {LevelSettings{}, LevelSettings{}, LevelSettings{}};
    uint64_t deterministic_seed = 1;
    FeatureParams features;

    void validate() const {
        if (angles.empty())
            throw std::invalid_argument("config: angles must be nonempty");
        if (resolutions.empty())
            throw std::invalid_argument("config: resolutions must be nonempty");
        for (int r : resolutions)
            if (r < 32)
                throw std::invalid_argument("config: every resolution must be >= 32");
        if (!(scale_tolerance > 0.0 && scale_tolerance < 1.0))
            throw std::invalid_argument("config: scale_tolerance must lie in (0, 1)");
        if (levels.empty())
            throw std::invalid_argument("config: at least one deformable level required");
        for (const LevelSettings& l : levels) {
            if (l.theta < 0.0)
                throw std::invalid_argument("config: theta must be >= 0");
            if (l.iterations < 0)
                throw std::invalid_argument("config: iterations must be >= 0");
            if (!(l.step_size > 0.0))
                throw std::invalid_argument("config: step_size must be > 0");
            if (l.mi_bins < 2)
                throw std::invalid_argument("config: mi_bins must be >= 2");
            if (l.mi_window < 2)
                throw std::invalid_argument("config: mi_window must be >= 2");
            if (l.mi_stride < 1)
                throw std::invalid_argument("config: mi_stride must be >= 1");
        }
        if (features.max_keypoints < 3)
            throw std::invalid_argument("config: max_keypoints must be >= 3");
        if (!(features.match_ratio > 0.0 && features.match_ratio <= 1.0))
            throw std::invalid_argument("config: match_ratio must lie in (0, 1]");
        if (!(features.ransac_threshold > 0.0))
            throw std::invalid_argument("config: ransac_threshold must be > 0");
        if (features.ransac_iterations < 1)
            throw std::invalid_argument("config: ransac_iterations must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Sampling and resampling primitives.

enum class Oob { Clamp, Zero };

// Bilinear sample of one channel at a real-valued position.
inline double sample_bilinear(const RasterImage& img, double x, double y, int c,
                              Oob policy) {
    if (policy == Oob::Clamp) {
        x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
        y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    } else if (x < -0.5 || y < -0.5 || x > img.width - 0.5 || y > img.height - 0.5) {
        return 0.0;
    }
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    auto tap = [&](int xi, int yi) -> double {
        if (policy == Oob::Zero) {
            if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) return 0.0;
        } else {
            xi = std::clamp(xi, 0, img.width - 1);
            yi = std::clamp(yi, 0, img.height - 1);
        }
        return img.at(xi, yi, c);
    };
    return (1 - fx) * (1 - fy) * tap(x0, y0) + fx * (1 - fy) * tap(x0 + 1, y0) +
           (1 - fx) * fy * tap(x0, y0 + 1) + fx * fy * tap(x0 + 1, y0 + 1);
}

// Bilinear resize to exact output dimensions with area-consistent coordinate
// mapping: out pixel x reads the input at (x + 0.5) * w_in / w_out - 0.5.
inline RasterImage resize_bilinear(const RasterImage& img, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1)
        throw std::invalid_argument("resize_bilinear: output dimensions must be >= 1");
    if (new_w == img.width && new_h == img.height) return img;
    RasterImage out = RasterImage::zeros(new_w, new_h, img.channels);
    const double sx = static_cast<double>(img.width) / new_w;
    const double sy = static_cast<double>(img.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < new_w; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) =
                    clamp01(static_cast<float>(sample_bilinear(img, src_x, src_y, c, Oob::Clamp)));
        }
    }
    return out;
}

// Affine resample into a target-frame canvas of the given size; each output
// pixel p samples the source at t(p). Clamp policy matches warp_image so the
// two routes agree on fields baked from the same transform.
inline RasterImage warp_affine(const RasterImage& img, const AffineTransform2D& t,
                               int out_w, int out_h, Oob policy = Oob::Clamp) {
    RasterImage out = RasterImage::zeros(out_w, out_h, img.channels);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const Point s = apply_affine_to_point(t, {static_cast<double>(x), static_cast<double>(y)});
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = clamp01(static_cast<float>(sample_bilinear(img, s.x, s.y, c, policy)));
        }
    return out;
}

// Affine mapping full-resolution coordinates into level coordinates for a
// level downscaled by `scale` (level = (full + 0.5) * scale - 0.5).
inline AffineTransform2D level_from_full(double scale) {
    return {scale, 0.0, 0.5 * scale - 0.5, 0.0, scale, 0.5 * scale - 0.5};
}

inline AffineTransform2D full_from_level(double scale) {
    return invert_affine(level_from_full(scale));
}

// splitmix64; used to derive independent per-candidate RNG seeds.
inline uint64_t mix_seed(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace mmreg
