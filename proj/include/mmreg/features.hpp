#pragma once

// Sparse feature machinery for the initial alignment: a multi-scale Harris
// corner detector with orientation-normalized gradient-histogram descriptors,
// mutual-nearest-neighbor ratio matching, and robust affine estimation with
// RANSAC. Rotation and scale coverage beyond the descriptor's native
// tolerance comes from the exhaustive search driving this module.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmreg/core.hpp"

namespace mmreg {

struct Keypoint {
    double x = 0.0;  // position in the frame of the image it was detected on
    double y = 0.0;
    double response = 0.0;
    double orientation = 0.0;  // radians
    std::vector<float> descriptor;  // unit-normalized; empty for plugin points
};

struct Match {
    int index_a = 0;
    int index_b = 0;
    double confidence = 0.0;  // in [0, 1]
};

struct MatchSet {
    std::vector<Match> pairs;
    std::vector<Keypoint> keypoints_a;
    std::vector<Keypoint> keypoints_b;

    // One-to-one matching with in-range indices and confidences in [0, 1].
    void validate() const {
        std::vector<char> seen_a(keypoints_a.size(), 0), seen_b(keypoints_b.size(), 0);
        for (const Match& m : pairs) {
            if (m.index_a < 0 || m.index_a >= static_cast<int>(keypoints_a.size()) ||
                m.index_b < 0 || m.index_b >= static_cast<int>(keypoints_b.size()))
                throw Error("MatchSet: match index out of range");
            if (seen_a[m.index_a]++ || seen_b[m.index_b]++)
                throw Error("MatchSet: non-injective matching");
            if (!(m.confidence >= 0.0 && m.confidence <= 1.0))
                throw Error("MatchSet: confidence outside [0, 1]");
        }
    }
};

namespace detail {

inline std::vector<float> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[i + radius] = static_cast<float>(w);
        sum += w;
    }
    for (float& w : k) w = static_cast<float>(w / sum);
    return k;
}

// Separable Gaussian blur with replicated borders, on a raw float plane.
inline std::vector<float> blur_plane(const std::vector<float>& src, int w, int h,
                                     double sigma) {
    const std::vector<float> k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    std::vector<float> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * src[static_cast<size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
            tmp[static_cast<size_t>(y) * w + x] = static_cast<float>(acc);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * tmp[static_cast<size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
            out[static_cast<size_t>(y) * w + x] = static_cast<float>(acc);
        }
    return out;
}

struct OctavePlanes {
    int w = 0, h = 0;
    double sx = 1.0, sy = 1.0;  // octave -> input frame scale per axis
    std::vector<float> smooth;  // blurred intensity
    std::vector<float> gx, gy;  // central-difference gradients of smooth
};

inline double plane_at(const std::vector<float>& p, int w, int h, int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return p[static_cast<size_t>(y) * w + x];
}

inline double plane_bilinear(const std::vector<float>& p, int w, int h, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    return (1 - fx) * (1 - fy) * plane_at(p, w, h, x0, y0) +
           fx * (1 - fy) * plane_at(p, w, h, x0 + 1, y0) +
           (1 - fx) * fy * plane_at(p, w, h, x0, y0 + 1) +
           fx * fy * plane_at(p, w, h, x0 + 1, y0 + 1);
}

constexpr double kDetectSigma = 1.6;
constexpr double kTensorSigma = 2.0;
constexpr double kHarrisK = 0.04;
constexpr double kRelativeThreshold = 1e-5;
constexpr int kDescriptorCells = 4;      // 4x4 spatial cells
constexpr int kDescriptorOrients = 8;
constexpr double kDescriptorSpacing = 1.5;  // sample spacing, octave pixels

// 128-dim SIFT-style descriptor around (x, y) with the given orientation,
// sampled from the octave gradient planes (clamped at borders).
inline std::vector<float> make_descriptor(const OctavePlanes& oct, double x, double y,
                                          double orientation) {
    constexpr int grid = kDescriptorCells * 4;  // 16x16 samples
    const double cosA = std::cos(orientation), sinA = std::sin(orientation);
    const double half = grid / 2.0 - 0.5;
    const double sigma_w = 0.5 * grid * kDescriptorSpacing;
    std::array<double, kDescriptorCells * kDescriptorCells * kDescriptorOrients> hist{};
    for (int sy = 0; sy < grid; ++sy) {
        for (int sx = 0; sx < grid; ++sx) {
            const double u = (sx - half) * kDescriptorSpacing;
            const double v = (sy - half) * kDescriptorSpacing;
            const double px = x + cosA * u - sinA * v;
            const double py = y + sinA * u + cosA * v;
            const double gx = plane_bilinear(oct.gx, oct.w, oct.h, px, py);
            const double gy = plane_bilinear(oct.gy, oct.w, oct.h, px, py);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag <= 0.0) continue;
            // rotate gradient into the keypoint frame
            const double rgx = cosA * gx + sinA * gy;
            const double rgy = -sinA * gx + cosA * gy;
            double ang = std::atan2(rgy, rgx);
            if (ang < 0) ang += 2.0 * M_PI;
            const double weight = std::exp(-0.5 * (u * u + v * v) / (sigma_w * sigma_w)) * mag;
            // trilinear soft binning over (cell_x, cell_y, orientation)
            const double cx = (sx + 0.5) / 4.0 - 0.5;
            const double cy = (sy + 0.5) / 4.0 - 0.5;
            const double co = ang / (2.0 * M_PI) * kDescriptorOrients;
            const int cx0 = static_cast<int>(std::floor(cx));
            const int cy0 = static_cast<int>(std::floor(cy));
            const int co0 = static_cast<int>(std::floor(co)) % kDescriptorOrients;
            const double fx = cx - std::floor(cx);
            const double fy = cy - std::floor(cy);
            const double fo = co - std::floor(co);
            for (int dy = 0; dy < 2; ++dy) {
                const int yc = cy0 + dy;
                if (yc < 0 || yc >= kDescriptorCells) continue;
                const double wy = dy ? fy : 1.0 - fy;
                for (int dx = 0; dx < 2; ++dx) {
                    const int xc = cx0 + dx;
                    if (xc < 0 || xc >= kDescriptorCells) continue;
                    const double wx = dx ? fx : 1.0 - fx;
                    for (int dor = 0; dor < 2; ++dor) {
                        const int oc = (co0 + dor) % kDescriptorOrients;
                        const double wo = dor ? fo : 1.0 - fo;
                        hist[(static_cast<size_t>(yc) * kDescriptorCells + xc) * kDescriptorOrients + oc] +=
                            weight * wx * wy * wo;
                    }
                }
            }
        }
    }
    double norm = 0.0;
    for (double v : hist) norm += v * v;
    if (norm <= 0.0) return {};
    norm = std::sqrt(norm);
    // clamp dominant bins and renormalize (illumination robustness)
    double norm2 = 0.0;
    for (double& v : hist) {
        v = std::min(v / norm, 0.2);
        norm2 += v * v;
    }
    norm2 = std::sqrt(norm2);
    std::vector<float> desc(hist.size());
    for (size_t i = 0; i < hist.size(); ++i)
        desc[i] = static_cast<float>(hist[i] / norm2);
    return desc;
}

inline double dominant_orientation(const OctavePlanes& oct, int x, int y) {
    constexpr int bins = 36;
    constexpr int radius = 8;
    const double sigma = 1.5 * kDetectSigma;
    std::array<double, bins> hist{};
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const double gx = plane_at(oct.gx, oct.w, oct.h, x + dx, y + dy);
            const double gy = plane_at(oct.gy, oct.w, oct.h, x + dx, y + dy);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag <= 0.0) continue;
            double ang = std::atan2(gy, gx);
            if (ang < 0) ang += 2.0 * M_PI;
            const double w = mag * std::exp(-0.5 * (dx * dx + dy * dy) / (9.0 * sigma * sigma));
            int b = static_cast<int>(ang / (2.0 * M_PI) * bins) % bins;
            hist[b] += w;
        }
    int peak = 0;
    for (int b = 1; b < bins; ++b)
        if (hist[b] > hist[peak]) peak = b;
    if (hist[peak] <= 0.0) return 0.0;
    // parabolic refinement around the peak bin
    const double l = hist[(peak + bins - 1) % bins];
    const double c = hist[peak];
    const double r = hist[(peak + 1) % bins];
    double shift = 0.0;
    const double denom = l - 2.0 * c + r;
    if (std::abs(denom) > 1e-12) shift = std::clamp(0.5 * (l - r) / denom, -0.5, 0.5);
    double ang = (peak + 0.5 + shift) / bins * 2.0 * M_PI;
    if (ang >= 2.0 * M_PI) ang -= 2.0 * M_PI;
    return ang;
}

}  // namespace detail

// Multi-scale Harris keypoints with orientation-normalized descriptors,
// strongest `max_count` returned in descending response order.
inline std::vector<Keypoint> detect_keypoints(const RasterImage& img, int max_count) {
    if (img.channels != 1)
        throw std::invalid_argument("detect_keypoints: single-channel image required");
    if (max_count < 0)
        throw std::invalid_argument("detect_keypoints: max_count must be >= 0");
    using namespace detail;

    // octave pyramid
    std::vector<OctavePlanes> octaves;
    {
        std::vector<float> cur = img.data;
        int w = img.width, h = img.height;
        double sx = 1.0, sy = 1.0;
        for (int o = 0; o < 4 && std::min(w, h) >= 24; ++o) {
            OctavePlanes oct;
            oct.w = w;
            oct.h = h;
            oct.sx = sx;
            oct.sy = sy;
            oct.smooth = blur_plane(cur, w, h, kDetectSigma);
            oct.gx.resize(cur.size());
            oct.gy.resize(cur.size());
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const size_t i = static_cast<size_t>(y) * w + x;
                    oct.gx[i] = static_cast<float>(
                        0.5 * (plane_at(oct.smooth, w, h, x + 1, y) - plane_at(oct.smooth, w, h, x - 1, y)));
                    oct.gy[i] = static_cast<float>(
                        0.5 * (plane_at(oct.smooth, w, h, x, y + 1) - plane_at(oct.smooth, w, h, x, y - 1)));
                }
            // next octave: decimate the smoothed image by 2 (area-consistent)
            const int nw = std::max(1, w / 2), nh = std::max(1, h / 2);
            std::vector<float> next(static_cast<size_t>(nw) * nh);
            for (int y = 0; y < nh; ++y)
                for (int x = 0; x < nw; ++x)
                    next[static_cast<size_t>(y) * nw + x] = static_cast<float>(plane_bilinear(
                        oct.smooth, w, h, (x + 0.5) * (static_cast<double>(w) / nw) - 0.5,
                        (y + 0.5) * (static_cast<double>(h) / nh) - 0.5));
            sx *= static_cast<double>(w) / nw;
            sy *= static_cast<double>(h) / nh;
            octaves.push_back(std::move(oct));
            cur = std::move(next);
            w = nw;
            h = nh;
        }
    }
    if (octaves.empty() || max_count == 0) return {};

    struct Candidate {
        int octave;
        double x, y;  // octave frame, subpixel
        int ix, iy;   // integer detection site
        double response;
    };
    std::vector<Candidate> cands;
    double global_max = 0.0;

    std::vector<std::vector<float>> responses(octaves.size());
    for (size_t o = 0; o < octaves.size(); ++o) {
        const OctavePlanes& oct = octaves[o];
        const int w = oct.w, h = oct.h;
        std::vector<float> ixx(oct.gx.size()), ixy(oct.gx.size()), iyy(oct.gx.size());
        for (size_t i = 0; i < oct.gx.size(); ++i) {
            ixx[i] = oct.gx[i] * oct.gx[i];
            ixy[i] = oct.gx[i] * oct.gy[i];
            iyy[i] = oct.gy[i] * oct.gy[i];
        }
        ixx = blur_plane(ixx, w, h, kTensorSigma);
        ixy = blur_plane(ixy, w, h, kTensorSigma);
        iyy = blur_plane(iyy, w, h, kTensorSigma);
        std::vector<float>& resp = responses[o];
        resp.resize(oct.gx.size());
        for (size_t i = 0; i < resp.size(); ++i) {
            const double a = ixx[i], b = ixy[i], c = iyy[i];
            resp[i] = static_cast<float>((a * c - b * b) - kHarrisK * (a + c) * (a + c));
            if (resp[i] > global_max) global_max = resp[i];
        }
    }
    if (global_max <= 0.0) return {};  // structureless image

    const double threshold = kRelativeThreshold * global_max;
    for (size_t o = 0; o < octaves.size(); ++o) {
        const OctavePlanes& oct = octaves[o];
        const std::vector<float>& resp = responses[o];
        const int w = oct.w, h = oct.h;
        for (int y = 1; y < h - 1; ++y)
            for (int x = 1; x < w - 1; ++x) {
                const float r = resp[static_cast<size_t>(y) * w + x];
                if (r < threshold) continue;
                bool is_max = true;
                for (int dy = -1; dy <= 1 && is_max; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        if (resp[static_cast<size_t>(y + dy) * w + x + dx] >= r) {
                            is_max = false;
                            break;
                        }
                    }
                if (!is_max) continue;
                auto at = [&](int xx, int yy) {
                    return static_cast<double>(resp[static_cast<size_t>(yy) * w + xx]);
                };
                // 1-D quadratic subpixel refinement per axis
                double ox = 0.0, oy = 0.0;
                const double dxx = at(x - 1, y) - 2.0 * r + at(x + 1, y);
                const double dyy = at(x, y - 1) - 2.0 * r + at(x, y + 1);
                if (std::abs(dxx) > 1e-18) ox = std::clamp(0.5 * (at(x - 1, y) - at(x + 1, y)) / dxx, -0.5, 0.5);
                if (std::abs(dyy) > 1e-18) oy = std::clamp(0.5 * (at(x, y - 1) - at(x, y + 1)) / dyy, -0.5, 0.5);
                cands.push_back({static_cast<int>(o), x + ox, y + oy, x, y, r});
            }
    }

    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.response != b.response) return a.response > b.response;
        if (a.octave != b.octave) return a.octave < b.octave;
        if (a.iy != b.iy) return a.iy < b.iy;
        return a.ix < b.ix;
    });

    std::vector<Keypoint> out;
    out.reserve(std::min<size_t>(cands.size(), max_count));
    for (const Candidate& c : cands) {
        if (static_cast<int>(out.size()) >= max_count) break;
        const OctavePlanes& oct = octaves[c.octave];
        const double orientation = detail::dominant_orientation(oct, c.ix, c.iy);
        std::vector<float> desc = detail::make_descriptor(oct, c.x, c.y, orientation);
        if (desc.empty()) continue;
        Keypoint kp;
        kp.x = std::clamp((c.x + 0.5) * oct.sx - 0.5, 0.0, static_cast<double>(img.width - 1));
        kp.y = std::clamp((c.y + 0.5) * oct.sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        kp.response = c.response;
        kp.orientation = orientation;
        kp.descriptor = std::move(desc);
        out.push_back(std::move(kp));
    }
    return out;
}

// Mutual-nearest-neighbor matching with a two-sided Lowe ratio test.
// confidence = 1 - d1/d2 with d2 the smaller of the two second-best distances.
inline MatchSet match_descriptors(const std::vector<Keypoint>& a,
                                  const std::vector<Keypoint>& b,
                                  double ratio = 0.8) {
    MatchSet out;
    out.keypoints_a = a;
    out.keypoints_b = b;
    if (a.empty() || b.empty()) return out;

    const size_t na = a.size(), nb = b.size();
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<int> best_b(na, -1);
    std::vector<double> d1_a(na, kInf), d2_a(na, kInf);
    std::vector<int> best_a(nb, -1);
    std::vector<double> d1_b(nb, kInf), d2_b(nb, kInf);

    for (size_t i = 0; i < na; ++i) {
        const std::vector<float>& da = a[i].descriptor;
        for (size_t j = 0; j < nb; ++j) {
            const std::vector<float>& db = b[j].descriptor;
            if (da.size() != db.size() || da.empty()) continue;
            double dot = 0.0;
            for (size_t k = 0; k < da.size(); ++k) dot += static_cast<double>(da[k]) * db[k];
            const double d = std::sqrt(std::max(0.0, 2.0 - 2.0 * dot));
            if (d < d1_a[i]) {
                d2_a[i] = d1_a[i];
                d1_a[i] = d;
                best_b[i] = static_cast<int>(j);
            } else if (d < d2_a[i]) {
                d2_a[i] = d;
            }
            if (d < d1_b[j]) {
                d2_b[j] = d1_b[j];
                d1_b[j] = d;
                best_a[j] = static_cast<int>(i);
            } else if (d < d2_b[j]) {
                d2_b[j] = d;
            }
        }
    }
    for (size_t i = 0; i < na; ++i) {
        const int j = best_b[i];
        if (j < 0 || best_a[j] != static_cast<int>(i)) continue;  // not mutual
        const double d1 = d1_a[i];
        const double d2 = std::min(d2_a[i], d2_b[j]);
        double confidence;
        if (d2 == kInf) {
            confidence = 1.0;  // no competitor on either side
        } else if (d2 <= 0.0) {
            continue;  // ambiguous duplicate descriptors
        } else {
            if (d1 >= ratio * d2) continue;
            confidence = std::clamp(1.0 - d1 / d2, 0.0, 1.0);
        }
        out.pairs.push_back({static_cast<int>(i), j, confidence});
    }
    return out;
}

struct RansacResult {
    AffineTransform2D transform;  // maps b-frame coordinates to a-frame
    int inlier_count = 0;
    std::vector<char> inliers;  // per match pair
};

namespace detail {

// Solve the 3x3 system M x = r by Gaussian elimination with partial pivoting.
inline bool solve3(std::array<std::array<double, 3>, 3> m, std::array<double, 3> r,
                   std::array<double, 3>& x) {
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int row = col + 1; row < 3; ++row)
            if (std::abs(m[row][col]) > std::abs(m[piv][col])) piv = row;
        if (std::abs(m[piv][col]) < 1e-12) return false;
        std::swap(m[col], m[piv]);
        std::swap(r[col], r[piv]);
        for (int row = col + 1; row < 3; ++row) {
            const double f = m[row][col] / m[col][col];
            for (int k = col; k < 3; ++k) m[row][k] -= f * m[col][k];
            r[row] -= f * r[col];
        }
    }
    for (int row = 2; row >= 0; --row) {
        double acc = r[row];
        for (int k = row + 1; k < 3; ++k) acc -= m[row][k] * x[k];
        x[row] = acc / m[row][row];
    }
    return true;
}

// Least-squares affine (b -> a) over the selected matches.
inline bool fit_affine_lsq(const MatchSet& m, const std::vector<int>& idx,
                           AffineTransform2D& t) {
    std::array<std::array<double, 3>, 3> mat{};
    std::array<double, 3> rx{}, ry{};
    for (int i : idx) {
        const Point pb{m.keypoints_b[m.pairs[i].index_b].x, m.keypoints_b[m.pairs[i].index_b].y};
        const Point pa{m.keypoints_a[m.pairs[i].index_a].x, m.keypoints_a[m.pairs[i].index_a].y};
        const double row[3] = {pb.x, pb.y, 1.0};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) mat[r][c] += row[r] * row[c];
            rx[r] += row[r] * pa.x;
            ry[r] += row[r] * pa.y;
        }
    }
    std::array<double, 3> sx{}, sy{};
    if (!solve3(mat, rx, sx) || !solve3(mat, ry, sy)) return false;
    t = {sx[0], sx[1], sx[2], sy[0], sy[1], sy[2]};
    return t.det() != 0.0 && std::isfinite(t.det());
}

}  // namespace detail

// RANSAC over minimal 3-point affine samples followed by a least-squares
// refit on the best inlier set. Deterministic for a fixed seed.
inline RansacResult estimate_affine_ransac(const MatchSet& m, double inlier_threshold = 3.0,
                                           int iterations = 2000, uint64_t seed = 0) {
    const int n = static_cast<int>(m.pairs.size());
    if (n < 3)
        throw Error("estimate_affine_ransac: insufficient correspondences (need >= 3)");
    if (!(inlier_threshold > 0.0))
        throw std::invalid_argument("estimate_affine_ransac: threshold must be > 0");

    auto point_a = [&](int i) -> Point {
        const Keypoint& k = m.keypoints_a[m.pairs[i].index_a];
        return {k.x, k.y};
    };
    auto point_b = [&](int i) -> Point {
        const Keypoint& k = m.keypoints_b[m.pairs[i].index_b];
        return {k.x, k.y};
    };
    auto count_inliers = [&](const AffineTransform2D& t, std::vector<char>* mask) -> int {
        const double thr2 = inlier_threshold * inlier_threshold;
        int count = 0;
        for (int i = 0; i < n; ++i) {
            const Point p = apply_affine_to_point(t, point_b(i));
            const Point q = point_a(i);
            const double dx = p.x - q.x, dy = p.y - q.y;
            const bool in = dx * dx + dy * dy < thr2;
            count += in;
            if (mask) (*mask)[i] = in;
        }
        return count;
    };

    std::mt19937_64 rng(mix_seed(seed));
    auto pick = [&](int bound) { return static_cast<int>(rng() % static_cast<uint64_t>(bound)); };

    AffineTransform2D best;
    int best_count = -1;
    for (int it = 0; it < iterations; ++it) {
        int i0 = pick(n), i1 = pick(n), i2 = pick(n);
        if (i0 == i1 || i0 == i2 || i1 == i2) continue;
        const Point b0 = point_b(i0), b1 = point_b(i1), b2 = point_b(i2);
        // reject (near-)collinear minimal samples
        const double area2 = (b1.x - b0.x) * (b2.y - b0.y) - (b2.x - b0.x) * (b1.y - b0.y);
        if (std::abs(area2) < 1e-6) continue;
        AffineTransform2D t;
        if (!detail::fit_affine_lsq(m, {i0, i1, i2}, t)) continue;
        const int count = count_inliers(t, nullptr);
        if (count > best_count) {
            best_count = count;
            best = t;
        }
    }
    if (best_count < 3)
        throw Error("estimate_affine_ransac: all sampled models degenerate");

    // refit on the consensus set, then recount against the refit model
    std::vector<char> mask(n, 0);
    count_inliers(best, &mask);
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
        if (mask[i]) idx.push_back(i);
    AffineTransform2D refit;
    RansacResult out;
    if (detail::fit_affine_lsq(m, idx, refit))
        out.transform = refit;
    else
        out.transform = best;
    out.inliers.assign(n, 0);
    out.inlier_count = count_inliers(out.transform, &out.inliers);
    return out;
}

// ---------------------------------------------------------------------------
// Matcher backends

class Matcher {
public:
    virtual ~Matcher() = default;
    virtual std::string name() const = 0;
    virtual MatchSet match(const RasterImage& a, const RasterImage& b) = 0;
};

// Built-in detector + descriptor backend. Keypoints are memoized per image
// content so repeated candidates against the same level are detected once.
class BuiltinMatcher : public Matcher {
public:
    explicit BuiltinMatcher(FeatureParams params = {}) : params_(params) {}

    std::string name() const override { return "builtin"; }

    MatchSet match(const RasterImage& a, const RasterImage& b) override {
        auto ka = detect_cached(a);
        auto kb = detect_cached(b);
        return match_descriptors(*ka, *kb, params_.match_ratio);
    }

private:
    std::shared_ptr<const std::vector<Keypoint>> detect_cached(const RasterImage& img) {
        const uint64_t key = content_hash(img);
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        auto kps = std::make_shared<const std::vector<Keypoint>>(
            detect_keypoints(img, params_.max_keypoints));
        std::lock_guard<std::mutex> lock(mutex_);
        return cache_.emplace(key, std::move(kps)).first->second;
    }

    static uint64_t content_hash(const RasterImage& img) {
        uint64_t h = 1469598103934665603ull;  // FNV-1a
        auto mix = [&](const void* p, size_t len) {
            const auto* bytes = static_cast<const unsigned char*>(p);
            for (size_t i = 0; i < len; ++i) {
                h ^= bytes[i];
                h *= 1099511628211ull;
            }
        };
        mix(&img.width, sizeof img.width);
        mix(&img.height, sizeof img.height);
        mix(&img.channels, sizeof img.channels);
        mix(img.data.data(), img.data.size() * sizeof(float));
        return h;
    }

    FeatureParams params_;
    std::unordered_map<uint64_t, std::shared_ptr<const std::vector<Keypoint>>> cache_;
    std::mutex mutex_;
};

}  // namespace mmreg
