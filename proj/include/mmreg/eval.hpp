#pragma once

// Quantitative evaluation: target registration error over landmark sets,
// Jacobian folding diagnostics for displacement fields, a deterministic
// landmark-improvement success proxy, and the matcher ablation sweep.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "mmreg/affine_search.hpp"
#include "mmreg/core.hpp"

namespace mmreg {

struct TreReport {
    std::vector<double> per_point;  // Euclidean distances, pixels, valid pairs only
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
    int count = 0;  // landmark pairs actually used
};

// Map target-frame landmarks into the source frame (pull semantics).
inline LandmarkSet transform_landmarks(const LandmarkSet& landmarks_tgt,
                                       const AffineTransform2D& t) {
    LandmarkSet out = landmarks_tgt;
    for (size_t i = 0; i < out.points.size(); ++i)
        if (out.valid[i]) out.points[i] = apply_affine_to_point(t, out.points[i]);
    return out;
}

// Field path: p becomes p + u(p). Points outside the field domain are flagged
// invalid and excluded from TRE rather than clamped (clamping biases TRE low).
inline LandmarkSet transform_landmarks(const LandmarkSet& landmarks_tgt,
                                       const DisplacementField& u) {
    LandmarkSet out = landmarks_tgt;
    for (size_t i = 0; i < out.points.size(); ++i) {
        if (!out.valid[i]) continue;
        const Point p = out.points[i];
        if (p.x < 0.0 || p.y < 0.0 || p.x > u.width - 1 || p.y > u.height - 1) {
            out.valid[i] = 0;
            continue;
        }
        const Point d = u.sample(p.x, p.y);
        out.points[i] = {p.x + d.x, p.y + d.y};
    }
    return out;
}

inline TreReport compute_tre(const LandmarkSet& a, const LandmarkSet& b) {
    if (a.points.size() != b.points.size())
        throw Error("compute_tre: landmark count mismatch");
    if (a.points.empty()) throw Error("compute_tre: empty landmark sets");
    TreReport r;
    for (size_t i = 0; i < a.points.size(); ++i) {
        if (!a.valid[i] || !b.valid[i]) continue;
        const double dx = a.points[i].x - b.points[i].x;
        const double dy = a.points[i].y - b.points[i].y;
        r.per_point.push_back(std::sqrt(dx * dx + dy * dy));
    }
    r.count = static_cast<int>(r.per_point.size());
    if (r.count == 0) throw Error("compute_tre: no valid landmark pairs");
    double sum = 0.0;
    for (double d : r.per_point) {
        sum += d;
        r.max = std::max(r.max, d);
    }
    r.mean = sum / r.count;
    std::vector<double> sorted = r.per_point;
    std::sort(sorted.begin(), sorted.end());
    r.median = r.count % 2 ? sorted[r.count / 2]
                           : 0.5 * (sorted[r.count / 2 - 1] + sorted[r.count / 2]);
    return r;
}

struct FoldingReport {
    double min_det = 0.0;
    long long fold_count = 0;  // pixels with Jacobian determinant <= 0
};

// Per-pixel determinant of d(p + u(p))/dp, central differences in the
// interior and one-sided at the borders.
inline FoldingReport jacobian_folding_report(const DisplacementField& u) {
    if (u.width < 2 || u.height < 2)
        throw std::invalid_argument("jacobian_folding_report: field must be at least 2x2");
    const int w = u.width, h = u.height;
    auto dx = [&](int x, int y) { return static_cast<double>(u.dx[static_cast<size_t>(y) * w + x]); };
    auto dy = [&](int x, int y) { return static_cast<double>(u.dy[static_cast<size_t>(y) * w + x]); };
    FoldingReport r;
    r.min_det = std::numeric_limits<double>::infinity();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
            const int yl = std::max(y - 1, 0), yr = std::min(y + 1, h - 1);
            const double ix = 1.0 / (xr - xl), iy = 1.0 / (yr - yl);
            const double a = 1.0 + (dx(xr, y) - dx(xl, y)) * ix;
            const double b = (dx(x, yr) - dx(x, yl)) * iy;
            const double c = (dy(xr, y) - dy(xl, y)) * ix;
            const double d = 1.0 + (dy(x, yr) - dy(x, yl)) * iy;
            const double det = a * d - b * c;
            r.min_det = std::min(r.min_det, det);
            if (det <= 0.0) ++r.fold_count;
        }
    return r;
}

// Success proxy: registration improved the landmark error (strictly).
inline bool classify_success(const TreReport& tre_before, const TreReport& tre_after,
                             double threshold = 1.0) {
    return tre_after.mean < threshold * tre_before.mean;
}

struct AblationRow {
    std::string matcher_name;
    int success_count = 0;
    int total = 0;
    double success_rate = 0.0;  // percent
};

struct AblationPair {
    RasterImage source;  // stained image (any supported channel count)
    RasterImage target;
    LandmarkSet landmarks_source, landmarks_target;  // may be empty
    bool has_landmarks = false;
};

// Run exhaustive_align for every matcher over every pair. Success is the
// landmark-improvement proxy where landmarks exist, otherwise "an accepted
// candidate exists". Individual pair failures count as failures and never
// abort the sweep.
inline std::vector<AblationRow> run_ablation(const std::vector<AblationPair>& pairs,
                                             const std::vector<std::shared_ptr<Matcher>>& matchers,
                                             const RegistrationConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("run_ablation: no pairs");
    if (matchers.empty()) throw std::invalid_argument("run_ablation: no matchers");
    std::vector<AblationRow> rows;
    for (const std::shared_ptr<Matcher>& matcher : matchers) {
        AblationRow row;
        row.matcher_name = matcher->name();
        row.total = static_cast<int>(pairs.size());
        for (const AblationPair& pair : pairs) {
            bool success = false;
            try {
                const AlignResult result =
                    exhaustive_align(pair.source, pair.target, cfg, *matcher);
                if (pair.has_landmarks) {
                    const TreReport before =
                        compute_tre(pair.landmarks_source, pair.landmarks_target);
                    const TreReport after = compute_tre(
                        pair.landmarks_source,
                        transform_landmarks(pair.landmarks_target, result.transform));
                    success = classify_success(before, after);
                } else {
                    success = !result.used_fallback;
                }
            } catch (const std::exception&) {
                success = false;  // recorded, sweep continues
            }
            row.success_count += success;
        }
        row.success_rate = 100.0 * row.success_count / row.total;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "matcher,success,total,rate\n";
    for (const AblationRow& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof buf, ",%d,%d,%.2f\n", r.success_count, r.total,
                      r.success_rate);
        out += r.matcher_name;
        out += buf;
    }
    return out;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    size_t name_w = std::string("matcher").size();
    for (const AblationRow& r : rows) name_w = std::max(name_w, r.matcher_name.size());
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-*s  %7s  %5s  %7s\n", static_cast<int>(name_w), "matcher",
                  "success", "total", "rate");
    std::string out = buf;
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %7d  %5d  %6.2f%%\n", static_cast<int>(name_w),
                      r.matcher_name.c_str(), r.success_count, r.total, r.success_rate);
        out += buf;
    }
    return out;
}

}  // namespace mmreg
