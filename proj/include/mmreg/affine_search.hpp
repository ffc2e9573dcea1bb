#pragma once

// Exhaustive initial alignment: every configured rotation angle is tried
// against every pyramid resolution, matches are fitted robustly, candidates
// with an implausible scale change are discarded, and the candidate with the
// most RANSAC inliers wins. Falls back to identity when nothing survives.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "mmreg/core.hpp"
#include "mmreg/features.hpp"
#include "mmreg/preprocess.hpp"

namespace mmreg {

struct RotatedImage {
    RasterImage image;
    AffineTransform2D to_original;  // rotated-frame point -> original-frame point
};

// Rotate counterclockwise-in-image-coordinates by angle_deg about the image
// center, same canvas, out-of-canvas reads as zero. The returned transform is
// exactly the pull mapping used to resample.
inline RotatedImage rotate_image(const RasterImage& img, double angle_deg) {
    const AffineTransform2D pull = AffineTransform2D::rotation_deg_about(
        -angle_deg, (img.width - 1) / 2.0, (img.height - 1) / 2.0);
    return {warp_affine(img, pull, img.width, img.height, Oob::Zero), pull};
}

struct CandidateResult {
    double angle_deg = 0.0;
    int resolution = 0;              // requested pyramid resolution
    double scale_src = 1.0;          // level scale actually used per image
    double scale_tgt = 1.0;
    int match_count = 0;
    int inlier_count = 0;
    bool accepted = false;
    std::string rejection_reason;    // empty when accepted
    double scale_min = 0.0;          // singular values of the fitted level transform
    double scale_max = 0.0;
    AffineTransform2D transform;     // full-res target -> source; identity unless fitted
    double elapsed_ms = 0.0;
};

// Evaluate one (angle, resolution) candidate on prebuilt pyramid levels.
// Matcher or estimation failures reject the candidate instead of propagating.
inline CandidateResult evaluate_candidate(const PyramidLevel& src_level,
                                          const PyramidLevel& tgt_level, double angle_deg,
                                          int resolution, Matcher& matcher,
                                          const RegistrationConfig& cfg,
                                          uint64_t candidate_seed) {
    const auto t0 = std::chrono::steady_clock::now();
    CandidateResult r;
    r.angle_deg = angle_deg;
    r.resolution = resolution;
    r.scale_src = src_level.scale;
    r.scale_tgt = tgt_level.scale;

    auto finish = [&]() -> CandidateResult& {
        r.elapsed_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
        return r;
    };

    RotatedImage rotated = rotate_image(src_level.image, angle_deg);
    MatchSet matches;
    try {
        matches = matcher.match(rotated.image, tgt_level.image);
        matches.validate();
    } catch (const std::exception& e) {
        r.rejection_reason = std::string("matcher error: ") + e.what();
        return finish();
    }
    r.match_count = static_cast<int>(matches.pairs.size());

    RansacResult fit;
    try {
        fit = estimate_affine_ransac(matches, cfg.features.ransac_threshold,
                                     cfg.features.ransac_iterations, candidate_seed);
    } catch (const std::exception& e) {
        r.rejection_reason = std::string("estimation error: ") + e.what();
        return finish();
    }
    r.inlier_count = fit.inlier_count;

    // fit maps target-level coordinates into the rotated source level frame;
    // lift it to full resolution on both sides
    r.transform = compose_affine(
        full_from_level(src_level.scale),
        compose_affine(rotated.to_original,
                       compose_affine(fit.transform, level_from_full(tgt_level.scale))));

    double smin = 0.0, smax = 0.0;
    try {
        const std::array<double, 2> sf = scale_factors(fit.transform);
        smin = sf[0];
        smax = sf[1];
    } catch (const std::exception& e) {
        r.rejection_reason = std::string("degenerate transform: ") + e.what();
        return finish();
    }
    r.scale_min = smin;
    r.scale_max = smax;
    const double lo = 1.0 - cfg.scale_tolerance, hi = 1.0 + cfg.scale_tolerance;
    if (smin < lo || smax > hi) {
        const double change = std::max(std::abs(smin - 1.0), std::abs(smax - 1.0));
        char buf[128];
        std::snprintf(buf, sizeof buf, "scale change %.0f%% exceeds %.0f%%", change * 100.0,
                      cfg.scale_tolerance * 100.0);
        r.rejection_reason = buf;
        return finish();
    }
    for (double v : {r.transform.a11, r.transform.a12, r.transform.t1, r.transform.a21,
                     r.transform.a22, r.transform.t2}) {
        if (!std::isfinite(v)) {
            r.rejection_reason = "non-finite transform";
            return finish();
        }
    }
    r.accepted = true;
    return finish();
}

// Evaluate one candidate from full-resolution preprocessed images: both are
// resized to the requested resolution first (never upscaled). RANSAC is
// seeded from cfg.deterministic_seed.
inline CandidateResult evaluate_candidate(const RasterImage& src_pre,
                                          const RasterImage& tgt_pre, double angle_deg,
                                          int resolution, Matcher& matcher,
                                          const RegistrationConfig& cfg) {
    const int rs = std::min(resolution, std::max(src_pre.width, src_pre.height));
    const int rt = std::min(resolution, std::max(tgt_pre.width, tgt_pre.height));
    return evaluate_candidate(resize_to_max_dim(src_pre, rs), resize_to_max_dim(tgt_pre, rt),
                              angle_deg, resolution, matcher, cfg, cfg.deterministic_seed);
}

struct AlignResult {
    AffineTransform2D transform;  // full-res target -> source (pull); identity on fallback
    bool used_fallback = false;
    int selected_index = -1;  // into candidates, -1 on fallback
    std::vector<CandidateResult> candidates;
    RasterImage source_pre;  // full-res preprocessed inputs, reused downstream
    RasterImage target_pre;
};

namespace detail {

inline double normalized_abs_angle(double deg) {
    double a = std::fmod(deg, 360.0);
    if (a < 0) a += 360.0;
    if (a > 180.0) a = 360.0 - a;  // distance to the nearest multiple of 360
    return a;
}

}  // namespace detail

// Full grid search over cfg.angles x cfg.resolutions. Inputs are raw images;
// 3-channel inputs go through the stain preprocessing chain, single-channel
// through the intensity chain. Selection: most inliers among accepted
// candidates, ties broken by smaller |angle|, larger resolution, lower index.
inline AlignResult exhaustive_align(const RasterImage& source, const RasterImage& target,
                                    const RegistrationConfig& cfg, Matcher& matcher) {
    cfg.validate();
    if (source.width < 5 || source.height < 5 || target.width < 5 || target.height < 5)
        throw std::invalid_argument("exhaustive_align: images must be at least 5x5");
    AlignResult out;
    out.source_pre = preprocess_for_registration(source);
    out.target_pre = preprocess_for_registration(target);

    // pyramid levels per requested resolution, clamped so images never upscale
    std::vector<PyramidLevel> src_levels, tgt_levels;
    src_levels.reserve(cfg.resolutions.size());
    tgt_levels.reserve(cfg.resolutions.size());
    for (int res : cfg.resolutions) {
        const int rs = std::min(res, std::max(out.source_pre.width, out.source_pre.height));
        const int rt = std::min(res, std::max(out.target_pre.width, out.target_pre.height));
        src_levels.push_back(resize_to_max_dim(out.source_pre, rs));
        tgt_levels.push_back(resize_to_max_dim(out.target_pre, rt));
    }

    int best = -1;
    size_t index = 0;
    for (size_t ri = 0; ri < cfg.resolutions.size(); ++ri) {
        for (double angle : cfg.angles) {
            const uint64_t seed = cfg.deterministic_seed ^ (0x9e3779b97f4a7c15ull * (index + 1));
            CandidateResult cand = evaluate_candidate(src_levels[ri], tgt_levels[ri], angle,
                                                      cfg.resolutions[ri], matcher, cfg, seed);
            out.candidates.push_back(std::move(cand));
            const CandidateResult& c = out.candidates.back();
            if (c.accepted) {
                if (best < 0) {
                    best = static_cast<int>(index);
                } else {
                    const CandidateResult& b = out.candidates[best];
                    const double ca = detail::normalized_abs_angle(c.angle_deg);
                    const double ba = detail::normalized_abs_angle(b.angle_deg);
                    if (c.inlier_count > b.inlier_count ||
                        (c.inlier_count == b.inlier_count &&
                         (ca < ba || (ca == ba && c.resolution > b.resolution))))
                        best = static_cast<int>(index);
                }
            }
            ++index;
        }
    }
    if (best >= 0) {
        out.selected_index = best;
        out.transform = out.candidates[best].transform;
    } else {
        out.used_fallback = true;
        out.transform = AffineTransform2D::identity();
    }
    return out;
}

}  // namespace mmreg
