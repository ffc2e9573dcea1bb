#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mmreg/affine_search.hpp"
#include "mmreg/synthetic.hpp"

using namespace mmreg;

namespace {

bool affine_close(const AffineTransform2D& a, const AffineTransform2D& b, double tol) {
    return std::abs(a.a11 - b.a11) <= tol && std::abs(a.a12 - b.a12) <= tol &&
           std::abs(a.t1 - b.t1) <= tol && std::abs(a.a21 - b.a21) <= tol &&
           std::abs(a.a22 - b.a22) <= tol && std::abs(a.t2 - b.t2) <= tol;
}

RegistrationConfig quick_config() {
    RegistrationConfig cfg;
    cfg.resolutions = {100, 200};
    return cfg;
}

double normalized_abs_angle(double deg) {
    double a = std::fmod(deg, 360.0);
    if (a < 0) a += 360.0;
    if (a > 180.0) a = 360.0 - a;
    return a;
}

}  // namespace

TEST_CASE("rotate_image by zero is the identity") {
    const SyntheticPair pair = make_synthetic_pair(3, 96, 0, 0, 0, 0);
    const RotatedImage r = rotate_image(pair.shg, 0.0);
    REQUIRE(r.image.data.size() == pair.shg.data.size());
    for (size_t i = 0; i < r.image.data.size(); ++i)
        CHECK(r.image.data[i] == pair.shg.data[i]);
    CHECK(affine_close(r.to_original, AffineTransform2D::identity(), 1e-12));
}

TEST_CASE("rotate_image by a full turn returns home") {
    const SyntheticPair pair = make_synthetic_pair(4, 96, 0, 0, 0, 0);
    const RotatedImage r = rotate_image(pair.shg, 360.0);
    for (size_t i = 0; i < r.image.data.size(); ++i)
        CHECK(std::abs(r.image.data[i] - pair.shg.data[i]) < 1e-6f);
    CHECK(affine_close(r.to_original, AffineTransform2D::identity(), 1e-9));
}

TEST_CASE("rotate_image by 90 degrees permutes a square grid") {
    // label every pixel uniquely, rotate, compare against the known index map
    const int n = 8;
    RasterImage img = RasterImage::zeros(n, n, 1);
    for (int i = 0; i < n * n; ++i) img.data[i] = static_cast<float>(i) / (n * n - 1);

    const RotatedImage r = rotate_image(img, 90.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            // source pixel (x, y) relocates to (n-1-y, x)
            const int rx = n - 1 - y, ry = x;
            CHECK(std::abs(r.image.data[ry * n + rx] - img.data[y * n + x]) < 1e-6f);
            // and the returned transform maps the new position back
            const Point back = apply_affine_to_point(r.to_original,
                                                     {static_cast<double>(rx),
                                                      static_cast<double>(ry)});
            CHECK(std::abs(back.x - x) < 1e-9);
            CHECK(std::abs(back.y - y) < 1e-9);
        }
}

TEST_CASE("null registration recovers a near-identity transform") {
    const SyntheticPair pair = make_synthetic_pair(11, 192, 0, 0, 0, 0);
    RegistrationConfig cfg = quick_config();
    BuiltinMatcher matcher(cfg.features);
    const AlignResult res = exhaustive_align(pair.he, pair.shg, cfg, matcher);

    REQUIRE(!res.used_fallback);
    CHECK(std::hypot(res.transform.t1, res.transform.t2) < 2.0);
    CHECK(std::abs(res.transform.a11 - 1.0) < 0.05);
    CHECK(std::abs(res.transform.a22 - 1.0) < 0.05);
    CHECK(std::abs(res.transform.a12) < 0.05);
    CHECK(std::abs(res.transform.a21) < 0.05);
    CHECK(res.candidates.size() == cfg.angles.size() * cfg.resolutions.size());
}

TEST_CASE("a 30 percent scale change is rejected with the stated reason") {
    const SyntheticPair pair = make_synthetic_pair(13, 192, 0, 0, 0, 0, 1.3);
    RegistrationConfig cfg = quick_config();
    BuiltinMatcher matcher(cfg.features);
    const AlignResult res = exhaustive_align(pair.he, pair.shg, cfg, matcher);

    CHECK(res.used_fallback);
    CHECK(res.selected_index == -1);
    CHECK(affine_close(res.transform, AffineTransform2D::identity(), 0.0));
    for (const CandidateResult& c : res.candidates) CHECK(!c.accepted);

    bool saw_scale_reason = false;
    for (const CandidateResult& c : res.candidates)
        saw_scale_reason = saw_scale_reason ||
                           c.rejection_reason.find("% exceeds 10%") != std::string::npos;
    CHECK(saw_scale_reason);
}

TEST_CASE("a 5 percent scale change passes the filter") {
    const SyntheticPair pair = make_synthetic_pair(13, 192, 0, 0, 0, 0, 1.05);
    RegistrationConfig cfg = quick_config();
    BuiltinMatcher matcher(cfg.features);
    const AlignResult res = exhaustive_align(pair.he, pair.shg, cfg, matcher);
    CHECK(!res.used_fallback);
    int accepted = 0;
    for (const CandidateResult& c : res.candidates) accepted += c.accepted ? 1 : 0;
    CHECK(accepted > 0);
}

TEST_CASE("blank target falls back to identity without erroring") {
    const SyntheticPair pair = make_synthetic_pair(17, 128, 0, 0, 0, 0);
    const RasterImage blank = RasterImage::zeros(128, 128, 1);
    RegistrationConfig cfg = quick_config();
    BuiltinMatcher matcher(cfg.features);
    const AlignResult res = exhaustive_align(pair.he, blank, cfg, matcher);
    CHECK(res.used_fallback);
    CHECK(affine_close(res.transform, AffineTransform2D::identity(), 0.0));
    for (const CandidateResult& c : res.candidates) {
        CHECK(!c.accepted);
        CHECK(!c.rejection_reason.empty());
    }
}

TEST_CASE("selection is the documented argmax with tie-breaking") {
    const SyntheticPair pair = make_synthetic_pair(19, 192, 30, 5, -3, 0);
    RegistrationConfig cfg = quick_config();
    BuiltinMatcher matcher(cfg.features);
    const AlignResult res = exhaustive_align(pair.he, pair.shg, cfg, matcher);
    REQUIRE(!res.used_fallback);
    REQUIRE(res.selected_index >= 0);

    // recompute the argmax over accepted candidates from the log
    int best = -1;
    for (int i = 0; i < static_cast<int>(res.candidates.size()); ++i) {
        const CandidateResult& c = res.candidates[i];
        if (!c.accepted) continue;
        if (best < 0) {
            best = i;
            continue;
        }
        const CandidateResult& b = res.candidates[best];
        if (c.inlier_count > b.inlier_count)
            best = i;
        else if (c.inlier_count == b.inlier_count) {
            const double na = normalized_abs_angle(c.angle_deg);
            const double nb = normalized_abs_angle(b.angle_deg);
            if (na < nb || (na == nb && c.resolution > b.resolution)) best = i;
        }
    }
    CHECK(res.selected_index == best);
    CHECK(res.candidates[res.selected_index].accepted);

    // every accepted candidate satisfies the scale criterion
    for (const CandidateResult& c : res.candidates)
        if (c.accepted) {
            CHECK(c.scale_min >= 1.0 - cfg.scale_tolerance);
            CHECK(c.scale_max <= 1.0 + cfg.scale_tolerance);
        }
}

TEST_CASE("exhaustive_align is deterministic for a fixed seed") {
    const SyntheticPair pair = make_synthetic_pair(23, 160, 60, -4, 7, 0);
    RegistrationConfig cfg = quick_config();
    cfg.deterministic_seed = 99;

    BuiltinMatcher m1(cfg.features), m2(cfg.features);
    const AlignResult r1 = exhaustive_align(pair.he, pair.shg, cfg, m1);
    const AlignResult r2 = exhaustive_align(pair.he, pair.shg, cfg, m2);

    REQUIRE(r1.candidates.size() == r2.candidates.size());
    CHECK(r1.selected_index == r2.selected_index);
    CHECK(r1.used_fallback == r2.used_fallback);
    CHECK(affine_close(r1.transform, r2.transform, 0.0));
    for (size_t i = 0; i < r1.candidates.size(); ++i) {
        const CandidateResult &a = r1.candidates[i], &b = r2.candidates[i];
        CHECK(a.angle_deg == b.angle_deg);
        CHECK(a.resolution == b.resolution);
        CHECK(a.match_count == b.match_count);
        CHECK(a.inlier_count == b.inlier_count);
        CHECK(a.accepted == b.accepted);
        CHECK(a.rejection_reason == b.rejection_reason);
        CHECK(affine_close(a.transform, b.transform, 0.0));
        CHECK(a.scale_min == b.scale_min);
        CHECK(a.scale_max == b.scale_max);
    }
}

TEST_CASE("tiny inputs are rejected") {
    const RasterImage tiny = RasterImage::zeros(4, 4, 1);
    const RasterImage ok = RasterImage::zeros(64, 64, 1);
    RegistrationConfig cfg = quick_config();
    BuiltinMatcher matcher(cfg.features);
    CHECK_THROWS(exhaustive_align(tiny, ok, cfg, matcher));
    CHECK_THROWS(exhaustive_align(ok, tiny, cfg, matcher));
}
