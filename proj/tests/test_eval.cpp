#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "mmreg/deformable.hpp"
#include "mmreg/eval.hpp"
#include "mmreg/synthetic.hpp"

using namespace mmreg;

namespace {

LandmarkSet random_landmarks(int count, double lo, double hi, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Point> pts;
    for (int i = 0; i < count; ++i) pts.push_back({u(rng), u(rng)});
    return LandmarkSet(std::move(pts));
}

TreReport report_with_mean(double mean) {
    TreReport r;
    r.per_point = {mean};
    r.mean = mean;
    r.median = mean;
    r.max = mean;
    r.count = 1;
    return r;
}

}  // namespace

TEST_CASE("transform_landmarks with affines") {
    const LandmarkSet pts = random_landmarks(8, 0.0, 50.0, 5);
    const LandmarkSet same = transform_landmarks(pts, AffineTransform2D::identity());
    for (size_t i = 0; i < pts.size(); ++i) {
        CHECK(same.points[i].x == pts.points[i].x);
        CHECK(same.points[i].y == pts.points[i].y);
    }

    const LandmarkSet moved = transform_landmarks(pts, AffineTransform2D::translation(3, 4));
    for (size_t i = 0; i < pts.size(); ++i) {
        CHECK(moved.points[i].x == pts.points[i].x + 3.0);
        CHECK(moved.points[i].y == pts.points[i].y + 4.0);
    }
}

TEST_CASE("transform_landmarks agrees across representations") {
    // the same affine applied directly and through a baked field must land
    // landmarks на the same positions (bilinear of an affine field is exact)
    const AffineTransform2D t{0.9, -0.3, 5.0, 0.3, 0.9, -2.0};
    const DisplacementField baked = bake_affine_to_field(t, 64, 64);
    const LandmarkSet pts = random_landmarks(12, 2.0, 60.0, 6);
    const LandmarkSet via_affine = transform_landmarks(pts, t);
    const LandmarkSet via_field = transform_landmarks(pts, baked);
    for (size_t i = 0; i < pts.size(); ++i) {
        REQUIRE(via_field.valid[i]);
        CHECK(std::abs(via_affine.points[i].x - via_field.points[i].x) < 1e-6);
        CHECK(std::abs(via_affine.points[i].y - via_field.points[i].y) < 1e-6);
    }
}

TEST_CASE("transform_landmarks with a constant field shifts every point") {
    DisplacementField u = DisplacementField::zeros(32, 32);
    for (float& v : u.dx) v = 1.0f;
    for (float& v : u.dy) v = 2.0f;
    const LandmarkSet pts = random_landmarks(6, 1.0, 30.0, 7);
    const LandmarkSet out = transform_landmarks(pts, u);
    for (size_t i = 0; i < pts.size(); ++i) {
        REQUIRE(out.valid[i]);
        CHECK(std::abs(out.points[i].x - (pts.points[i].x + 1.0)) < 1e-6);
        CHECK(std::abs(out.points[i].y - (pts.points[i].y + 2.0)) < 1e-6);
    }
}

TEST_CASE("transform_landmarks flags points outside the field domain") {
    const DisplacementField u = DisplacementField::zeros(16, 16);
    LandmarkSet pts(std::vector<Point>{{5.0, 5.0}, {20.0, 5.0}, {5.0, -1.0}, {15.0, 15.0}});
    const LandmarkSet out = transform_landmarks(pts, u);
    CHECK(out.valid[0] == 1);
    CHECK(out.valid[1] == 0);  // x beyond width-1
    CHECK(out.valid[2] == 0);  // negative y
    CHECK(out.valid[3] == 1);  // exactly on the far corner is in-domain
    CHECK(out.valid_count() == 2);
}

TEST_CASE("compute_tre on identical sets is zero") {
    const LandmarkSet pts = random_landmarks(9, 0.0, 40.0, 8);
    const TreReport r = compute_tre(pts, pts);
    CHECK(r.mean == 0.0);
    CHECK(r.median == 0.0);
    CHECK(r.max == 0.0);
    CHECK(r.count == 9);
}

TEST_CASE("compute_tre of a single 3-4-5 pair") {
    const LandmarkSet a(std::vector<Point>{{0.0, 0.0}});
    const LandmarkSet b(std::vector<Point>{{3.0, 4.0}});
    const TreReport r = compute_tre(a, b);
    CHECK(r.mean == 5.0);
    CHECK(r.median == 5.0);
    CHECK(r.max == 5.0);
    CHECK(r.count == 1);
}

TEST_CASE("compute_tre statistics match a brute-force recount") {
    const LandmarkSet a = random_landmarks(10, 0.0, 100.0, 9);
    const LandmarkSet b = random_landmarks(10, 0.0, 100.0, 10);
    const TreReport r = compute_tre(a, b);
    REQUIRE(r.count == 10);

    std::vector<double> d;
    for (int i = 0; i < 10; ++i)
        d.push_back(std::hypot(a.points[i].x - b.points[i].x, a.points[i].y - b.points[i].y));
    double sum = 0.0, mx = 0.0;
    for (double v : d) {
        sum += v;
        mx = std::max(mx, v);
    }
    std::sort(d.begin(), d.end());
    CHECK(std::abs(r.mean - sum / 10.0) < 1e-12);
    CHECK(std::abs(r.median - 0.5 * (d[4] + d[5])) < 1e-12);
    CHECK(r.max == mx);
}

TEST_CASE("compute_tre skips invalid pairs and validates inputs") {
    LandmarkSet a = random_landmarks(4, 0.0, 10.0, 11);
    LandmarkSet b = a;
    b.points[2] = {b.points[2].x + 7.0, b.points[2].y};
    b.valid[2] = 0;  // the one disagreeing pair is flagged out
    const TreReport r = compute_tre(a, b);
    CHECK(r.count == 3);
    CHECK(r.mean == 0.0);

    CHECK_THROWS(compute_tre(a, random_landmarks(3, 0.0, 10.0, 12)));
    CHECK_THROWS(compute_tre(LandmarkSet{}, LandmarkSet{}));

    LandmarkSet all_off = a;
    for (auto& v : all_off.valid) v = 0;
    CHECK_THROWS(compute_tre(a, all_off));
}

TEST_CASE("jacobian_folding_report on benign fields") {
    const FoldingReport zero = jacobian_folding_report(DisplacementField::zeros(8, 6));
    CHECK(zero.min_det == 1.0);
    CHECK(zero.fold_count == 0);

    // u(p) = p doubles the map: Jacobian of p + u is 2I, det 4; finite
    // differences of a linear field are exact everywhere including borders
    DisplacementField lin = DisplacementField::zeros(8, 6);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x) {
            lin.dx[y * 8 + x] = static_cast<float>(x);
            lin.dy[y * 8 + x] = static_cast<float>(y);
        }
    const FoldingReport quad = jacobian_folding_report(lin);
    CHECK(quad.min_det == 4.0);
    CHECK(quad.fold_count == 0);
}

TEST_CASE("jacobian_folding_report detects a reflection") {
    // u.dx = -2x maps x to -x: det = (1 - 2) * 1 = -1 at every pixel
    const int w = 7, h = 5;
    DisplacementField refl = DisplacementField::zeros(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) refl.dx[y * w + x] = static_cast<float>(-2 * x);
    const FoldingReport r = jacobian_folding_report(refl);
    CHECK(r.min_det == -1.0);
    CHECK(r.fold_count == static_cast<long long>(w) * h);

    CHECK_THROWS(jacobian_folding_report(DisplacementField::zeros(1, 5)));
}

TEST_CASE("classify_success is a strict relative-improvement test") {
    CHECK(classify_success(report_with_mean(2.0), report_with_mean(1.0)));
    CHECK_FALSE(classify_success(report_with_mean(2.0), report_with_mean(2.0)));
    CHECK_FALSE(classify_success(report_with_mean(2.0), report_with_mean(3.0)));
    // custom threshold scales the bar
    CHECK(classify_success(report_with_mean(2.0), report_with_mean(0.9), 0.5));
    CHECK_FALSE(classify_success(report_with_mean(2.0), report_with_mean(1.1), 0.5));
}

TEST_CASE("run_ablation over synthetic pairs with the built-in matcher") {
    std::vector<AblationPair> pairs;
    for (uint64_t seed : {21ull, 22ull, 23ull}) {
        const SyntheticPair sp = make_synthetic_pair(seed, 160, 20.0, 6.0, -4.0, 0.0);
        AblationPair p;
        p.source = sp.he;
        p.target = sp.shg;
        p.landmarks_source = sp.landmarks_source;
        p.landmarks_target = sp.landmarks_target;
        p.has_landmarks = true;
        pairs.push_back(std::move(p));
    }
    RegistrationConfig cfg;
    cfg.resolutions = {100, 160};

    const BuiltinMatcher matcher(cfg.features);
    std::vector<std::shared_ptr<Matcher>> matchers{
        std::make_shared<BuiltinMatcher>(cfg.features)};
    const std::vector<AblationRow> rows = run_ablation(pairs, matchers, cfg);

    REQUIRE(rows.size() == 1);
    CHECK(rows[0].matcher_name == "builtin");
    CHECK(rows[0].total == 3);
    CHECK(rows[0].success_count >= 0);
    CHECK(rows[0].success_count <= 3);
    CHECK(rows[0].success_rate == 100.0 * rows[0].success_count / rows[0].total);
    CHECK(rows[0].success_count >= 2);  // mild synthetic pairs should mostly register

    CHECK_THROWS(run_ablation({}, matchers, cfg));
    CHECK_THROWS(run_ablation(pairs, {}, cfg));
}

TEST_CASE("run_ablation without landmarks falls back to candidate acceptance") {
    const SyntheticPair sp = make_synthetic_pair(31, 128, 0.0, 0.0, 0.0, 0.0);
    AblationPair p;
    p.source = sp.he;
    p.target = sp.shg;
    p.has_landmarks = false;
    RegistrationConfig cfg;
    cfg.resolutions = {100, 128};
    std::vector<std::shared_ptr<Matcher>> matchers{
        std::make_shared<BuiltinMatcher>(cfg.features)};
    const std::vector<AblationRow> rows = run_ablation({p}, matchers, cfg);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].total == 1);
    CHECK(rows[0].success_count == 1);  // null-transform pair must be accepted
    CHECK(rows[0].success_rate == 100.0);
}

TEST_CASE("ablation_csv prints the fixed four-column shape") {
    std::vector<AblationRow> rows(2);
    rows[0] = {"builtin", 2, 3, 100.0 * 2 / 3};
    rows[1] = {"plugin x", 0, 3, 0.0};
    const std::string csv = ablation_csv(rows);
    CHECK(csv ==
          "matcher,success,total,rate\n"
          "builtin,2,3,66.67\n"
          "plugin x,0,3,0.00\n");

    const std::string table = ablation_table(rows);
    CHECK(table.find("matcher") != std::string::npos);
    CHECK(table.find("66.67%") != std::string::npos);
}
