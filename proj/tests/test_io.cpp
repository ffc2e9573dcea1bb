#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "mmreg/eval.hpp"
#include "mmreg/image_io.hpp"
#include "mmreg/io.hpp"
#include "mmreg/synthetic.hpp"

using namespace mmreg;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string scratch_dir() {
    static const std::string dir = [] {
        std::string tmpl = (std::filesystem::temp_directory_path() / "mmreg_io_XXXXXX").string();
        char* made = mkdtemp(tmpl.data());
        REQUIRE(made != nullptr);
        return std::string(made);
    }();
    return dir;
}

std::string scratch_path(const std::string& name) { return scratch_dir() + "/" + name; }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("affine save/load round trip is exact") {
    const AffineTransform2D t{0.123456789012345, -1.5, 20.25, 0.333333333333333, 2.0, -15.0};
    const std::string path = scratch_path("t.txt");
    save_affine(t, path);
    const AffineTransform2D r = load_affine(path);
    CHECK(r.a11 == t.a11);
    CHECK(r.a12 == t.a12);
    CHECK(r.t1 == t.t1);
    CHECK(r.a21 == t.a21);
    CHECK(r.a22 == t.a22);
    CHECK(r.t2 == t.t2);
}

TEST_CASE("load_affine validates shape and the homogeneous row") {
    const std::string p1 = scratch_path("bad1.txt");
    write_text(p1, "1 0 0\n0 1 0\n");
    CHECK_THROWS_WITH(load_affine(p1), ContainsSubstring("expected 9 numbers"));

    const std::string p2 = scratch_path("bad2.txt");
    write_text(p2, "1 0 0\n0 1 0\n0 0 2\n");
    CHECK_THROWS_WITH(load_affine(p2), ContainsSubstring("last row must be 0 0 1"));

    const std::string p3 = scratch_path("bad3.txt");
    write_text(p3, "0 0 0\n0 0 0\n0 0 1\n");  // singular linear part
    CHECK_THROWS(load_affine(p3));

    // comments and blank lines are tolerated
    const std::string p4 = scratch_path("ok.txt");
    write_text(p4, "# transform\n\n2 0 1\n0 2 -1\n0 0 1\n");
    const AffineTransform2D t = load_affine(p4);
    CHECK(t.a11 == 2.0);
    CHECK(t.t2 == -1.0);
}

TEST_CASE("displacement field round trip is bit-exact") {
    DisplacementField u = DisplacementField::zeros(17, 9);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> d(-30.0f, 30.0f);
    for (float& v : u.dx) v = d(rng);
    for (float& v : u.dy) v = d(rng);

    const std::string path = scratch_path("u.mmdf");
    save_displacement_field(u, path);
    const DisplacementField r = load_displacement_field(path);
    REQUIRE(r.width == 17);
    REQUIRE(r.height == 9);
    for (size_t i = 0; i < u.dx.size(); ++i) {
        CHECK(r.dx[i] == u.dx[i]);
        CHECK(r.dy[i] == u.dy[i]);
    }
}

TEST_CASE("displacement field load rejects malformed files") {
    const std::string good = scratch_path("g.mmdf");
    save_displacement_field(DisplacementField::zeros(4, 3), good);
    const std::string bytes = detail::read_file_bytes(good);

    const std::string bad_magic = scratch_path("m.mmdf");
    detail::write_file_bytes(bad_magic, "XXXX" + bytes.substr(4));
    CHECK_THROWS_WITH(load_displacement_field(bad_magic), ContainsSubstring("bad magic"));

    std::string wrong_version = bytes;
    wrong_version[4] = 2;
    const std::string bad_version = scratch_path("v.mmdf");
    detail::write_file_bytes(bad_version, wrong_version);
    CHECK_THROWS_WITH(load_displacement_field(bad_version),
                      ContainsSubstring("unsupported version 2"));

    const std::string truncated = scratch_path("t.mmdf");
    detail::write_file_bytes(truncated, bytes.substr(0, bytes.size() - 5));
    // 13-byte header + 4*3*8 payload = 109 expected, 104 on disk
    CHECK_THROWS_WITH(load_displacement_field(truncated),
                      ContainsSubstring("expected 109 bytes, found 104"));

    std::string zero_dims = bytes.substr(0, 13);
    zero_dims[5] = zero_dims[6] = zero_dims[7] = zero_dims[8] = 0;  // width = 0
    const std::string empty_field = scratch_path("e.mmdf");
    detail::write_file_bytes(empty_field, zero_dims);
    CHECK_THROWS_WITH(load_displacement_field(empty_field), ContainsSubstring("empty field"));
}

TEST_CASE("landmark CSV round trip") {
    // coordinates on 1/64 steps are exact at the format's six decimals
    LandmarkSet set(std::vector<Point>{{10.5, 20.25}, {0.015625, 99.984375}, {3.0, 4.0}});
    const std::string path = scratch_path("lm.csv");
    save_landmarks(set, path);
    const LandmarkSet r = load_landmarks(path);
    REQUIRE(r.size() == 3);
    for (size_t i = 0; i < set.size(); ++i) {
        CHECK(r.points[i].x == set.points[i].x);
        CHECK(r.points[i].y == set.points[i].y);
    }
}

TEST_CASE("landmark CSV parsing edge cases") {
    const std::string one = scratch_path("one.csv");
    write_text(one, "x,y\n10.5,20.25\n");
    const LandmarkSet s1 = load_landmarks(one);
    REQUIRE(s1.size() == 1);
    CHECK(s1.points[0].x == 10.5);
    CHECK(s1.points[0].y == 20.25);

    const std::string header_only = scratch_path("h.csv");
    write_text(header_only, "x,y\n");
    CHECK(load_landmarks(header_only).size() == 0);

    const std::string crlf = scratch_path("crlf.csv");
    write_text(crlf, "x,y\r\n1.0,2.0\r\n");
    const LandmarkSet s2 = load_landmarks(crlf);
    REQUIRE(s2.size() == 1);
    CHECK(s2.points[0].x == 1.0);

    const std::string bad_row = scratch_path("bad_row.csv");
    write_text(bad_row, "x,y\na,b\n");
    CHECK_THROWS_WITH(load_landmarks(bad_row), ContainsSubstring("malformed row at line 2"));

    const std::string no_header = scratch_path("nh.csv");
    write_text(no_header, "1.0,2.0\n");
    CHECK_THROWS_WITH(load_landmarks(no_header), ContainsSubstring("missing x,y header"));

    const std::string trailing_junk = scratch_path("tj.csv");
    write_text(trailing_junk, "x,y\n1.0,2.0extra\n");
    CHECK_THROWS_WITH(load_landmarks(trailing_junk), ContainsSubstring("malformed row"));
}

TEST_CASE("image round trip stays within the quantization bound") {
    RasterImage gray = RasterImage::zeros(19, 11, 1);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : gray.data) v = u(rng);
    gray.data[0] = 0.0f;
    gray.data[1] = 1.0f;  // endpoints must survive exactly

    const std::string p8 = scratch_path("g8.png");
    save_image(gray, p8, 8);
    const RasterImage r8 = load_image(p8);
    REQUIRE(r8.width == 19);
    REQUIRE(r8.channels == 1);
    for (size_t i = 0; i < gray.data.size(); ++i)
        CHECK(std::abs(r8.data[i] - gray.data[i]) <= 0.5f / 255.0f + 1e-7f);
    CHECK(r8.data[0] == 0.0f);
    CHECK(r8.data[1] == 1.0f);

    const std::string p16 = scratch_path("g16.png");
    save_image(gray, p16, 16);
    const RasterImage r16 = load_image(p16);
    for (size_t i = 0; i < gray.data.size(); ++i)
        CHECK(std::abs(r16.data[i] - gray.data[i]) <= 0.5f / 65535.0f + 1e-7f);
}

TEST_CASE("color image round trip keeps channel order") {
    RasterImage rgb = RasterImage::zeros(5, 4, 3);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
            float* p = &rgb.data[(static_cast<size_t>(y) * 5 + x) * 3];
            p[0] = 1.0f;  // pure red
            p[1] = static_cast<float>(x) / 8.0f;
            p[2] = static_cast<float>(y) / 8.0f;
        }
    const std::string path = scratch_path("c.png");
    save_image(rgb, path, 8);
    const RasterImage r = load_image(path);
    REQUIRE(r.channels == 3);
    for (size_t i = 0; i < rgb.data.size(); ++i)
        CHECK(std::abs(r.data[i] - rgb.data[i]) <= 0.5f / 255.0f + 1e-7f);
    CHECK(r.data[0] == 1.0f);

    CHECK_THROWS(load_image(scratch_path("missing.png")));
    CHECK_THROWS(save_image(rgb, path, 12));
}

TEST_CASE("config parsing keeps defaults for absent keys") {
    const PipelineConfig cfg = parse_pipeline_config("");
    CHECK(cfg.direction == "he_to_shg");
    CHECK(cfg.deformable_enabled);
    CHECK(cfg.deformable_resolution == 1024);
    CHECK(cfg.matcher_spec == "builtin");
    CHECK(cfg.reg.angles.size() == 12);
    CHECK(cfg.reg.resolutions == std::vector<int>{100, 200, 300, 400, 500});
    CHECK(cfg.reg.scale_tolerance == 0.10);
    CHECK(cfg.reg.levels.size() == 3);
}

TEST_CASE("config parsing applies every recognized key") {
    const std::string text =
        "# full config\n"
        "angles = 0, 90, 180\n"
        "resolutions = 100, 150\n"
        "scale_tolerance = 0.2\n"
        "seed = 7\n"
        "direction = shg_to_he\n"
        "deformable = off\n"
        "deformable_resolution = 512\n"
        "matcher = external python3 m.py --fast\n"
        "matcher_timeout = 12.5\n"
        "max_keypoints = 300\n"
        "match_ratio = 0.7\n"
        "ransac_threshold = 2.5\n"
        "ransac_iterations = 500\n"
        "level_thetas = 1.0, 2.0\n"
        "level_iterations = 10, 20\n"
        "level_step_sizes = 0.1, 0.2\n"
        "level_mi_bins = 8, 16\n"
        "level_mi_windows = 32, 64\n"
        "level_mi_strides = 16, 32\n";
    const PipelineConfig cfg = parse_pipeline_config(text);
    CHECK(cfg.reg.angles == std::vector<double>{0.0, 90.0, 180.0});
    CHECK(cfg.reg.resolutions == std::vector<int>{100, 150});
    CHECK(cfg.reg.scale_tolerance == 0.2);
    CHECK(cfg.reg.deterministic_seed == 7);
    CHECK(cfg.direction == "shg_to_he");
    CHECK_FALSE(cfg.deformable_enabled);
    CHECK(cfg.deformable_resolution == 512);
    CHECK(cfg.matcher_spec == "python3 m.py --fast");
    CHECK(cfg.reg.features.matcher_timeout_s == 12.5);
    CHECK(cfg.reg.features.max_keypoints == 300);
    CHECK(cfg.reg.features.match_ratio == 0.7);
    CHECK(cfg.reg.features.ransac_threshold == 2.5);
    CHECK(cfg.reg.features.ransac_iterations == 500);
    REQUIRE(cfg.reg.levels.size() == 2);
    CHECK(cfg.reg.levels[0].theta == 1.0);
    CHECK(cfg.reg.levels[1].iterations == 20);
    CHECK(cfg.reg.levels[0].step_size == 0.1);
    CHECK(cfg.reg.levels[1].mi_bins == 16);
    CHECK(cfg.reg.levels[0].mi_window == 32);
    CHECK(cfg.reg.levels[1].mi_stride == 32);
}

TEST_CASE("config parsing rejects malformed input by name") {
    CHECK_THROWS_WITH(parse_pipeline_config("wibble = 3\n"),
                      ContainsSubstring("unknown key 'wibble'"));
    CHECK_THROWS_WITH(parse_pipeline_config("scale_tolerance = abc\n"),
                      ContainsSubstring("'scale_tolerance'"));
    CHECK_THROWS_WITH(parse_pipeline_config("seed = 1\nseed = 2\n"),
                      ContainsSubstring("duplicate key 'seed'"));
    CHECK_THROWS_WITH(parse_pipeline_config("just a line\n"),
                      ContainsSubstring("config line 1"));
    CHECK_THROWS_WITH(parse_pipeline_config("direction = upside_down\n"),
                      ContainsSubstring("direction"));
    CHECK_THROWS_WITH(parse_pipeline_config("level_thetas = 1, 2\nlevel_iterations = 5\n"),
                      ContainsSubstring("disagree in length"));
    CHECK_THROWS_WITH(parse_pipeline_config("matcher = external\n"),
                      ContainsSubstring("external needs a command"));
    CHECK_THROWS_WITH(parse_pipeline_config("deformable_resolution = 16\n"),
                      ContainsSubstring("must be >= 32"));
    // integer keys reject fractions
    CHECK_THROWS_WITH(parse_pipeline_config("max_keypoints = 10.5\n"),
                      ContainsSubstring("expected an integer"));
}

TEST_CASE("load_pipeline_config prefixes errors with the path") {
    const std::string path = scratch_path("bad.cfg");
    write_text(path, "nonsense = 1\n");
    CHECK_THROWS_WITH(load_pipeline_config(path), ContainsSubstring(path));
}

TEST_CASE("synthetic pairs are deterministic in the seed") {
    const SyntheticPair a = make_synthetic_pair(9, 96, 30.0, 5.0, -3.0, 2.0);
    const SyntheticPair b = make_synthetic_pair(9, 96, 30.0, 5.0, -3.0, 2.0);
    CHECK(a.he.data == b.he.data);
    CHECK(a.shg.data == b.shg.data);
    CHECK(a.gt_field.dx == b.gt_field.dx);
    CHECK(a.gt_field.dy == b.gt_field.dy);
    REQUIRE(a.landmarks_source.size() == b.landmarks_source.size());
    for (size_t i = 0; i < a.landmarks_source.size(); ++i) {
        CHECK(a.landmarks_source.points[i].x == b.landmarks_source.points[i].x);
        CHECK(a.landmarks_source.points[i].y == b.landmarks_source.points[i].y);
    }

    const SyntheticPair c = make_synthetic_pair(10, 96, 30.0, 5.0, -3.0, 2.0);
    CHECK(a.he.data != c.he.data);  // different seed, different tissue
}

TEST_CASE("synthetic pair shapes and ranges") {
    const SyntheticPair p = make_synthetic_pair(4, 96, 15.0, 2.0, 1.0, 1.5);
    CHECK(p.he.width == 96);
    CHECK(p.he.channels == 3);
    CHECK(p.shg.width == 96);
    CHECK(p.shg.channels == 1);
    for (float v : p.he.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    for (float v : p.shg.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(p.landmarks_source.size() == 25);
    CHECK(p.landmarks_target.size() == 25);

    CHECK_THROWS(make_synthetic_pair(1, 32, 0, 0, 0, 0));
    CHECK_THROWS(make_synthetic_pair(1, 96, 0, 0, 0, -1.0));
    CHECK_THROWS(make_synthetic_pair(1, 96, 0, 0, 0, 0, 0.0));
}

TEST_CASE("synthetic identity pair has an identity ground truth") {
    const SyntheticPair p = make_synthetic_pair(5, 96, 0.0, 0.0, 0.0, 0.0);
    CHECK(std::abs(p.gt_transform.a11 - 1.0) < 1e-12);
    CHECK(std::abs(p.gt_transform.a12) < 1e-12);
    CHECK(std::abs(p.gt_transform.t1) < 1e-12);
    CHECK(std::abs(p.gt_transform.a22 - 1.0) < 1e-12);
    for (size_t i = 0; i < p.landmarks_source.size(); ++i) {
        CHECK(std::abs(p.landmarks_source.points[i].x - p.landmarks_target.points[i].x) < 1e-9);
        CHECK(std::abs(p.landmarks_source.points[i].y - p.landmarks_target.points[i].y) < 1e-9);
    }
}

TEST_CASE("synthetic landmarks sit exactly on the ground truth") {
    // mapping target landmarks through the gt field must reproduce the
    // source landmarks: that is what "ground truth" means here
    const SyntheticPair p = make_synthetic_pair(6, 128, 45.0, 20.0, -15.0, 0.0);
    const LandmarkSet mapped = transform_landmarks(p.landmarks_target, p.gt_transform);
    for (size_t i = 0; i < mapped.size(); ++i) {
        CHECK(std::abs(mapped.points[i].x - p.landmarks_source.points[i].x) < 1e-9);
        CHECK(std::abs(mapped.points[i].y - p.landmarks_source.points[i].y) < 1e-9);
    }

    // with deformation the affine alone no longer suffices but the field does
    const SyntheticPair q = make_synthetic_pair(6, 128, 10.0, 4.0, 2.0, 3.0);
    const LandmarkSet via_field = transform_landmarks(q.landmarks_target, q.gt_field);
    for (size_t i = 0; i < via_field.size(); ++i) {
        if (!via_field.valid[i]) continue;
        CHECK(std::abs(via_field.points[i].x - q.landmarks_source.points[i].x) < 0.05);
        CHECK(std::abs(via_field.points[i].y - q.landmarks_source.points[i].y) < 0.05);
    }

    // scale factors of the gt affine reflect the scale argument
    const SyntheticPair s = make_synthetic_pair(6, 96, 0.0, 0.0, 0.0, 0.0, 1.3);
    const auto [smin, smax] = scale_factors(s.gt_transform);
    CHECK(std::abs(smin - 1.3) < 1e-9);
    CHECK(std::abs(smax - 1.3) < 1e-9);
}
