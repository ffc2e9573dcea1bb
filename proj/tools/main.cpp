// mmreg command-line front end.
//
// Subcommands: register, evaluate, warp, ablate, synth. Every command exits 0
// on success and prints a single `error: ...` line to stderr on failure.
// Exit codes: 2 usage, 3 bad input, 4 numerical failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mmreg/eval.hpp"
#include "mmreg/external_matcher.hpp"
#include "mmreg/image_io.hpp"
#include "mmreg/pipeline.hpp"
#include "mmreg/synthetic.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumerical = 4;

std::unique_ptr<mmreg::Matcher> make_matcher(const mmreg::PipelineConfig& pc) {
    if (pc.matcher_spec == "builtin")
        return std::make_unique<mmreg::BuiltinMatcher>(pc.reg.features);
    return std::make_unique<mmreg::ExternalMatcher>(pc.matcher_spec,
                                                    pc.reg.features.matcher_timeout_s);
}

json candidate_json(const mmreg::CandidateResult& c) {
    json j;
    j["angle_deg"] = c.angle_deg;
    j["resolution"] = c.resolution;
    j["scale_src"] = c.scale_src;
    j["scale_tgt"] = c.scale_tgt;
    j["match_count"] = c.match_count;
    j["inlier_count"] = c.inlier_count;
    j["accepted"] = c.accepted;
    j["rejection_reason"] = c.rejection_reason;
    j["scale_min"] = c.scale_min;
    j["scale_max"] = c.scale_max;
    j["elapsed_ms"] = c.elapsed_ms;
    return j;
}

// Per-level first/last objective values; the full trace would dominate the
// report at production iteration counts.
json trace_summary_json(const std::vector<mmreg::ObjectiveBreakdown>& trace) {
    json levels = json::array();
    size_t i = 0;
    while (i < trace.size()) {
        size_t j = i;
        while (j + 1 < trace.size() && trace[j + 1].level == trace[i].level) ++j;
        json lv;
        lv["level"] = trace[i].level;
        lv["iterations"] = trace[j].iteration;
        lv["initial_total"] = trace[i].total;
        lv["final_total"] = trace[j].total;
        lv["final_similarity"] = trace[j].similarity;
        lv["final_regularity"] = trace[j].regularity;
        lv["total_change"] = trace[j].total - trace[i].total;
        levels.push_back(lv);
        i = j + 1;
    }
    return levels;
}

json report_json(const mmreg::PipelineResult& r, const mmreg::PipelineConfig& pc,
                 const std::string& source_path, const std::string& target_path,
                 bool initial_only) {
    json j;
    j["source"] = source_path;
    j["target"] = target_path;
    j["direction"] = pc.direction;
    j["seed"] = pc.reg.deterministic_seed;
    j["initial_only"] = initial_only;
    j["matcher"] = pc.matcher_spec;

    const auto& a = r.align;
    json initial;
    initial["used_fallback"] = a.used_fallback;
    initial["selected_index"] = a.selected_index;
    if (a.selected_index >= 0)
        initial["selected"] = candidate_json(a.candidates[a.selected_index]);
    int accepted = 0;
    for (const auto& c : a.candidates) accepted += c.accepted ? 1 : 0;
    initial["candidates_total"] = a.candidates.size();
    initial["candidates_accepted"] = accepted;
    json log = json::array();
    for (const auto& c : a.candidates) log.push_back(candidate_json(c));
    initial["candidate_log"] = log;
    j["initial"] = initial;

    json deform;
    deform["ran"] = r.deformable_ran;
    deform["work_scale_src"] = r.work_scale_src;
    deform["work_scale_tgt"] = r.work_scale_tgt;
    deform["trace_levels"] = trace_summary_json(r.trace);
    j["deformable"] = deform;

    j["folding"] = {{"min_det", r.folding.min_det}, {"fold_count", r.folding.fold_count}};
    j["timings_ms"] = {{"initial", r.timings.initial_ms},
                       {"deformable", r.timings.deformable_ms},
                       {"total", r.timings.total_ms}};

    j["transform"] = {r.transform.a11, r.transform.a12, r.transform.t1,
                      r.transform.a21, r.transform.a22, r.transform.t2};
    return j;
}

int cmd_register(const std::string& source_path, const std::string& target_path,
                 const std::string& config_path, const std::string& out_dir,
                 bool initial_only, bool has_seed, uint64_t seed) {
    mmreg::PipelineConfig pc = mmreg::load_pipeline_config(config_path);
    if (has_seed) pc.reg.deterministic_seed = seed;
    pc.reg.validate();

    mmreg::RasterImage source = mmreg::load_image(source_path);
    mmreg::RasterImage target = mmreg::load_image(target_path);
    // shg_to_he registers the flag roles swapped; outputs then map HE -> SHG.
    if (pc.direction == "shg_to_he") std::swap(source, target);

    std::unique_ptr<mmreg::Matcher> matcher = make_matcher(pc);
    const mmreg::PipelineResult r =
        mmreg::run_registration(source, target, pc, *matcher, initial_only);

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);
    mmreg::save_affine(r.transform, (out / "transform.txt").string());
    mmreg::save_displacement_field(r.field, (out / "field.mmdf").string());

    const mmreg::RasterImage overlay =
        mmreg::build_overlay(r.align.source_pre, r.align.target_pre, r.field);
    mmreg::save_image(overlay, (out / "overlay.png").string());

    const json report = report_json(r, pc, source_path, target_path, initial_only);
    std::ofstream rf(out / "report.json", std::ios::binary);
    rf << report.dump(2) << "\n";
    if (!rf) throw mmreg::Error("cannot write " + (out / "report.json").string());

    std::cout << "registered: fallback=" << (r.align.used_fallback ? 1 : 0)
              << " fold_count=" << r.folding.fold_count << " total_ms=" << r.timings.total_ms
              << "\n";
    return 0;
}

int cmd_evaluate(const std::string& landmarks_a_path, const std::string& landmarks_b_path,
                 const std::string& transform_path, const std::string& field_path) {
    const mmreg::LandmarkSet a = mmreg::load_landmarks(landmarks_a_path);
    const mmreg::LandmarkSet b = mmreg::load_landmarks(landmarks_b_path);

    mmreg::LandmarkSet mapped = b;
    if (!transform_path.empty())
        mapped = mmreg::transform_landmarks(b, mmreg::load_affine(transform_path));
    else if (!field_path.empty())
        mapped = mmreg::transform_landmarks(b, mmreg::load_displacement_field(field_path));

    const mmreg::TreReport tre = mmreg::compute_tre(a, mapped);
    std::cout << "tre mean=" << tre.mean << " median=" << tre.median << " max=" << tre.max
              << " count=" << tre.count << "\n";
    return 0;
}

int cmd_warp(const std::string& image_path, const std::string& field_path,
             const std::string& out_path) {
    const mmreg::RasterImage img = mmreg::load_image(image_path);
    const mmreg::DisplacementField field = mmreg::load_displacement_field(field_path);
    mmreg::save_image(mmreg::warp_image(img, field), out_path);
    return 0;
}

int cmd_ablate(const std::string& pairs_path, const std::string& matchers_list,
               const std::string& config_path, const std::string& out_csv) {
    const mmreg::PipelineConfig pc = mmreg::load_pipeline_config(config_path);
    pc.reg.validate();

    // Manifest: CSV `source,target,landmarks_source,landmarks_target`, header
    // required, landmark fields optional.
    std::ifstream in(pairs_path, std::ios::binary);
    if (!in) throw mmreg::Error("cannot open pairs manifest: " + pairs_path);
    std::vector<mmreg::AblationPair> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 || line.empty()) continue;  // header
        std::vector<std::string> cols;
        std::string col;
        std::istringstream row(line);
        while (std::getline(row, col, ',')) cols.push_back(mmreg::detail::trim(col));
        while (cols.size() < 4) cols.emplace_back();
        if (cols.size() > 4 || cols[0].empty() || cols[1].empty())
            throw mmreg::Error("pairs manifest line " + std::to_string(line_no) +
                               ": expected source,target,landmarks_source,landmarks_target");
        mmreg::AblationPair p;
        p.source = mmreg::load_image(cols[0]);
        p.target = mmreg::load_image(cols[1]);
        if (!cols[2].empty() && !cols[3].empty()) {
            p.landmarks_source = mmreg::load_landmarks(cols[2]);
            p.landmarks_target = mmreg::load_landmarks(cols[3]);
            p.has_landmarks = true;
        }
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw mmreg::Error("pairs manifest has no data rows");

    std::vector<std::shared_ptr<mmreg::Matcher>> matchers;
    for (const std::string& spec : mmreg::detail::split_list(matchers_list)) {
        if (spec.empty()) continue;
        if (spec == "builtin")
            matchers.push_back(std::make_shared<mmreg::BuiltinMatcher>(pc.reg.features));
        else
            matchers.push_back(std::make_shared<mmreg::ExternalMatcher>(
                spec, pc.reg.features.matcher_timeout_s));
    }
    if (matchers.empty()) throw mmreg::Error("no matchers given");

    const std::vector<mmreg::AblationRow> rows =
        mmreg::run_ablation(pairs, matchers, pc.reg);
    mmreg::detail::write_file_bytes(out_csv, mmreg::ablation_csv(rows));
    std::cout << mmreg::ablation_table(rows);
    return 0;
}

int cmd_synth(uint64_t seed, int size, double rotation, double tx, double ty, double deform,
              const std::string& out_dir) {
    const mmreg::SyntheticPair pair =
        mmreg::make_synthetic_pair(seed, size, rotation, tx, ty, deform);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);
    mmreg::save_image(pair.he, (out / "he.png").string());
    mmreg::save_image(pair.shg, (out / "shg.png").string(), 16);
    mmreg::save_affine(pair.gt_transform, (out / "gt_transform.txt").string());
    mmreg::save_displacement_field(pair.gt_field, (out / "gt_field.mmdf").string());
    mmreg::save_landmarks(pair.landmarks_source, (out / "landmarks_source.csv").string());
    mmreg::save_landmarks(pair.landmarks_target, (out / "landmarks_target.csv").string());
    std::cout << "synthetic pair written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage multimodal image registration"};
    app.require_subcommand(1);

    // register
    std::string reg_source, reg_target, reg_config, reg_out;
    bool reg_initial_only = false;
    uint64_t reg_seed = 0;
    auto* reg = app.add_subcommand("register", "align a source image onto a target image");
    reg->add_option("--source", reg_source)->required();
    reg->add_option("--target", reg_target)->required();
    reg->add_option("--config", reg_config)->required();
    reg->add_option("--out", reg_out)->required();
    reg->add_flag("--initial-only", reg_initial_only);
    auto* seed_opt = reg->add_option("--seed", reg_seed);

    // evaluate
    std::string ev_a, ev_b, ev_transform, ev_field;
    auto* ev = app.add_subcommand("evaluate", "landmark registration error");
    ev->add_option("--landmarks-a", ev_a)->required();
    ev->add_option("--landmarks-b", ev_b)->required();
    auto* ev_t = ev->add_option("--transform", ev_transform);
    auto* ev_f = ev->add_option("--field", ev_field);
    ev_t->excludes(ev_f);

    // warp
    std::string wp_image, wp_field, wp_out;
    auto* wp = app.add_subcommand("warp", "resample an image through a displacement field");
    wp->add_option("--image", wp_image)->required();
    wp->add_option("--field", wp_field)->required();
    wp->add_option("--out", wp_out)->required();

    // ablate
    std::string ab_pairs, ab_matchers, ab_config, ab_out;
    auto* ab = app.add_subcommand("ablate", "matcher success-rate sweep over image pairs");
    ab->add_option("--pairs", ab_pairs)->required();
    ab->add_option("--matchers", ab_matchers)->required();
    ab->add_option("--config", ab_config)->required();
    ab->add_option("--out", ab_out)->required();

    // synth
    uint64_t sy_seed = 1;
    int sy_size = 512;
    double sy_rotation = 0.0, sy_tx = 0.0, sy_ty = 0.0, sy_deform = 0.0;
    std::string sy_out;
    auto* sy = app.add_subcommand("synth", "generate a synthetic stained/structural pair");
    sy->add_option("--seed", sy_seed)->required();
    sy->add_option("--size", sy_size)->required();
    sy->add_option("--rotation", sy_rotation)->required();
    sy->add_option("--tx", sy_tx)->required();
    sy->add_option("--ty", sy_ty)->required();
    sy->add_option("--deform", sy_deform)->required();
    sy->add_option("--out", sy_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (reg->parsed())
            return cmd_register(reg_source, reg_target, reg_config, reg_out, reg_initial_only,
                                seed_opt->count() > 0, reg_seed);
        if (ev->parsed()) return cmd_evaluate(ev_a, ev_b, ev_transform, ev_field);
        if (wp->parsed()) return cmd_warp(wp_image, wp_field, wp_out);
        if (ab->parsed()) return cmd_ablate(ab_pairs, ab_matchers, ab_config, ab_out);
        if (sy->parsed())
            return cmd_synth(sy_seed, sy_size, sy_rotation, sy_tx, sy_ty, sy_deform, sy_out);
    } catch (const mmreg::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    std::cerr << "error: no subcommand\n";
    return kExitUsage;
}
