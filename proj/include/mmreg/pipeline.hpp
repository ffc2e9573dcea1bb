#pragma once

// End-to-end two-stage registration: exhaustive initial alignment at low
// resolution, then optional deformable refinement at a capped working
// resolution. The returned transform and field both map target coordinates
// into the source frame at full resolution.

#include <chrono>

#include "mmreg/affine_search.hpp"
#include "mmreg/core.hpp"
#include "mmreg/deformable.hpp"
#include "mmreg/eval.hpp"
#include "mmreg/io.hpp"
#include "mmreg/preprocess.hpp"

namespace mmreg {

struct StageTimings {
    double initial_ms = 0.0;
    double deformable_ms = 0.0;
    double total_ms = 0.0;
};

struct PipelineResult {
    AlignResult align;            // initial-stage details, candidate log included
    AffineTransform2D transform;  // full-resolution affine, target -> source
    DisplacementField field;      // full-resolution total mapping, target -> source
    std::vector<ObjectiveBreakdown> trace;  // deformable objective trace
    bool deformable_ran = false;
    double work_scale_src = 1.0;  // working / full resolution, per image
    double work_scale_tgt = 1.0;
    FoldingReport folding;  // of the final full-resolution field
    StageTimings timings;
};

inline PipelineResult run_registration(const RasterImage& source, const RasterImage& target,
                                       const PipelineConfig& pc, Matcher& matcher,
                                       bool initial_only = false) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto ms_since = [](clock::time_point from) {
        return std::chrono::duration<double, std::milli>(clock::now() - from).count();
    };

    PipelineResult out;
    out.align = exhaustive_align(source, target, pc.reg, matcher);
    out.transform = out.align.transform;
    out.timings.initial_ms = ms_since(t0);

    if (pc.deformable_enabled && !initial_only) {
        const auto t1 = clock::now();
        const int cap_src =
            std::min(pc.deformable_resolution, std::max(source.width, source.height));
        const int cap_tgt =
            std::min(pc.deformable_resolution, std::max(target.width, target.height));
        const PyramidLevel work_src = resize_to_max_dim(out.align.source_pre, cap_src);
        const PyramidLevel work_tgt = resize_to_max_dim(out.align.target_pre, cap_tgt);
        out.work_scale_src = work_src.scale;
        out.work_scale_tgt = work_tgt.scale;
        // carry the full-frame affine into the working frame
        const AffineTransform2D init = compose_affine(
            level_from_full(work_src.scale),
            compose_affine(out.transform, full_from_level(work_tgt.scale)));
        DeformableResult deform =
            instance_optimize(work_src.image, work_tgt.image, init, pc.reg);
        out.trace = std::move(deform.trace);
        out.field = lift_field_to_full(deform.field, target.width, target.height,
                                       work_src.scale, work_tgt.scale);
        out.deformable_ran = true;
        out.timings.deformable_ms = ms_since(t1);
    } else {
        out.field = bake_affine_to_field(out.transform, target.width, target.height);
    }

    out.folding = jacobian_folding_report(out.field);
    out.timings.total_ms = ms_since(t0);
    return out;
}

// warped preprocessed source in red, preprocessed target in green, blue empty
inline RasterImage build_overlay(const RasterImage& source_pre, const RasterImage& target_pre,
                                 const DisplacementField& field) {
    if (source_pre.channels != 1 || target_pre.channels != 1)
        throw std::invalid_argument("build_overlay: expects single-channel inputs");
    if (field.width != target_pre.width || field.height != target_pre.height)
        throw std::invalid_argument("build_overlay: field does not match target dimensions");
    const RasterImage warped = warp_image(source_pre, field);
    RasterImage out = RasterImage::zeros(target_pre.width, target_pre.height, 3);
    const size_t n = static_cast<size_t>(out.width) * out.height;
    for (size_t i = 0; i < n; ++i) {
        out.data[3 * i] = warped.data[i];
        out.data[3 * i + 1] = target_pre.data[i];
    }
    return out;
}

}  // namespace mmreg
