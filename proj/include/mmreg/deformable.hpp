#pragma once

// Deformable refinement by direct instance optimization: a dense displacement
// field over the target grid is optimized to minimize
//
//     loss(u) = -localMI(source(q + u(q)), target) + theta * Reg(u)
//
// coarse-to-fine. Local mutual information uses Parzen joint histograms with
// a triangular kernel over sliding windows; Reg is the diffusive penalty on
// the field's forward differences. Steps follow the Adam direction but are
// only taken when they do not increase the loss, so a perfectly aligned pair
// stays put.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmreg/core.hpp"

namespace mmreg {

// warped(q) = img(q + u(q)), bilinear, reads clamped to the canvas.
// Output has the field's dimensions; works per channel.
inline RasterImage warp_image(const RasterImage& img, const DisplacementField& field) {
    field.validate();
    RasterImage out = RasterImage::zeros(field.width, field.height, img.channels);
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            const size_t i = static_cast<size_t>(y) * field.width + x;
            const double sx = x + field.dx[i];
            const double sy = y + field.dy[i];
            for (int c = 0; c < img.channels; ++c)
                out.data[i * img.channels + c] =
                    static_cast<float>(sample_bilinear(img, sx, sy, c, Oob::Clamp));
        }
    return out;
}

namespace detail {

// Warp plus interpolant derivative, kept in double end to end. The objective
// and its gradient both go through this; storing the warped values as float
// would staircase the loss as a function of the field and break the
// finite-difference relationship between the two.
struct WarpPlanesD {
    std::vector<double> val, gx, gy;
};

inline WarpPlanesD warp_with_gradient_d(const RasterImage& img, const DisplacementField& field) {
    if (img.channels != 1)
        throw std::invalid_argument("warp_image_with_gradient: single-channel image required");
    field.validate();
    WarpPlanesD out;
    const size_t n = field.dx.size();
    out.val.assign(n, 0.0);
    out.gx.assign(n, 0.0);
    out.gy.assign(n, 0.0);
    const int w = img.width, h = img.height;
    auto at = [&](int x, int y) {
        return static_cast<double>(
            img.data[static_cast<size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)]);
    };
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            const size_t i = static_cast<size_t>(y) * field.width + x;
            const double sx = x + static_cast<double>(field.dx[i]);
            const double sy = y + static_cast<double>(field.dy[i]);
            const double cx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            const double cy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            const int x0 = std::min(static_cast<int>(std::floor(cx)), w - 1);
            const int y0 = std::min(static_cast<int>(std::floor(cy)), h - 1);
            const double fx = cx - x0, fy = cy - y0;
            const double v00 = at(x0, y0), v10 = at(x0 + 1, y0);
            const double v01 = at(x0, y0 + 1), v11 = at(x0 + 1, y0 + 1);
            out.val[i] = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 +
                         fx * fy * v11;
            // clamped reads are flat outside the canvas: zero derivative there
            const bool flat_x = sx <= 0.0 || sx >= w - 1;
            const bool flat_y = sy <= 0.0 || sy >= h - 1;
            out.gx[i] = flat_x ? 0.0 : (1 - fy) * (v10 - v00) + fy * (v11 - v01);
            out.gy[i] = flat_y ? 0.0 : (1 - fx) * (v01 - v00) + fx * (v11 - v10);
        }
    return out;
}

inline std::vector<double> to_double(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace detail

struct WarpedWithGradient {
    RasterImage image;
    std::vector<float> gx, gy;  // d image(q) / d u_x(q), d image(q) / d u_y(q)
};

// Same as warp_image (single channel) but also returns the spatial derivative
// of the interpolant at every sample position. Outside the canvas the clamped
// read is flat, so the derivative is zero there.
inline WarpedWithGradient warp_image_with_gradient(const RasterImage& img,
                                                   const DisplacementField& field) {
    const detail::WarpPlanesD d = detail::warp_with_gradient_d(img, field);
    WarpedWithGradient out;
    out.image = RasterImage::zeros(field.width, field.height, 1);
    out.gx.resize(d.gx.size());
    out.gy.resize(d.gy.size());
    for (size_t i = 0; i < d.val.size(); ++i) {
        out.image.data[i] = static_cast<float>(d.val[i]);
        out.gx[i] = static_cast<float>(d.gx[i]);
        out.gy[i] = static_cast<float>(d.gy[i]);
    }
    return out;
}

struct LocalMiResult {
    double value = 0.0;
    std::vector<double> grad_a;  // d value / d a(pixel), same layout as a
};

namespace detail {

// Double-buffer core shared by the public entry point and the objective path.
inline double local_mi_core(const double* a, const double* b, int W, int H, int bins, int window,
                            int stride, std::vector<double>* grad_a) {
    if (bins < 2) throw std::invalid_argument("local_mutual_information: bins must be >= 2");
    if (window < 2) throw std::invalid_argument("local_mutual_information: window must be >= 2");
    if (stride < 1) throw std::invalid_argument("local_mutual_information: stride must be >= 1");

    const int win_w = std::min(window, W);
    const int win_h = std::min(window, H);
    auto window_starts = [&](int extent, int side) {
        std::vector<int> starts;
        for (int s = 0; s + side <= extent; s += stride) starts.push_back(s);
        if (starts.empty() || starts.back() != extent - side)
            starts.push_back(extent - side);  // tail window flush with the edge
        return starts;
    };
    const std::vector<int> xs = window_starts(W, win_w);
    const std::vector<int> ys = window_starts(H, win_h);
    const int nwin = static_cast<int>(xs.size() * ys.size());

    if (grad_a) grad_a->assign(static_cast<size_t>(W) * H, 0.0);

    const double scale = bins - 1.0;
    const double wgt = 1.0 / (static_cast<double>(win_w) * win_h);
    std::vector<double> joint(static_cast<size_t>(bins) * bins);
    std::vector<double> pa(bins), pb(bins), coef(static_cast<size_t>(bins) * bins);
    double value = 0.0;

    for (int wy : ys) {
        for (int wx : xs) {
            std::fill(joint.begin(), joint.end(), 0.0);
            for (int y = wy; y < wy + win_h; ++y)
                for (int x = wx; x < wx + win_w; ++x) {
                    const size_t i = static_cast<size_t>(y) * W + x;
                    const double za = a[i] * scale;
                    const double zb = b[i] * scale;
                    const int ka = std::min(static_cast<int>(za), bins - 2);
                    const int kb = std::min(static_cast<int>(zb), bins - 2);
                    const double fa = za - ka, fb = zb - kb;
                    joint[static_cast<size_t>(ka) * bins + kb] += wgt * (1 - fa) * (1 - fb);
                    joint[static_cast<size_t>(ka) * bins + kb + 1] += wgt * (1 - fa) * fb;
                    joint[static_cast<size_t>(ka + 1) * bins + kb] += wgt * fa * (1 - fb);
                    joint[static_cast<size_t>(ka + 1) * bins + kb + 1] += wgt * fa * fb;
                }
            std::fill(pa.begin(), pa.end(), 0.0);
            std::fill(pb.begin(), pb.end(), 0.0);
            for (int j = 0; j < bins; ++j)
                for (int k = 0; k < bins; ++k) {
                    pa[j] += joint[static_cast<size_t>(j) * bins + k];
                    pb[k] += joint[static_cast<size_t>(j) * bins + k];
                }
            double mi = 0.0;
            for (int j = 0; j < bins; ++j)
                for (int k = 0; k < bins; ++k) {
                    const double p = joint[static_cast<size_t>(j) * bins + k];
                    if (p > 0.0) {
                        const double c = std::log(p) - std::log(pa[j]) - std::log(pb[k]);
                        mi += p * c;
                        if (grad_a) coef[static_cast<size_t>(j) * bins + k] = c - 1.0;
                    } else if (grad_a) {
                        coef[static_cast<size_t>(j) * bins + k] = 0.0;  // empty bins stay out
                    }
                }
            value += mi;

            if (grad_a) {
                // d p_{j,k} / d a_i moves kernel mass between bins ka and ka+1
                const double gscale = scale * wgt / nwin;
                for (int y = wy; y < wy + win_h; ++y)
                    for (int x = wx; x < wx + win_w; ++x) {
                        const size_t i = static_cast<size_t>(y) * W + x;
                        const double za = a[i] * scale;
                        const double zb = b[i] * scale;
                        const int ka = std::min(static_cast<int>(za), bins - 2);
                        const int kb = std::min(static_cast<int>(zb), bins - 2);
                        const double fb = zb - kb;
                        const double d =
                            (1 - fb) * (coef[static_cast<size_t>(ka + 1) * bins + kb] -
                                        coef[static_cast<size_t>(ka) * bins + kb]) +
                            fb * (coef[static_cast<size_t>(ka + 1) * bins + kb + 1] -
                                  coef[static_cast<size_t>(ka) * bins + kb + 1]);
                        (*grad_a)[i] += d * gscale;
                    }
            }
        }
    }
    return value / nwin;
}

}  // namespace detail

// Mean mutual information over sliding windows of side `window` placed every
// `stride` pixels, plus a flush-to-edge tail window per axis. Intensities are
// spread over `bins` histogram bins with a triangular kernel at z=v*(bins-1);
// marginals come from the joint. Natural log. The gradient is the exact
// derivative of the computed value with respect to a's intensities.
inline LocalMiResult local_mutual_information(const RasterImage& a, const RasterImage& b,
                                              int bins, int window, int stride,
                                              bool with_gradient = true) {
    if (a.channels != 1 || b.channels != 1)
        throw std::invalid_argument("local_mutual_information: single-channel images required");
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("local_mutual_information: image dimensions differ");
    const std::vector<double> ad = detail::to_double(a.data);
    const std::vector<double> bd = detail::to_double(b.data);
    LocalMiResult out;
    out.value = detail::local_mi_core(ad.data(), bd.data(), a.width, a.height, bins, window,
                                      stride, with_gradient ? &out.grad_a : nullptr);
    return out;
}

// Mean squared forward difference of both field components. Right and bottom
// edges use one-sided zero differences. The accumulation order is part of the
// contract: per pixel, row-major, dx-x then dx-y then dy-x then dy-y.
inline double diffusive_regularization(const DisplacementField& f) {
    const int w = f.width, h = f.height;
    double acc = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            // differences taken in double: float-rounded differences would
            // staircase the penalty relative to its analytic gradient
            const double hx = x + 1 < w ? static_cast<double>(f.dx[i + 1]) - f.dx[i] : 0.0;
            const double hy = y + 1 < h ? static_cast<double>(f.dx[i + w]) - f.dx[i] : 0.0;
            const double gx = x + 1 < w ? static_cast<double>(f.dy[i + 1]) - f.dy[i] : 0.0;
            const double gy = y + 1 < h ? static_cast<double>(f.dy[i + w]) - f.dy[i] : 0.0;
            acc += hx * hx;
            acc += hy * hy;
            acc += gx * gx;
            acc += gy * gy;
        }
    return acc / (static_cast<double>(w) * h);
}

struct RegGradient {
    double value = 0.0;
    std::vector<double> grad_dx, grad_dy;
};

inline RegGradient diffusive_regularization_gradient(const DisplacementField& f) {
    RegGradient out;
    out.value = diffusive_regularization(f);
    const int w = f.width, h = f.height;
    out.grad_dx.assign(f.dx.size(), 0.0);
    out.grad_dy.assign(f.dy.size(), 0.0);
    const double norm = 2.0 / (static_cast<double>(w) * h);
    auto add = [&](std::vector<double>& g, const std::vector<float>& v) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const size_t i = static_cast<size_t>(y) * w + x;
                if (x + 1 < w) {
                    const double d = norm * (static_cast<double>(v[i + 1]) - v[i]);
                    g[i] -= d;
                    g[i + 1] += d;
                }
                if (y + 1 < h) {
                    const double d = norm * (static_cast<double>(v[i + w]) - v[i]);
                    g[i] -= d;
                    g[i + w] += d;
                }
            }
    };
    add(out.grad_dx, f.dx);
    add(out.grad_dy, f.dy);
    return out;
}

// Resample a field onto a larger grid and rescale the displacement magnitudes
// by the per-axis size ratio, so the field keeps pointing at the same content
// (displacements are in pixels of their own level).
inline DisplacementField upsample_field(const DisplacementField& f, int new_w, int new_h) {
    if (new_w < f.width || new_h < f.height)
        throw std::invalid_argument("upsample_field: downsampling request");
    DisplacementField out = DisplacementField::zeros(new_w, new_h);
    const double rx = static_cast<double>(new_w) / f.width;
    const double ry = static_cast<double>(new_h) / f.height;
    for (int y = 0; y < new_h; ++y)
        for (int x = 0; x < new_w; ++x) {
            const double sx = (x + 0.5) / rx - 0.5;
            const double sy = (y + 0.5) / ry - 0.5;
            const Point d = f.sample(sx, sy);
            const size_t i = static_cast<size_t>(y) * new_w + x;
            out.dx[i] = static_cast<float>(d.x * rx);
            out.dy[i] = static_cast<float>(d.y * ry);
        }
    return out;
}

// u(q) = T(q) - q on a w x h grid.
inline DisplacementField bake_affine_to_field(const AffineTransform2D& t, int w, int h) {
    DisplacementField f = DisplacementField::zeros(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Point p = apply_affine_to_point(t, {static_cast<double>(x), static_cast<double>(y)});
            const size_t i = static_cast<size_t>(y) * w + x;
            f.dx[i] = static_cast<float>(p.x - x);
            f.dy[i] = static_cast<float>(p.y - y);
        }
    return f;
}

struct ObjectiveBreakdown {
    double similarity = 0.0;  // local MI value, higher = more similar
    double regularity = 0.0;  // diffusive penalty, >= 0
    double total = 0.0;       // -similarity + theta * regularity
    int level = 0;
    int iteration = 0;
};

struct LossGradient {
    ObjectiveBreakdown objective;
    std::vector<double> grad_dx, grad_dy;  // d total / d field component
};

namespace detail {

inline int clamp_window(const LevelSettings& s, int w, int h) {
    return std::max(2, std::min({s.mi_window, w, h}));
}

inline ObjectiveBreakdown deformable_objective(const RasterImage& src, const RasterImage& tgt,
                                               const DisplacementField& u,
                                               const LevelSettings& s) {
    if (u.width != tgt.width || u.height != tgt.height)
        throw std::invalid_argument("deformable objective: field/target dims differ");
    ObjectiveBreakdown o;
    const WarpPlanesD warped = warp_with_gradient_d(src, u);
    const std::vector<double> tgt_d = to_double(tgt.data);
    const int win = clamp_window(s, u.width, u.height);
    o.similarity = local_mi_core(warped.val.data(), tgt_d.data(), u.width, u.height, s.mi_bins,
                                 win, std::max(1, s.mi_stride), nullptr);
    o.regularity = diffusive_regularization(u);
    o.total = -o.similarity + s.theta * o.regularity;
    return o;
}

}  // namespace detail

// Objective and its exact gradient with respect to the field, chaining the
// local-MI intensity gradient through the warp's spatial derivative and
// adding the weighted regularizer gradient.
inline LossGradient deformable_loss_gradient(const RasterImage& src, const RasterImage& tgt,
                                             const DisplacementField& u,
                                             const LevelSettings& s) {
    if (u.width != tgt.width || u.height != tgt.height)
        throw std::invalid_argument("deformable_loss_gradient: field/target dims differ");
    LossGradient out;
    const detail::WarpPlanesD warped = detail::warp_with_gradient_d(src, u);
    const std::vector<double> tgt_d = detail::to_double(tgt.data);
    const int win = detail::clamp_window(s, u.width, u.height);
    std::vector<double> mi_grad;
    const double mi = detail::local_mi_core(warped.val.data(), tgt_d.data(), u.width, u.height,
                                            s.mi_bins, win, std::max(1, s.mi_stride), &mi_grad);
    const RegGradient reg = diffusive_regularization_gradient(u);
    out.objective.similarity = mi;
    out.objective.regularity = reg.value;
    out.objective.total = -mi + s.theta * reg.value;
    const size_t n = u.dx.size();
    out.grad_dx.resize(n);
    out.grad_dy.resize(n);
    for (size_t i = 0; i < n; ++i) {
        out.grad_dx[i] = -mi_grad[i] * warped.gx[i] + s.theta * reg.grad_dx[i];
        out.grad_dy[i] = -mi_grad[i] * warped.gy[i] + s.theta * reg.grad_dy[i];
    }
    return out;
}

struct DeformableResult {
    DisplacementField field;  // target-grid total field, affine included
    std::vector<ObjectiveBreakdown> trace;  // per iteration, entry 0 per level = initial state
};

// Coarse-to-fine optimization of a deformable update on the target grid.
// `init` maps target coordinates into the source frame at these images'
// resolution. The source is resampled through it at every level, so the
// optimized field is the residual deformation on top of the affine and the
// diffusive penalty prices only that residual — a rotation recovered by the
// initial alignment is not roughness the optimizer should trade away. The
// returned field has the affine composed back in. Steps follow the Adam
// direction under a monotone line search: a proposal is kept only if it does
// not increase the loss; acceptance grows the step (capped at step_size),
// rejection halves it.
inline DeformableResult instance_optimize(const RasterImage& source, const RasterImage& target,
                                          const AffineTransform2D& init,
                                          const RegistrationConfig& cfg) {
    if (source.channels != 1 || target.channels != 1)
        throw std::invalid_argument("instance_optimize: single-channel images required");
    if (cfg.levels.empty()) throw std::invalid_argument("instance_optimize: no levels configured");
    cfg.validate();

    const bool identity_init = init.a11 == 1.0 && init.a12 == 0.0 && init.t1 == 0.0 &&
                               init.a21 == 0.0 && init.a22 == 1.0 && init.t2 == 0.0;

    DeformableResult result;
    const int N = static_cast<int>(cfg.levels.size());
    DisplacementField u;

    for (int li = 0; li < N; ++li) {
        const LevelSettings& s = cfg.levels[li];
        const double level_scale = std::ldexp(1.0, li - (N - 1));  // 2^-(N-1-li)
        const int tw = std::max(1, static_cast<int>(std::lround(target.width * level_scale)));
        const int th = std::max(1, static_cast<int>(std::lround(target.height * level_scale)));
        const int sw = std::max(1, static_cast<int>(std::lround(source.width * level_scale)));
        const int sh = std::max(1, static_cast<int>(std::lround(source.height * level_scale)));
        const RasterImage tgt_l = li == N - 1 ? target : resize_bilinear(target, tw, th);
        const RasterImage src_l = [&] {
            if (identity_init) return li == N - 1 ? source : resize_bilinear(source, sw, sh);
            // pre-align in one resample straight from the full-resolution source
            const double st = static_cast<double>(tw) / target.width;
            const AffineTransform2D t_full = compose_affine(init, full_from_level(st));
            return warp_image(source, bake_affine_to_field(t_full, tw, th));
        }();

        u = li == 0 ? DisplacementField::zeros(tw, th) : upsample_field(u, tw, th);

        const size_t n = u.dx.size();
        ObjectiveBreakdown current = detail::deformable_objective(src_l, tgt_l, u, s);
        if (!std::isfinite(current.total))
            throw NumericalError("instance_optimize: non-finite objective at level " +
                                 std::to_string(li) + " iteration 0");
        current.level = li;
        current.iteration = 0;
        result.trace.push_back(current);

        std::vector<double> m(2 * n, 0.0), v(2 * n, 0.0);
        double alpha = s.step_size;
        DisplacementField trial = u;

        for (int it = 1; it <= s.iterations; ++it) {
            const LossGradient lg = deformable_loss_gradient(src_l, tgt_l, u, s);
            const double bc1 = 1.0 - std::pow(0.9, it);
            const double bc2 = 1.0 - std::pow(0.999, it);
            for (size_t i = 0; i < n; ++i) {
                const double gx = lg.grad_dx[i], gy = lg.grad_dy[i];
                m[i] = 0.9 * m[i] + 0.1 * gx;
                v[i] = 0.999 * v[i] + 0.001 * gx * gx;
                m[n + i] = 0.9 * m[n + i] + 0.1 * gy;
                v[n + i] = 0.999 * v[n + i] + 0.001 * gy * gy;
                const double dx = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
                const double dy = (m[n + i] / bc1) / (std::sqrt(v[n + i] / bc2) + 1e-8);
                trial.dx[i] = static_cast<float>(u.dx[i] - alpha * dx);
                trial.dy[i] = static_cast<float>(u.dy[i] - alpha * dy);
            }
            ObjectiveBreakdown trial_obj = detail::deformable_objective(src_l, tgt_l, trial, s);
            if (!std::isfinite(trial_obj.total) || !std::isfinite(current.total)) {
                throw NumericalError("instance_optimize: non-finite objective at level " +
                                     std::to_string(li) + " iteration " + std::to_string(it));
            }
            if (trial_obj.total <= current.total) {
                std::swap(u.dx, trial.dx);
                std::swap(u.dy, trial.dy);
                current.similarity = trial_obj.similarity;
                current.regularity = trial_obj.regularity;
                current.total = trial_obj.total;
                alpha = std::min(alpha * 1.25, s.step_size);
            } else {
                alpha *= 0.5;
            }
            current.level = li;
            current.iteration = it;
            result.trace.push_back(current);
        }
    }
    if (identity_init) {
        result.field = std::move(u);
    } else {
        // compose the affine with the optimized residual: p + u_total(p) must
        // land where the pre-aligned source was read, init(p + u(p))
        DisplacementField total = DisplacementField::zeros(u.width, u.height);
        for (int y = 0; y < u.height; ++y)
            for (int x = 0; x < u.width; ++x) {
                const size_t i = static_cast<size_t>(y) * u.width + x;
                const Point q{x + static_cast<double>(u.dx[i]),
                              y + static_cast<double>(u.dy[i])};
                const Point r = apply_affine_to_point(init, q);
                total.dx[i] = static_cast<float>(r.x - x);
                total.dy[i] = static_cast<float>(r.y - y);
            }
        result.field = std::move(total);
    }
    return result;
}

// Lift a working-resolution field to full resolution: the output grid covers
// the full target image and displacements land in the full source frame.
// src_scale/tgt_scale are the working-level scales of the two images.
inline DisplacementField lift_field_to_full(const DisplacementField& work, int full_w,
                                            int full_h, double src_scale, double tgt_scale) {
    if (full_w < 1 || full_h < 1)
        throw std::invalid_argument("lift_field_to_full: bad dimensions");
    DisplacementField out = DisplacementField::zeros(full_w, full_h);
    const AffineTransform2D to_work = level_from_full(tgt_scale);
    for (int y = 0; y < full_h; ++y)
        for (int x = 0; x < full_w; ++x) {
            const Point qw = apply_affine_to_point(
                to_work, {static_cast<double>(x), static_cast<double>(y)});
            const Point d = work.sample(qw.x, qw.y);
            // source working coordinate, then back to the full source frame
            const double px = (qw.x + d.x + 0.5) / src_scale - 0.5;
            const double py = (qw.y + d.y + 0.5) / src_scale - 0.5;
            const size_t i = static_cast<size_t>(y) * full_w + x;
            out.dx[i] = static_cast<float>(px - x);
            out.dy[i] = static_cast<float>(py - y);
        }
    return out;
}

}  // namespace mmreg
