/*
 * rigdiff - differentiable bone-driven face rig rendering and fitting.
 *
 * Copyright 2026 The rigdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "rigdiff/grad.hpp"

#include "rigdiff/error.hpp"
#include "rigdiff/parallel.hpp"
#include "rigdiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace rigdiff {

namespace {

inline double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// Adjoint of one pixel with respect to its triangle's screen coordinates,
// camera depths and vertex normals.
struct PixelAdjoint
{
    int triangle = -1;
    std::array<double, 3> du{};
    std::array<double, 3> dv{};
    std::array<double, 3> dz{};
    std::array<Vec3, 3> dn{};
};

// d(u, v, depth) -> d(world point) through the pinhole projection.
Vec3 projection_adjoint(const Camera& camera, const Vec3& p, double du, double dv, double dz)
{
    const Vec3 pc = apply_affine(camera.world_to_camera, p);
    const double iz = 1.0 / pc.z;
    const double f = camera.focal;
    const Vec3 dpc{du * f * iz, dv * f * iz, dz - (du * f * pc.x + dv * f * pc.y) * iz * iz};
    return apply_linear_transposed(camera.world_to_camera, dpc);
}

// Reverse of vertex_normals: d(unit normals) -> d(vertices).
void normals_adjoint(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> triangles,
                     std::span<const Vec3> sums, std::span<const Vec3> d_normals, std::vector<Vec3>& d_vertices)
{
    std::vector<Vec3> d_sums(sums.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
        const double len = norm(sums[i]);
        if (len == 0.0) {
            continue;
        }
        const Vec3 n = sums[i] * (1.0 / len);
        d_sums[i] = (d_normals[i] - n * dot(n, d_normals[i])) * (1.0 / len);
    }
    for (const auto& tri : triangles) {
        const Vec3 df = d_sums[tri[0]] + d_sums[tri[1]] + d_sums[tri[2]];
        if (df.x == 0.0 && df.y == 0.0 && df.z == 0.0) {
            continue;
        }
        const Vec3 e1 = vertices[tri[1]] - vertices[tri[0]];
        const Vec3 e2 = vertices[tri[2]] - vertices[tri[0]];
        const Vec3 de1 = cross(e2, df);
        const Vec3 de2 = cross(df, e1);
        d_vertices[tri[1]] += de1;
        d_vertices[tri[2]] += de2;
        d_vertices[tri[0]] -= de1 + de2;
    }
}

void require_cache(const RenderResult& forward, const FacialParams& params, const Camera& camera)
{
    if (!forward.cache) {
        throw ContractViolation("vjp_render: forward render cache missing");
    }
    if (!(forward.cache->params == params)) {
        throw ContractViolation("vjp_render: forward cache was produced for different parameters");
    }
    if (forward.fragments.width != camera.width || forward.fragments.height != camera.height) {
        throw ContractViolation("vjp_render: forward cache was produced for a different camera");
    }
}

} // namespace

ParamGradient vjp_render(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                         const ShadingParams& shading, const RenderResult& forward, const RenderAdjoint& seed)
{
    require_cache(forward, params, camera);
    const RenderCache& cache = *forward.cache;
    const int w = camera.width;
    const int h = camera.height;
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    if (!seed.d_image.empty() && seed.d_image.size() != npix * 3) {
        throw ValidationError("vjp_render: image adjoint has the wrong size");
    }
    if (!seed.d_masks.empty() && seed.d_masks.size() != npix * part_count) {
        throw ValidationError("vjp_render: mask adjoint has the wrong size");
    }
    if (!seed.d_landmarks.empty() && seed.d_landmarks.size() != rig.landmarks.size()) {
        throw ValidationError("vjp_render: landmark adjoint has the wrong size");
    }

    const Vec3 light = shading.light * (1.0 / norm(shading.light));
    std::vector<PixelAdjoint> pixels(npix);

    parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < w; ++x) {
            const std::size_t pi = static_cast<std::size_t>(y) * w + x;
            const Fragment& f = forward.fragments.pixels[pi];
            if (f.triangle < 0) {
                continue;
            }
            const auto& tri = rig.triangles[f.triangle];
            std::array<double, 3> db{};

            if (!seed.d_image.empty()) {
                const double* g = &seed.d_image[pi * 3];
                if (g[0] != 0.0 || g[1] != 0.0 || g[2] != 0.0) {
                    Vec3 alb{};
                    Vec3 n{};
                    for (int k = 0; k < 3; ++k) {
                        alb += rig.albedo[tri[k]] * f.bary[k];
                        n += cache.normals[tri[k]] * f.bary[k];
                    }
                    const double len = norm(n);
                    const double d = len > 0.0 ? dot(n, light) / len : 0.0;
                    const double s = shading.ambient + shading.intensity * std::max(0.0, d);
                    Vec3 d_alb{};
                    double ds = 0.0;
                    for (int c = 0; c < 3; ++c) {
                        const double raw = alb[c] * s;
                        if (raw < 0.0 || raw > 1.0) {
                            continue;
                        }
                        d_alb[c] = g[c] * s;
                        ds += g[c] * alb[c];
                    }
                    Vec3 dn{};
                    if (d > 0.0 && len > 0.0) {
                        const Vec3 nh = n * (1.0 / len);
                        const Vec3 dnh = light * (shading.intensity * ds);
                        dn = (dnh - nh * dot(nh, dnh)) * (1.0 / len);
                    }
                    PixelAdjoint& pa = pixels[pi];
                    for (int k = 0; k < 3; ++k) {
                        db[k] += dot(d_alb, rig.albedo[tri[k]]) + dot(dn, cache.normals[tri[k]]);
                        pa.dn[k] = dn * f.bary[k];
                    }
                }
            }
            if (!seed.d_masks.empty()) {
                for (int k = 0; k < 3; ++k) {
                    const auto p = static_cast<std::size_t>(rig.parts[tri[k]]);
                    if (p < part_count) {
                        db[k] += seed.d_masks[p * npix + pi];
                    }
                }
            }
            if (db[0] == 0.0 && db[1] == 0.0 && db[2] == 0.0) {
                continue;
            }

            // b_k = (l_k / z_k) / sum_j (l_j / z_j), l_k = E_k / A.
            const ScreenVertex* s[3] = {&cache.screen[tri[0]], &cache.screen[tri[1]], &cache.screen[tri[2]]};
            const double px = x + 0.5;
            const double py = y + 0.5;
            std::array<double, 3> e{};
            for (int k = 0; k < 3; ++k) {
                const ScreenVertex& a = *s[(k + 1) % 3];
                const ScreenVertex& b = *s[(k + 2) % 3];
                e[k] = cross2(a.u - px, a.v - py, b.u - px, b.v - py);
            }
            const double area = cross2(s[1]->u - s[0]->u, s[1]->v - s[0]->v, s[2]->u - s[0]->u, s[2]->v - s[0]->v);
            std::array<double, 3> l{};
            std::array<double, 3> q{};
            double qs = 0.0;
            for (int k = 0; k < 3; ++k) {
                l[k] = e[k] / area;
                q[k] = l[k] / s[k]->depth;
                qs += q[k];
            }
            double bdb = 0.0;
            for (int k = 0; k < 3; ++k) {
                bdb += (q[k] / qs) * db[k];
            }
            PixelAdjoint& pa = pixels[pi];
            pa.triangle = f.triangle;
            std::array<double, 3> dl{};
            for (int k = 0; k < 3; ++k) {
                const double dq = (db[k] - bdb) / qs;
                dl[k] = dq / s[k]->depth;
                pa.dz[k] = -dq * q[k] / s[k]->depth;
            }
            double d_area = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double de = dl[k] / area;
                d_area -= dl[k] * e[k] / (area * area);
                const int ia = (k + 1) % 3;
                const int ib = (k + 2) % 3;
                const double ax = s[ia]->u - px, ay = s[ia]->v - py;
                const double bx = s[ib]->u - px, by = s[ib]->v - py;
                pa.du[ia] += de * by;
                pa.dv[ia] -= de * bx;
                pa.du[ib] -= de * ay;
                pa.dv[ib] += de * ax;
            }
            const double e1x = s[1]->u - s[0]->u, e1y = s[1]->v - s[0]->v;
            const double e2x = s[2]->u - s[0]->u, e2y = s[2]->v - s[0]->v;
            pa.du[1] += d_area * e2y;
            pa.dv[1] -= d_area * e2x;
            pa.du[2] -= d_area * e1y;
            pa.dv[2] += d_area * e1x;
            pa.du[0] -= d_area * (e2y - e1y);
            pa.dv[0] -= d_area * (e1x - e2x);
        }
    });

    // Scatter in pixel order so the sums do not depend on the worker count.
    const std::size_t nv = rig.vertices.size();
    std::vector<double> d_u(nv, 0.0), d_v(nv, 0.0), d_z(nv, 0.0);
    std::vector<Vec3> d_normals(nv);
    bool any_normal = false;
    for (std::size_t pi = 0; pi < npix; ++pi) {
        const Fragment& f = forward.fragments.pixels[pi];
        if (f.triangle < 0) {
            continue;
        }
        const PixelAdjoint& pa = pixels[pi];
        const auto& tri = rig.triangles[f.triangle];
        for (int k = 0; k < 3; ++k) {
            if (pa.triangle >= 0) {
                d_u[tri[k]] += pa.du[k];
                d_v[tri[k]] += pa.dv[k];
                d_z[tri[k]] += pa.dz[k];
            }
            if (pa.dn[k].x != 0.0 || pa.dn[k].y != 0.0 || pa.dn[k].z != 0.0) {
                d_normals[tri[k]] += pa.dn[k];
                any_normal = true;
            }
        }
    }
    if (!seed.d_landmarks.empty()) {
        for (std::size_t i = 0; i < rig.landmarks.size(); ++i) {
            d_u[rig.landmarks[i]] += seed.d_landmarks[i][0];
            d_v[rig.landmarks[i]] += seed.d_landmarks[i][1];
        }
    }

    std::vector<Vec3> d_posed(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        if (d_u[i] != 0.0 || d_v[i] != 0.0 || d_z[i] != 0.0) {
            d_posed[i] = projection_adjoint(camera, cache.rig.posed[i], d_u[i], d_v[i], d_z[i]);
        }
    }
    if (any_normal) {
        normals_adjoint(cache.rig.posed, rig.triangles, cache.normal_sums, d_normals, d_posed);
    }

    ParamGradient grad = ParamGradient::zeros(params.idt.size(), params.exp.size());
    rig_vjp(rig, params, cache.rig, d_posed, grad);
    return grad;
}

ParamGradient vjp_render(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                         const ShadingParams& shading, const RenderResult& forward, const Image& seed)
{
    if (seed.width != camera.width || seed.height != camera.height) {
        throw ValidationError("vjp_render: seed image size does not match the camera");
    }
    RenderAdjoint adj;
    adj.d_image = seed.data;
    return vjp_render(rig, params, camera, shading, forward, adj);
}

ParamGradient vjp_landmarks(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                            const std::vector<std::array<double, 2>>& seed)
{
    if (seed.size() != rig.landmarks.size()) {
        throw ValidationError("vjp_landmarks: seed must have one entry per landmark");
    }
    const RigForward fwd = evaluate_rig(rig, params);
    std::vector<Vec3> d_posed(rig.vertices.size());
    for (std::size_t i = 0; i < seed.size(); ++i) {
        const int v = rig.landmarks[i];
        d_posed[v] += projection_adjoint(camera, fwd.posed[v], seed[i][0], seed[i][1], 0.0);
    }
    ParamGradient grad = ParamGradient::zeros(params.idt.size(), params.exp.size());
    rig_vjp(rig, params, fwd, d_posed, grad);
    return grad;
}

std::size_t FdReport::count(FdStatus s) const
{
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [s](const FdRow& r) { return r.status == s; }));
}

double FdReport::pass_rate() const
{
    const std::size_t p = count(FdStatus::pass);
    const std::size_t f = count(FdStatus::fail);
    return p + f == 0 ? 1.0 : static_cast<double>(p) / static_cast<double>(p + f);
}

namespace {
const char* status_name(FdStatus s)
{
    switch (s) {
    case FdStatus::pass:
        return "pass";
    case FdStatus::fail:
        return "FAIL";
    case FdStatus::skipped:
        return "skipped";
    case FdStatus::unstable:
        return "unstable";
    }
    return "?";
}
} // namespace

std::string FdReport::table() const
{
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-12s %16s %16s %12s  %s\n", "coordinate", "analytic", "numeric", "rel.err",
                  "status");
    out += line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-12s %16.8e %16.8e %12.3e  %s\n", r.name.c_str(), r.analytic, r.numeric,
                      r.rel_error, status_name(r.status));
        out += line;
    }
    std::snprintf(line, sizeof(line), "passed %zu, failed %zu, skipped %zu, unstable %zu, pass rate %.4f\n",
                  count(FdStatus::pass), count(FdStatus::fail), count(FdStatus::skipped), count(FdStatus::unstable),
                  pass_rate());
    out += line;
    return out;
}

Json FdReport::to_json() const
{
    Json j;
    j["h"] = options.h;
    j["tolerance"] = options.tolerance;
    j["grad_floor"] = options.grad_floor;
    j["passed"] = count(FdStatus::pass);
    j["failed"] = count(FdStatus::fail);
    j["skipped"] = count(FdStatus::skipped);
    j["unstable"] = count(FdStatus::unstable);
    j["pass_rate"] = pass_rate();
    Json rj = Json::array();
    for (const auto& r : rows) {
        rj.push_back({{"index", r.index},
                      {"name", r.name},
                      {"analytic", r.analytic},
                      {"numeric", r.numeric},
                      {"rel_error", r.rel_error},
                      {"status", status_name(r.status)}});
    }
    j["rows"] = std::move(rj);
    return j;
}

FdReport finite_diff_check(const ScalarFn& fn, const std::vector<double>& point, const std::vector<double>& analytic,
                           const FdOptions& options, const StabilityFn& stable, const std::vector<std::string>& names)
{
    if (!(options.h > 0.0)) {
        throw ValidationError("finite_diff_check: h must be positive");
    }
    if (analytic.size() != point.size()) {
        throw ValidationError("finite_diff_check: analytic gradient size mismatch");
    }
    FdReport report;
    report.options = options;
    for (std::size_t i = 0; i < point.size(); ++i) {
        FdRow row;
        row.index = i;
        row.name = i < names.size() ? names[i] : "x[" + std::to_string(i) + "]";
        row.analytic = analytic[i];
        std::vector<double> plus = point;
        std::vector<double> minus = point;
        plus[i] += options.h;
        minus[i] -= options.h;
        row.numeric = (fn(plus) - fn(minus)) / (2.0 * options.h);
        const double scale = std::max(std::abs(row.analytic), std::abs(row.numeric));
        row.rel_error = scale > 0.0 ? std::abs(row.analytic - row.numeric) / scale : 0.0;
        if (stable && !stable(plus, minus)) {
            row.status = FdStatus::unstable;
        } else if (std::abs(row.analytic) < options.grad_floor && std::abs(row.numeric) < options.grad_floor) {
            row.status = FdStatus::skipped;
        } else {
            row.status = row.rel_error <= options.tolerance ? FdStatus::pass : FdStatus::fail;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::vector<std::string> param_names(std::size_t n_idt, std::size_t n_exp)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n_idt; ++i) {
        names.push_back("idt[" + std::to_string(i) + "]");
    }
    for (std::size_t i = 0; i < n_exp; ++i) {
        names.push_back("exp[" + std::to_string(i) + "]");
    }
    for (std::size_t i = 0; i < pose_dim; ++i) {
        names.push_back("pose[" + std::to_string(i) + "]");
    }
    return names;
}

Json GradcheckReport::to_json() const
{
    Json j;
    j["render"] = render.to_json();
    j["landmarks"] = landmarks.to_json();
    return j;
}

GradcheckReport gradcheck(const FaceRig& rig, const Camera& camera, const ShadingParams& shading,
                          std::uint64_t seed, const GradcheckOptions& options)
{
    Rng rng(seed);
    FacialParams p = rig.neutral_params();
    for (double& v : p.idt) {
        v = rng.uniform(0.2, 0.8);
    }
    for (double& v : p.exp) {
        v = rng.uniform(0.0, 0.4);
    }
    for (double& v : p.pose) {
        v = rng.uniform(-0.1, 0.1);
    }
    const auto names = param_names(p.idt.size(), p.exp.size());

    const RenderResult base = render(rig, p, camera, shading);
    Image pixel_seed = Image::filled(camera.width, camera.height, 0.0);
    for (double& v : pixel_seed.data) {
        v = rng.normal();
    }
    std::vector<std::array<double, 2>> lm_seed(base.landmarks.size());
    for (auto& q : lm_seed) {
        q = {rng.normal(), rng.normal()};
    }

    auto at = [&](const std::vector<double>& x) {
        FacialParams q = p;
        q.assign(x);
        return q;
    };
    auto pixel_loss = [&](const std::vector<double>& x) {
        const Image img = render(rig, at(x), camera, shading).image;
        double s = 0.0;
        for (std::size_t i = 0; i < img.data.size(); ++i) {
            s += pixel_seed.data[i] * img.data[i];
        }
        return s;
    };
    auto same_coverage = [&](const std::vector<double>& a, const std::vector<double>& b) {
        const FragmentBuffer fa = render(rig, at(a), camera, shading).fragments;
        const FragmentBuffer fb = render(rig, at(b), camera, shading).fragments;
        for (std::size_t i = 0; i < fa.pixels.size(); ++i) {
            const int t = base.fragments.pixels[i].triangle;
            if (fa.pixels[i].triangle != t || fb.pixels[i].triangle != t) {
                return false;
            }
        }
        return true;
    };
    auto landmark_loss = [&](const std::vector<double>& x) {
        const auto pts = project_landmarks(rig, at(x), camera);
        double s = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            s += lm_seed[i][0] * pts[i][0] + lm_seed[i][1] * pts[i][1];
        }
        return s;
    };

    GradcheckReport rep;
    const ParamGradient g = vjp_render(rig, p, camera, shading, base, pixel_seed);
    rep.render = finite_diff_check(pixel_loss, p.flatten(), g.flatten(), options.render, same_coverage, names);
    const ParamGradient gl = vjp_landmarks(rig, p, camera, lm_seed);
    rep.landmarks = finite_diff_check(landmark_loss, p.flatten(), gl.flatten(), options.landmarks, {}, names);
    return rep;
}

} // namespace rigdiff
