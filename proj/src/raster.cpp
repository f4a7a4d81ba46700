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
#include "rigdiff/raster.hpp"

#include "rigdiff/error.hpp"
#include "rigdiff/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace rigdiff {

namespace {

inline double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

struct TriangleSetup
{
    bool usable = false;
    int ymin = 0, ymax = -1;
    int xmin = 0, xmax = -1;
};

} // namespace

Mat4 Camera::default_pose()
{
    Mat4 m = Mat4::identity();
    m(1, 1) = -1.0;
    m(2, 2) = -1.0;
    m(2, 3) = 8.0;
    return m;
}

Camera Camera::for_size(int width, int height)
{
    Camera c;
    c.width = width;
    c.height = height;
    c.focal = 2.4 * height;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    return c;
}

void Camera::validate() const
{
    if (!(std::isfinite(focal) && focal > 0.0)) {
        throw ValidationError("camera: focal must be positive");
    }
    if (!(std::isfinite(near) && std::isfinite(far) && near > 0.0 && near < far)) {
        throw ValidationError("camera: need 0 < near < far");
    }
    if (width < 8 || height < 8) {
        throw ValidationError("camera: width and height must be at least 8");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy)) {
        throw ValidationError("camera: principal point must be finite");
    }
    for (double v : world_to_camera.a) {
        if (!std::isfinite(v)) {
            throw ValidationError("camera: pose must be finite");
        }
    }
}

void ShadingParams::validate() const
{
    if (!is_finite(light) || norm(light) < 1e-12) {
        throw ValidationError("shading: light direction must be finite and nonzero");
    }
    if (!(intensity >= 0.0) || !(ambient >= 0.0)) {
        throw ValidationError("shading: intensities must be nonnegative");
    }
    if (!(background >= 0.0 && background <= 1.0)) {
        throw ValidationError("shading: background must lie in [0, 1]");
    }
}

std::vector<ScreenVertex> project(const Camera& camera, std::span<const Vec3> vertices)
{
    std::vector<ScreenVertex> out(vertices.size());
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        const Vec3 pc = apply_affine(camera.world_to_camera, vertices[i]);
        ScreenVertex& s = out[i];
        s.depth = pc.z;
        s.visible = pc.z >= camera.near && pc.z <= camera.far;
        if (s.visible) {
            s.u = camera.focal * pc.x / pc.z + camera.cx;
            s.v = camera.focal * pc.y / pc.z + camera.cy;
        }
    }
    return out;
}

std::size_t FragmentBuffer::covered_count() const
{
    return static_cast<std::size_t>(
        std::count_if(pixels.begin(), pixels.end(), [](const Fragment& f) { return f.triangle >= 0; }));
}

FragmentBuffer rasterize(std::span<const std::array<int, 3>> triangles, std::span<const ScreenVertex> screen,
                         int width, int height)
{
    FragmentBuffer fb;
    fb.width = width;
    fb.height = height;
    fb.pixels.assign(static_cast<std::size_t>(width) * height, Fragment{});

    std::vector<TriangleSetup> setup(triangles.size());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        const auto& tri = triangles[t];
        const ScreenVertex& a = screen[tri[0]];
        const ScreenVertex& b = screen[tri[1]];
        const ScreenVertex& c = screen[tri[2]];
        if (!a.visible || !b.visible || !c.visible) {
            continue;
        }
        const double area = cross2(b.u - a.u, b.v - a.v, c.u - a.u, c.v - a.v);
        if (area == 0.0 || !std::isfinite(area)) {
            continue;
        }
        TriangleSetup& s = setup[t];
        // Pixel centers at k + 0.5 inside [lo, hi] satisfy ceil(lo - 0.5) <= k <= floor(hi - 0.5).
        const double umin = std::min({a.u, b.u, c.u});
        const double umax = std::max({a.u, b.u, c.u});
        const double vmin = std::min({a.v, b.v, c.v});
        const double vmax = std::max({a.v, b.v, c.v});
        s.xmin = std::max(0, static_cast<int>(std::ceil(umin - 0.5)));
        s.xmax = std::min(width - 1, static_cast<int>(std::floor(umax - 0.5)));
        s.ymin = std::max(0, static_cast<int>(std::ceil(vmin - 0.5)));
        s.ymax = std::min(height - 1, static_cast<int>(std::floor(vmax - 0.5)));
        s.usable = s.xmin <= s.xmax && s.ymin <= s.ymax;
    }

    // Each row is owned by exactly one worker; triangles are visited in
    // index order so the strict depth test keeps the lowest index on ties.
    parallel_for(static_cast<std::size_t>(height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        const double py = y + 0.5;
        for (std::size_t t = 0; t < triangles.size(); ++t) {
            const TriangleSetup& s = setup[t];
            if (!s.usable || y < s.ymin || y > s.ymax) {
                continue;
            }
            const auto& tri = triangles[t];
            const ScreenVertex& a = screen[tri[0]];
            const ScreenVertex& b = screen[tri[1]];
            const ScreenVertex& c = screen[tri[2]];
            const double area = cross2(b.u - a.u, b.v - a.v, c.u - a.u, c.v - a.v);
            for (int x = s.xmin; x <= s.xmax; ++x) {
                const double px = x + 0.5;
                const double l0 = cross2(b.u - px, b.v - py, c.u - px, c.v - py) / area;
                const double l1 = cross2(c.u - px, c.v - py, a.u - px, a.v - py) / area;
                const double l2 = cross2(a.u - px, a.v - py, b.u - px, b.v - py) / area;
                if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) {
                    continue;
                }
                const double q0 = l0 / a.depth;
                const double q1 = l1 / b.depth;
                const double q2 = l2 / c.depth;
                const double q = q0 + q1 + q2;
                const double depth = 1.0 / q;
                Fragment& f = fb.pixels[static_cast<std::size_t>(y) * width + x];
                if (f.triangle < 0 || depth < f.depth) {
                    f.triangle = static_cast<int>(t);
                    f.bary = {q0 / q, q1 / q, q2 / q};
                    f.depth = depth;
                }
            }
        }
    });
    return fb;
}

std::vector<Vec3> vertex_normals(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> triangles,
                                 std::vector<Vec3>* sums)
{
    std::vector<Vec3> acc(vertices.size());
    for (const auto& tri : triangles) {
        const Vec3 n = cross(vertices[tri[1]] - vertices[tri[0]], vertices[tri[2]] - vertices[tri[0]]);
        acc[tri[0]] += n;
        acc[tri[1]] += n;
        acc[tri[2]] += n;
    }
    std::vector<Vec3> out(vertices.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double len = norm(acc[i]);
        out[i] = len > 0.0 ? acc[i] * (1.0 / len) : Vec3{0.0, 0.0, 1.0};
    }
    if (sums != nullptr) {
        *sums = std::move(acc);
    }
    return out;
}

Image shade(const FragmentBuffer& fragments, std::span<const std::array<int, 3>> triangles,
            std::span<const Vec3> normals, std::span<const Vec3> albedo, const ShadingParams& shading)
{
    Image img = Image::filled(fragments.width, fragments.height, shading.background);
    const Vec3 l = shading.light * (1.0 / norm(shading.light));
    parallel_for(static_cast<std::size_t>(fragments.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < fragments.width; ++x) {
            const Fragment& f = fragments.at(x, y);
            if (f.triangle < 0) {
                continue;
            }
            const auto& tri = triangles[f.triangle];
            Vec3 alb{};
            Vec3 n{};
            for (int k = 0; k < 3; ++k) {
                alb += albedo[tri[k]] * f.bary[k];
                n += normals[tri[k]] * f.bary[k];
            }
            const double len = norm(n);
            const double d = len > 0.0 ? dot(n, l) / len : 0.0;
            const double s = shading.ambient + shading.intensity * std::max(0.0, d);
            for (int c = 0; c < 3; ++c) {
                img.at(x, y, c) = std::clamp(alb[c] * s, 0.0, 1.0);
            }
        }
    });
    return img;
}

PartMasks part_masks(const FragmentBuffer& fragments, std::span<const std::array<int, 3>> triangles,
                     std::span<const Part> parts)
{
    PartMasks m = PartMasks::zeros(fragments.width, fragments.height);
    for (int y = 0; y < fragments.height; ++y) {
        for (int x = 0; x < fragments.width; ++x) {
            const Fragment& f = fragments.at(x, y);
            if (f.triangle < 0) {
                continue;
            }
            const auto& tri = triangles[f.triangle];
            for (int k = 0; k < 3; ++k) {
                const auto p = static_cast<std::size_t>(parts[tri[k]]);
                if (p < part_count) {
                    m.at(p, x, y) += f.bary[k];
                }
            }
        }
    }
    return m;
}

RenderResult render(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                    const ShadingParams& shading)
{
    camera.validate();
    shading.validate();
    auto cache = std::make_shared<RenderCache>();
    cache->params = params;
    cache->rig = evaluate_rig(rig, params);
    cache->screen = project(camera, cache->rig.posed);
    cache->normals = vertex_normals(cache->rig.posed, rig.triangles, &cache->normal_sums);

    RenderResult r;
    r.fragments = rasterize(rig.triangles, cache->screen, camera.width, camera.height);
    r.image = shade(r.fragments, rig.triangles, cache->normals, rig.albedo, shading);
    r.masks = part_masks(r.fragments, rig.triangles, rig.parts);
    r.landmarks.reserve(rig.landmarks.size());
    for (int idx : rig.landmarks) {
        r.landmarks.push_back({cache->screen[idx].u, cache->screen[idx].v});
    }
    r.cache = std::move(cache);
    return r;
}

std::vector<std::array<double, 2>> project_landmarks(const FaceRig& rig, const FacialParams& params,
                                                     const Camera& camera)
{
    const RigForward fwd = evaluate_rig(rig, params);
    std::vector<Vec3> pts;
    pts.reserve(rig.landmarks.size());
    for (int idx : rig.landmarks) {
        pts.push_back(fwd.posed[idx]);
    }
    const auto screen = project(camera, pts);
    std::vector<std::array<double, 2>> out;
    out.reserve(screen.size());
    for (const auto& s : screen) {
        out.push_back({s.u, s.v});
    }
    return out;
}

} // namespace rigdiff
