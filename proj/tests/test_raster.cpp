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
#include "support.hpp"

#include "rigdiff/parallel.hpp"
#include "rigdiff/raster.hpp"
#include "rigdiff/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace rigdiff;
using rigdiff::test::default_rig;

namespace {

Camera axis_camera(double focal = 100.0)
{
    Camera c = Camera::for_size(64, 48);
    c.focal = focal;
    c.world_to_camera = Mat4::identity();
    return c;
}

ScreenVertex sv(double u, double v, double depth = 5.0)
{
    return {u, v, depth, true};
}

/// Strict sign test at the pixel center; the triangles used avoid edge ties.
bool inside(const ScreenVertex& a, const ScreenVertex& b, const ScreenVertex& c, double px, double py)
{
    auto edge = [](const ScreenVertex& p, const ScreenVertex& q, double x, double y) {
        return (q.u - p.u) * (y - p.v) - (q.v - p.v) * (x - p.u);
    };
    const double e0 = edge(a, b, px, py), e1 = edge(b, c, px, py), e2 = edge(c, a, px, py);
    return (e0 > 0 && e1 > 0 && e2 > 0) || (e0 < 0 && e1 < 0 && e2 < 0);
}

/// Flat triangle in the z = 0 plane viewed head-on by a camera at z = -5.
struct FlatScene
{
    std::vector<Vec3> vertices{{-1.0, -1.0, 0.0}, {1.2, -0.9, 0.0}, {-0.1, 1.1, 0.0}};
    std::vector<std::array<int, 3>> triangles{{0, 1, 2}};
    Camera camera;
    FragmentBuffer fragments;
    std::vector<Vec3> normals;

    FlatScene()
    {
        camera = Camera::for_size(32, 32);
        camera.focal = 40.0;
        camera.world_to_camera = Mat4::identity();
        camera.world_to_camera(2, 3) = 5.0;
        fragments = rasterize(triangles, project(camera, vertices), 32, 32);
        normals = vertex_normals(vertices, triangles);
    }
};

} // namespace

TEST(Project, OpticalAxisHitsPrincipalPoint)
{
    const Camera c = axis_camera();
    const auto s = project(c, std::vector<Vec3>{{0, 0, 5}});
    EXPECT_DOUBLE_EQ(s[0].u, c.cx);
    EXPECT_DOUBLE_EQ(s[0].v, c.cy);
    EXPECT_TRUE(s[0].visible);
}

TEST(Project, FocalLinearity)
{
    const std::vector<Vec3> p{{0.3, -0.2, 4.0}};
    const auto a = project(axis_camera(100.0), p), b = project(axis_camera(200.0), p);
    const Camera c = axis_camera();
    EXPECT_NEAR(b[0].u - c.cx, 2.0 * (a[0].u - c.cx), 1e-12);
    EXPECT_NEAR(b[0].v - c.cy, 2.0 * (a[0].v - c.cy), 1e-12);
}

TEST(Project, MatchesHomogeneousMatrixPipeline)
{
    const Camera c = Camera::for_size(128, 128);
    Mat4 k;
    k(0, 0) = c.focal;
    k(0, 2) = c.cx;
    k(1, 1) = c.focal;
    k(1, 2) = c.cy;
    k(2, 2) = 1.0;
    k(3, 3) = 1.0;
    const Mat4 full = compose(k, c.world_to_camera);
    Rng rng(3);
    std::vector<Vec3> pts;
    for (int i = 0; i < 50; ++i) {
        pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    }
    const auto s = project(c, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double h[3] = {0, 0, 0};
        for (int r = 0; r < 3; ++r) {
            h[r] = full(r, 0) * pts[i].x + full(r, 1) * pts[i].y + full(r, 2) * pts[i].z + full(r, 3);
        }
        EXPECT_NEAR(s[i].u, h[0] / h[2], 1e-10);
        EXPECT_NEAR(s[i].v, h[1] / h[2], 1e-10);
    }
}

TEST(Project, BehindNearPlaneIsInvisible)
{
    const auto s = project(axis_camera(), std::vector<Vec3>{{0, 0, -1}});
    EXPECT_FALSE(s[0].visible);
}

TEST(Rasterize, CentroidBarycentrics)
{
    const std::vector<ScreenVertex> s{sv(2.5, 2.5), sv(11.5, 2.5), sv(2.5, 11.5)};
    const std::vector<std::array<int, 3>> tri{{0, 1, 2}};
    const FragmentBuffer fb = rasterize(tri, s, 16, 16);
    const Fragment& f = fb.at(5, 5);
    ASSERT_EQ(f.triangle, 0);
    for (double b : f.bary) {
        EXPECT_NEAR(b, 1.0 / 3.0, 1e-6);
    }
}

TEST(Rasterize, NearerTriangleWins)
{
    const std::vector<ScreenVertex> s{sv(0.2, 0.3, 6.0), sv(15.7, 0.1, 6.0), sv(0.4, 15.6, 6.0),
                                      sv(0.1, 0.2, 3.0), sv(15.8, 0.4, 3.0), sv(0.3, 15.9, 3.0)};
    const std::vector<std::array<int, 3>> tris{{0, 1, 2}, {3, 4, 5}};
    const FragmentBuffer fb = rasterize(tris, s, 16, 16);
    EXPECT_EQ(fb.at(3, 3).triangle, 1);
    EXPECT_NEAR(fb.at(3, 3).depth, 3.0, 1e-12);
}

TEST(Rasterize, CoverageMatchesSignTest)
{
    const std::vector<ScreenVertex> s{sv(3.13, 2.71, 4.0), sv(57.37, 11.19, 5.0), sv(17.77, 44.41, 6.0)};
    const std::vector<std::array<int, 3>> tri{{0, 1, 2}};
    const FragmentBuffer fb = rasterize(tri, s, 64, 48);
    std::size_t covered = 0;
    for (int y = 0; y < 48; ++y) {
        for (int x = 0; x < 64; ++x) {
            const bool in = inside(s[0], s[1], s[2], x + 0.5, y + 0.5);
            EXPECT_EQ(fb.at(x, y).triangle == 0, in) << x << "," << y;
            covered += in ? 1 : 0;
        }
    }
    EXPECT_EQ(fb.covered_count(), covered);
    EXPECT_GT(covered, 500u);
}

TEST(Shade, AmbientOnlyGivesInterpolatedAlbedo)
{
    FlatScene sc;
    const std::vector<Vec3> albedo{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    ShadingParams sh;
    sh.ambient = 1.0;
    sh.intensity = 0.0;
    const Image img = shade(sc.fragments, sc.triangles, sc.normals, albedo, sh);
    int checked = 0;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            const Fragment& f = sc.fragments.at(x, y);
            if (f.triangle < 0) {
                EXPECT_EQ(img.at(x, y, 0), sh.background);
                continue;
            }
            for (int c = 0; c < 3; ++c) {
                EXPECT_NEAR(img.at(x, y, c), f.bary[c], 1e-12);
            }
            ++checked;
        }
    }
    EXPECT_GT(checked, 50);
}

TEST(Shade, LightFromBehindIsBlack)
{
    FlatScene sc;
    const std::vector<Vec3> albedo(3, Vec3{1, 1, 1});
    ShadingParams sh;
    sh.ambient = 0.0;
    sh.intensity = 1.0;
    sh.light = -sc.normals[0];
    const Image img = shade(sc.fragments, sc.triangles, sc.normals, albedo, sh);
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            if (sc.fragments.at(x, y).triangle >= 0) {
                EXPECT_EQ(img.at(x, y, 1), 0.0);
            }
        }
    }
}

TEST(Shade, CosineOfIncidence)
{
    FlatScene sc;
    const std::vector<Vec3> albedo(3, Vec3{1, 1, 1});
    const Vec3 n = sc.normals[0];
    const Vec3 perp = cross(n, Vec3{1, 0, 0});
    const double theta = 0.6;
    ShadingParams sh;
    sh.ambient = 0.0;
    sh.intensity = 1.0;
    sh.light = n * std::cos(theta) + perp * (std::sin(theta) / norm(perp));
    const Image img = shade(sc.fragments, sc.triangles, sc.normals, albedo, sh);
    const int cx = 16, cy = 16;
    ASSERT_GE(sc.fragments.at(cx, cy).triangle, 0);
    EXPECT_NEAR(img.at(cx, cy, 0), std::cos(theta), 1e-12);
}

TEST(Render, DeterministicAndThreadIndependent)
{
    const FaceRig& rig = default_rig();
    const Camera cam = Camera::for_size(128, 128);
    FacialParams p = rig.neutral_params();
    p.exp[jaw_open_basis] = 0.6;
    p.pose[4] = 0.1;
    set_thread_count(1);
    const RenderResult a = render(rig, p, cam, {});
    const RenderResult b = render(rig, p, cam, {});
    set_thread_count(4);
    const RenderResult c = render(rig, p, cam, {});
    set_thread_count(1);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.image, c.image);
    EXPECT_EQ(a.masks.data, c.masks.data);
    EXPECT_EQ(a.landmarks, c.landmarks);
}

TEST(Render, NeutralFaceCoverage)
{
    const FaceRig& rig = default_rig();
    const RenderResult r = render(rig, rig.neutral_params(), Camera::for_size(128, 128), {});
    const double frac = static_cast<double>(r.fragments.covered_count()) / (128.0 * 128.0);
    EXPECT_GT(frac, 0.05);
    // Frozen from the shipped rig.
    EXPECT_EQ(r.fragments.covered_count(), 3414u);
}

TEST(Render, LandmarksFollowPoseTranslation)
{
    const FaceRig& rig = default_rig();
    const Camera cam = Camera::for_size(128, 128);
    std::vector<double> prev;
    for (double tx : {-0.2, -0.1, 0.0, 0.1, 0.2}) {
        FacialParams p = rig.neutral_params();
        p.pose[0] = tx;
        const auto lm = project_landmarks(rig, p, cam);
        const RenderResult r = render(rig, p, cam, {});
        EXPECT_EQ(lm, r.landmarks);
        if (!prev.empty()) {
            for (std::size_t i = 0; i < lm.size(); ++i) {
                EXPECT_GT(lm[i][0], prev[i]);
            }
        }
        prev.clear();
        for (const auto& q : lm) {
            prev.push_back(q[0]);
        }
    }
}

TEST(Render, PartMasksPartitionCoverage)
{
    const FaceRig& rig = default_rig();
    const RenderResult r = render(rig, rig.neutral_params(), Camera::for_size(64, 64), {});
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < part_count; ++k) {
                s += r.masks.at(k, x, y);
            }
            EXPECT_NEAR(s, r.fragments.at(x, y).triangle >= 0 ? 1.0 : 0.0, 1e-12);
        }
    }
}
