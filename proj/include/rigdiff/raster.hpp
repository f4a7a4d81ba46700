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
#pragma once

#ifndef RIGDIFF_RASTER_HPP
#define RIGDIFF_RASTER_HPP

#include "rigdiff/geom.hpp"
#include "rigdiff/params.hpp"
#include "rigdiff/rig.hpp"

#include <array>
#include <memory>
#include <span>
#include <vector>

namespace rigdiff {

/**
 * Pinhole camera in the OpenCV convention: camera looks down +z of its own
 * frame, image v grows downwards, pixel (i, j) has its center at
 * (i + 0.5, j + 0.5).
 */
struct Camera
{
    double focal = 614.4;
    double cx = 128.0;
    double cy = 128.0;
    int width = 256;
    int height = 256;
    double near = 0.1;
    double far = 100.0;
    Mat4 world_to_camera = default_pose();

    /// Eight units in front of the face, looking back at the origin.
    static Mat4 default_pose();

    /// Frames the default head at roughly 60% of the image height.
    static Camera for_size(int width, int height);

    void validate() const;
};

/// Directional light; `light` points from the surface toward the light.
struct ShadingParams
{
    Vec3 light{-0.4, 0.5, 0.75};
    double intensity = 0.7;
    double ambient = 0.35;
    double background = 0.5;

    void validate() const;
};

struct ScreenVertex
{
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;   ///< camera-space z
    bool visible = false; ///< false when outside [near, far]
};

std::vector<ScreenVertex> project(const Camera& camera, std::span<const Vec3> vertices);

struct Fragment
{
    int triangle = -1; ///< -1 for an empty pixel
    std::array<double, 3> bary{};
    double depth = 0.0;
};

struct FragmentBuffer
{
    int width = 0;
    int height = 0;
    std::vector<Fragment> pixels; ///< row-major

    const Fragment& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t covered_count() const;
};

/**
 * Z-buffered rasterization at pixel centers with perspective-correct
 * barycentrics. Ties in depth go to the lower triangle index; zero-area
 * triangles and triangles with an invisible vertex are skipped. No
 * backface culling.
 */
FragmentBuffer rasterize(std::span<const std::array<int, 3>> triangles, std::span<const ScreenVertex> screen,
                         int width, int height);

/// H x W x 3, row-major, channels interleaved.
struct Image
{
    int width = 0;
    int height = 0;
    std::vector<double> data;

    static Image filled(int width, int height, double value)
    {
        return {width, height, std::vector<double>(static_cast<std::size_t>(width) * height * 3, value)};
    }

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Soft per-part coverage, [part][y][x], parts ordered brows, eyes, nose, mouth, skin.
struct PartMasks
{
    int width = 0;
    int height = 0;
    std::vector<double> data;

    static PartMasks zeros(int width, int height)
    {
        return {width, height, std::vector<double>(part_count * static_cast<std::size_t>(width) * height, 0.0)};
    }

    double& at(std::size_t part, int x, int y)
    {
        return data[(part * static_cast<std::size_t>(height) + y) * width + x];
    }
    double at(std::size_t part, int x, int y) const
    {
        return data[(part * static_cast<std::size_t>(height) + y) * width + x];
    }
};

/// Area-weighted, unit-length vertex normals (unnormalized sums optional).
std::vector<Vec3> vertex_normals(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> triangles,
                                 std::vector<Vec3>* sums = nullptr);

/**
 * Lambertian shading: albedo * (ambient + intensity * max(0, n . l)) with
 * the interpolated normal renormalized; clamped to [0, 1]. Empty pixels
 * take the background value.
 */
Image shade(const FragmentBuffer& fragments, std::span<const std::array<int, 3>> triangles,
            std::span<const Vec3> normals, std::span<const Vec3> albedo, const ShadingParams& shading);

PartMasks part_masks(const FragmentBuffer& fragments, std::span<const std::array<int, 3>> triangles,
                     std::span<const Part> parts);

/// Forward intermediates needed by the reverse pass.
struct RenderCache
{
    FacialParams params;
    RigForward rig;
    std::vector<ScreenVertex> screen;
    std::vector<Vec3> normal_sums;
    std::vector<Vec3> normals;
};

struct RenderResult
{
    Image image;
    FragmentBuffer fragments;
    std::vector<std::array<double, 2>> landmarks; ///< pixel coordinates
    PartMasks masks;
    std::shared_ptr<const RenderCache> cache;
};

/// Parameters -> bones -> skin -> pose -> projection -> raster -> shading.
RenderResult render(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                    const ShadingParams& shading);

/// Landmark path only (no rasterization).
std::vector<std::array<double, 2>> project_landmarks(const FaceRig& rig, const FacialParams& params,
                                                     const Camera& camera);

} // namespace rigdiff

#endif // RIGDIFF_RASTER_HPP
