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

#ifndef RIGDIFF_GRAD_HPP
#define RIGDIFF_GRAD_HPP

#include "rigdiff/io.hpp"
#include "rigdiff/raster.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rigdiff {

/**
 * Adjoints of the render outputs. Any member may be left empty, which is
 * treated as zero.
 */
struct RenderAdjoint
{
    std::vector<double> d_image;                    ///< H x W x 3, same layout as Image
    std::vector<double> d_masks;                    ///< part x H x W, same layout as PartMasks
    std::vector<std::array<double, 2>> d_landmarks; ///< 68 x (u, v)
};

/**
 * Reverse pass of render(). Triangle assignment is held fixed, so only
 * interior (barycentric) derivatives flow; clamped color channels and the
 * unlit side of the Lambert term contribute zero.
 * Throws ContractViolation when `forward` carries no cache for `params`.
 */
ParamGradient vjp_render(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                         const ShadingParams& shading, const RenderResult& forward, const RenderAdjoint& seed);

/// Image-only convenience form.
ParamGradient vjp_render(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                         const ShadingParams& shading, const RenderResult& forward, const Image& seed);

/// Exact gradient of sum(seed . projected landmarks).
ParamGradient vjp_landmarks(const FaceRig& rig, const FacialParams& params, const Camera& camera,
                            const std::vector<std::array<double, 2>>& seed);

enum class FdStatus { pass, fail, skipped, unstable };

struct FdRow
{
    std::size_t index = 0;
    std::string name;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    FdStatus status = FdStatus::skipped;
};

struct FdOptions
{
    double h = 1e-3;
    double tolerance = 1e-2;  ///< max relative error for a pass
    double grad_floor = 1e-6; ///< coordinates with |g| below this on both sides are skipped
};

struct FdReport
{
    FdOptions options;
    std::vector<FdRow> rows;

    std::size_t count(FdStatus s) const;
    /// passed / (passed + failed); 1 when nothing was compared.
    double pass_rate() const;
    std::string table() const;
    Json to_json() const;
};

using ScalarFn = std::function<double(const std::vector<double>&)>;
/// Returns true when the forward outputs at the two points have the same coverage.
using StabilityFn = std::function<bool(const std::vector<double>&, const std::vector<double>&)>;

/**
 * Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate,
 * compared with `analytic`. Relative error is |a - n| / max(|a|, |n|).
 * When `stable` is given, coordinates whose perturbation changes coverage
 * are marked unstable and excluded from the pass rate.
 */
FdReport finite_diff_check(const ScalarFn& fn, const std::vector<double>& point, const std::vector<double>& analytic,
                           const FdOptions& options, const StabilityFn& stable = {},
                           const std::vector<std::string>& names = {});

/// "idt[3]", "exp[7]", "pose[0]" style labels for a flattened parameter vector.
std::vector<std::string> param_names(std::size_t n_idt, std::size_t n_exp);

/// Outcome of the render and landmark gradient checks at one random point.
struct GradcheckReport
{
    FdReport render;    ///< pixel loss sum(seed . image), coverage-stable coordinates only
    FdReport landmarks; ///< sum(seed . landmarks)

    Json to_json() const;
};

struct GradcheckOptions
{
    FdOptions render{1e-3, 1e-2, 1e-6};
    FdOptions landmarks{1e-4, 1e-5, 1e-8};
};

/**
 * Draws identity in [0.2, 0.8], expression in [0, 0.4], pose within 0.1
 * of zero and a standard normal seed image / landmark seed from `seed`,
 * then compares vjp_render and vjp_landmarks with central differences.
 */
GradcheckReport gradcheck(const FaceRig& rig, const Camera& camera, const ShadingParams& shading,
                          std::uint64_t seed, const GradcheckOptions& options = {});

} // namespace rigdiff

#endif // RIGDIFF_GRAD_HPP
