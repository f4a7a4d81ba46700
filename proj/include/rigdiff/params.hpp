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

#ifndef RIGDIFF_PARAMS_HPP
#define RIGDIFF_PARAMS_HPP

#include <cstddef>
#include <numbers>
#include <vector>

namespace rigdiff {

/// Parameter dimensions of the default rig.
inline constexpr std::size_t identity_dim = 261;
inline constexpr std::size_t expression_dim = 22;
inline constexpr std::size_t pose_dim = 6;
inline constexpr std::size_t landmark_count = 68;

/// Pose layout: tx, ty, tz, rx, ry, rz.
inline constexpr double pose_translation_limit = 3.0;
inline constexpr double pose_rotation_limit = std::numbers::pi / 2.0;

inline constexpr double pose_limit(std::size_t i) { return i < 3 ? pose_translation_limit : pose_rotation_limit; }

/**
 * The three parameter groups that drive the renderer. Identity and
 * expression live in [0, 1]; pose translations in [-3, 3], rotations in
 * [-pi/2, pi/2]. The identity vector has one slot per controller of the
 * rig's schema, banned controllers included (their value is ignored).
 */
struct FacialParams
{
    std::vector<double> idt;
    std::vector<double> exp;
    std::vector<double> pose;

    /// Identity at 0.5, zero expression, zero pose.
    static FacialParams neutral(std::size_t n_idt = identity_dim, std::size_t n_exp = expression_dim)
    {
        return {std::vector<double>(n_idt, 0.5), std::vector<double>(n_exp, 0.0), std::vector<double>(pose_dim, 0.0)};
    }

    std::size_t size() const { return idt.size() + exp.size() + pose.size(); }

    /// Concatenation [idt, exp, pose].
    std::vector<double> flatten() const;
    /// Inverse of flatten() for the same group sizes.
    void assign(const std::vector<double>& flat);

    /// Throws ValidationError when a value is non-finite or out of range.
    void validate(std::size_t n_idt, std::size_t n_exp) const;

    /// Clamps every group into its valid range.
    void clamp_to_ranges();

    friend bool operator==(const FacialParams&, const FacialParams&) = default;
};

/// d(scalar)/d(parameters), same layout as FacialParams.
struct ParamGradient
{
    std::vector<double> d_idt;
    std::vector<double> d_exp;
    std::vector<double> d_pose;

    static ParamGradient zeros(std::size_t n_idt = identity_dim, std::size_t n_exp = expression_dim)
    {
        return {std::vector<double>(n_idt, 0.0), std::vector<double>(n_exp, 0.0), std::vector<double>(pose_dim, 0.0)};
    }

    std::vector<double> flatten() const;
    ParamGradient& operator+=(const ParamGradient& o);
    ParamGradient& operator*=(double s);
    bool all_finite() const;
};

} // namespace rigdiff

#endif // RIGDIFF_PARAMS_HPP
