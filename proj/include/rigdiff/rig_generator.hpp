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

#ifndef RIGDIFF_RIG_GENERATOR_HPP
#define RIGDIFF_RIG_GENERATOR_HPP

#include "rigdiff/rig.hpp"

#include <array>
#include <cstdint>
#include <string_view>

namespace rigdiff {

/// Expression basis labels, in identity-vector order (ID 7 is "Jaw-open").
inline constexpr std::array<std::string_view, 22> expression_labels{
    "Eye-close",         "Upper-lid-raise",   "Lid-tighten",           "Inner-brow-raise",
    "Left-outer-brow-raise", "Right-outer-brow-raise", "Brow-Lower",    "Jaw-open",
    "Nose-wrinkle",      "Upper-lip-raise",   "Down-lip-down",         "Lip-corner-pull",
    "Left-mouth-press",  "Right-mouth-press", "Lip-pucker",            "Lip-stretch",
    "Lip-upper-close",   "Lip-lower-close",   "Puff",                  "Lip-corner-depress",
    "Jaw-left",          "Jaw-right"};

/// The 29 facial part groups of the identity table, in controller order.
inline constexpr std::array<std::string_view, 29> identity_groups{
    "eyebrow-head",     "eyebrow-body",      "eyebrow-tail",     "eye",           "outside-eyelid",
    "inside-eyelid",    "lower-eyelid",      "inner-eye-corner", "outer-eye-corner", "nose-body",
    "nose-bridge",      "nose-wing",         "nose-tip",         "nose-bottom",   "mouth",
    "middle-upper-lip", "outer-upper-lip",   "middle-lower-lip", "outer-lower-lip", "mouth-corner",
    "forehead",         "glabellum",         "cheekbone",        "risorius",      "cheek",
    "jaw",              "lower-jaw",         "mandibular",       "outer-jaw"};

inline constexpr int jaw_open_basis = 7;

struct RigGeneratorOptions
{
    int rings = 52;   ///< latitude subdivisions of the head
    int columns = 56; ///< longitude subdivisions, concentrated on the face
};

/**
 * Builds the default low-poly head rig. The geometry, skeleton, controller
 * table and landmarks are fixed; the seed only drives the albedo pattern.
 * All-midpoint identity parameters reproduce the bind pose exactly.
 */
FaceRig generate_default_rig(std::uint64_t seed, const RigGeneratorOptions& options = {});

} // namespace rigdiff

#endif // RIGDIFF_RIG_GENERATOR_HPP
