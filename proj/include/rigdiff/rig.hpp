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

#ifndef RIGDIFF_RIG_HPP
#define RIGDIFF_RIG_HPP

#include "rigdiff/geom.hpp"
#include "rigdiff/params.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rigdiff {

struct Bone
{
    std::string name;
    int parent = -1; ///< -1 marks the root; otherwise a smaller index.
    TransformTRS rest;
    Mat4 bind_pose_inv = Mat4::identity();
};

/**
 * Bones are stored topologically sorted: parent index < own index, and
 * bone 0 is the single root.
 */
struct Skeleton
{
    std::vector<Bone> bones;

    std::size_t size() const { return bones.size(); }
    void validate() const;
};

/// Exactly four (bone, weight) pairs per vertex.
struct SkinBinding
{
    std::vector<std::array<int, 4>> bone;
    std::vector<std::array<double, 4>> weight;
};

/// One additive per-vertex offset field per expression.
struct BlendshapeBasis
{
    std::vector<std::string> labels;
    std::vector<std::vector<Vec3>> offsets; ///< [basis][vertex]

    std::size_t size() const { return offsets.size(); }
};

/**
 * One slot of the identity vector. Active controllers write
 * lo + phi * (hi - lo) into (bone, channel); when mirror_bone >= 0 the
 * mirrored value (tx, ry, rz negated) goes to the mirror bone as well.
 * Banned controllers keep their slot but drive nothing.
 */
struct Controller
{
    std::string group;
    int bone = 0;
    int mirror_bone = -1;
    Channel channel = Channel::tx;
    double lo = 0.0;
    double hi = 1.0;
    bool banned = false;
};

struct ControllerSchema
{
    std::vector<Controller> controllers;

    std::size_t size() const { return controllers.size(); }
    std::size_t active_count() const;
};

enum class Part : std::uint8_t { brows = 0, eyes, nose, mouth, skin, none };
inline constexpr std::size_t part_count = 5;
inline constexpr std::array<const char*, part_count> part_names{"brows", "eyes", "nose", "mouth", "skin"};

/**
 * The static rig asset: skeleton, base mesh, skin binding, expression
 * bases, controller table, 68 landmark vertices (dlib order) and the
 * per-vertex facial part labels. Immutable once validated.
 */
struct FaceRig
{
    std::string name;
    Skeleton skeleton;
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> albedo; ///< linear RGB in [0, 1]
    SkinBinding skin;
    BlendshapeBasis blendshapes;
    ControllerSchema schema;
    std::vector<int> landmarks;
    std::vector<Part> parts;
    Vec3 pose_pivot;

    std::size_t identity_size() const { return schema.size(); }
    std::size_t expression_size() const { return blendshapes.size(); }

    FacialParams neutral_params() const { return FacialParams::neutral(identity_size(), expression_size()); }

    /// Throws ValidationError describing the first broken invariant.
    void validate() const;
};

/// Per-bone controller output.
struct BoneParams
{
    std::vector<TransformTRS> trs;
    std::size_t clamped = 0; ///< identity entries that were outside [0, 1]
};

BoneParams identity_to_bone_params(std::span<const double> idt, const ControllerSchema& schema,
                                   std::size_t bone_count);

/// Adjoint of identity_to_bone_params; clamped entries receive zero.
std::vector<double> identity_to_bone_params_vjp(std::span<const double> idt, const ControllerSchema& schema,
                                                std::span<const std::array<double, 9>> d_trs);

/// Rest * TRS for every bone.
std::vector<Mat4> local_matrices(const Skeleton& skeleton, std::span<const TransformTRS> bone_trs);

/// M_l2w of every bone: the product of local matrices along the root-to-bone chain.
std::vector<Mat4> local_to_world(const Skeleton& skeleton, std::span<const TransformTRS> bone_trs);

/// World transforms of the rest skeleton (all bones neutral).
std::vector<Mat4> rest_world(const Skeleton& skeleton);

/// Recomputes every bind_pose_inv as the inverse of the rest world transform.
void bind_rest_pose(Skeleton& skeleton);

/// Base mesh plus the expression offsets, before skinning.
std::vector<Vec3> apply_blendshapes(const FaceRig& rig, std::span<const double> exp);

/// Linear blend skinning of the blendshape-deformed mesh.
std::vector<Vec3> skin_mesh(const FaceRig& rig, std::span<const double> idt, std::span<const double> exp);

/// Rigid motion T * Rz * Ry * Rx about `pivot`. pose = (tx, ty, tz, rx, ry, rz).
std::vector<Vec3> apply_pose(std::span<const Vec3> vertices, std::span<const double> pose, const Vec3& pivot);

std::vector<Vec3> landmark_positions(std::span<const Vec3> vertices, const FaceRig& rig);

/**
 * All intermediates of the parameter -> posed-mesh chain, kept for the
 * reverse pass.
 */
struct RigForward
{
    BoneParams bones;
    std::vector<Mat4> local;
    std::vector<Mat4> world;
    std::vector<Mat4> skin; ///< world * bind_pose_inv
    std::vector<Vec3> shaped;
    std::vector<Vec3> skinned;
    std::vector<Vec3> posed;
};

RigForward evaluate_rig(const FaceRig& rig, const FacialParams& params);

/**
 * Reverse pass of evaluate_rig: accumulates d(loss)/d(params) into `grad`
 * given d(loss)/d(posed vertices).
 */
void rig_vjp(const FaceRig& rig, const FacialParams& params, const RigForward& fwd, std::span<const Vec3> d_posed,
             ParamGradient& grad);

} // namespace rigdiff

#endif // RIGDIFF_RIG_HPP
