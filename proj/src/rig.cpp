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
#include "rigdiff/rig.hpp"

#include "rigdiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace rigdiff {

namespace {

std::string at(const std::string& what, std::size_t i) { return what + "[" + std::to_string(i) + "]"; }

bool finite_mat(const Mat4& m)
{
    return std::all_of(m.a.begin(), m.a.end(), [](double v) { return std::isfinite(v); });
}

double mirror_sign(Channel c)
{
    return (c == Channel::tx || c == Channel::ry || c == Channel::rz) ? -1.0 : 1.0;
}

double controller_value(const Controller& c, double phi)
{
    const double mid = 0.5 * (c.lo + c.hi);
    return mid + (phi - 0.5) * (c.hi - c.lo);
}

double mirrored(Channel ch, double v)
{
    const double n = channel_neutral(ch);
    return mirror_sign(ch) < 0.0 ? n - (v - n) : v;
}

} // namespace

void Skeleton::validate() const
{
    if (bones.empty()) {
        throw ValidationError("skeleton: no bones");
    }
    if (bones[0].parent != -1) {
        throw ValidationError("skeleton: bone 0 must be the root");
    }
    for (std::size_t i = 1; i < bones.size(); ++i) {
        const int p = bones[i].parent;
        if (p < 0 || p >= static_cast<int>(i)) {
            throw ValidationError(at("skeleton.bones", i) + ": parent " + std::to_string(p) +
                                  " breaks topological order (exactly one root, parent < id)");
        }
    }
    for (std::size_t i = 0; i < bones.size(); ++i) {
        if (!finite_mat(bones[i].bind_pose_inv)) {
            throw ValidationError(at("skeleton.bones", i) + ": non-finite bind_pose_inv");
        }
        trs_to_matrix(bones[i].rest); // throws on bad rest transform
    }
}

std::size_t ControllerSchema::active_count() const
{
    return static_cast<std::size_t>(
        std::count_if(controllers.begin(), controllers.end(), [](const Controller& c) { return !c.banned; }));
}

void FaceRig::validate() const
{
    skeleton.validate();
    const std::size_t nv = vertices.size();
    const int nb = static_cast<int>(skeleton.size());
    if (nv == 0) {
        throw ValidationError("rig: empty mesh");
    }
    for (std::size_t i = 0; i < nv; ++i) {
        if (!is_finite(vertices[i])) {
            throw ValidationError(at("rig.vertices", i) + ": non-finite");
        }
    }
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        const auto& tri = triangles[t];
        for (int k = 0; k < 3; ++k) {
            if (tri[k] < 0 || tri[k] >= static_cast<int>(nv)) {
                throw ValidationError(at("rig.triangles", t) + ": vertex index out of range");
            }
        }
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
            throw ValidationError(at("rig.triangles", t) + ": repeated vertex");
        }
    }
    if (albedo.size() != nv) {
        throw ValidationError("rig: albedo count != vertex count");
    }
    if (skin.bone.size() != nv || skin.weight.size() != nv) {
        throw ValidationError("rig: skin binding count != vertex count");
    }
    for (std::size_t v = 0; v < nv; ++v) {
        double sum = 0.0;
        for (int k = 0; k < 4; ++k) {
            if (skin.bone[v][k] < 0 || skin.bone[v][k] >= nb) {
                throw ValidationError(at("rig.skin", v) + ": bone index out of range");
            }
            if (!(skin.weight[v][k] >= 0.0) || !std::isfinite(skin.weight[v][k])) {
                throw ValidationError(at("rig.skin", v) + ": negative or non-finite weight");
            }
            sum += skin.weight[v][k];
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw ValidationError(at("rig.skin", v) + ": weights sum to " + std::to_string(sum));
        }
    }
    if (blendshapes.labels.size() != blendshapes.offsets.size()) {
        throw ValidationError("rig: blendshape label count != basis count");
    }
    for (std::size_t j = 0; j < blendshapes.size(); ++j) {
        if (blendshapes.offsets[j].size() != nv) {
            throw ValidationError(at("rig.blendshapes", j) + ": offset count != vertex count");
        }
        for (const auto& d : blendshapes.offsets[j]) {
            if (!is_finite(d)) {
                throw ValidationError(at("rig.blendshapes", j) + ": non-finite offset");
            }
        }
    }
    std::set<std::pair<int, int>> driven;
    for (std::size_t i = 0; i < schema.controllers.size(); ++i) {
        const auto& c = schema.controllers[i];
        if (c.bone < 0 || c.bone >= nb || c.mirror_bone < -1 || c.mirror_bone >= nb || c.mirror_bone == c.bone) {
            throw ValidationError(at("rig.controllers", i) + ": bad bone reference");
        }
        if (c.banned) {
            continue;
        }
        if (!(c.lo < c.hi) || !std::isfinite(c.lo) || !std::isfinite(c.hi)) {
            throw ValidationError(at("rig.controllers", i) + ": requires lo < hi");
        }
        if (static_cast<int>(c.channel) >= 6 && !(c.lo > 0.0)) {
            throw ValidationError(at("rig.controllers", i) + ": scale range must stay positive");
        }
        const int ch = static_cast<int>(c.channel);
        for (int b : {c.bone, c.mirror_bone}) {
            if (b >= 0 && !driven.insert({b, ch}).second) {
                throw ValidationError(at("rig.controllers", i) + ": bone " + std::to_string(b) + " channel " +
                                      channel_names[ch] + " driven twice");
            }
        }
    }
    if (!landmarks.empty() && landmarks.size() != landmark_count) {
        throw ValidationError("rig: expected 68 landmarks, got " + std::to_string(landmarks.size()));
    }
    std::set<int> seen;
    for (std::size_t i = 0; i < landmarks.size(); ++i) {
        if (landmarks[i] < 0 || landmarks[i] >= static_cast<int>(nv)) {
            throw ValidationError(at("rig.landmarks", i) + ": vertex index out of range");
        }
        if (!seen.insert(landmarks[i]).second) {
            throw ValidationError(at("rig.landmarks", i) + ": duplicate vertex");
        }
    }
    if (parts.size() != nv) {
        throw ValidationError("rig: part label count != vertex count");
    }
    if (!is_finite(pose_pivot)) {
        throw ValidationError("rig: non-finite pose pivot");
    }
}

BoneParams identity_to_bone_params(std::span<const double> idt, const ControllerSchema& schema,
                                   std::size_t bone_count)
{
    if (idt.size() != schema.size()) {
        throw ValidationError("identity_to_bone_params: " + std::to_string(idt.size()) + " values for " +
                              std::to_string(schema.size()) + " controllers");
    }
    BoneParams out;
    out.trs.assign(bone_count, TransformTRS::neutral());
    for (std::size_t k = 0; k < idt.size(); ++k) {
        const Controller& c = schema.controllers[k];
        if (c.banned) {
            continue;
        }
        double phi = idt[k];
        if (!std::isfinite(phi)) {
            throw ValidationError(at("idt", k) + ": non-finite");
        }
        if (phi < 0.0 || phi > 1.0) {
            ++out.clamped;
            phi = std::clamp(phi, 0.0, 1.0);
        }
        const double v = controller_value(c, phi);
        out.trs[c.bone][c.channel] = v;
        if (c.mirror_bone >= 0) {
            out.trs[c.mirror_bone][c.channel] = mirrored(c.channel, v);
        }
    }
    return out;
}

std::vector<double> identity_to_bone_params_vjp(std::span<const double> idt, const ControllerSchema& schema,
                                                std::span<const std::array<double, 9>> d_trs)
{
    std::vector<double> d(idt.size(), 0.0);
    for (std::size_t k = 0; k < idt.size(); ++k) {
        const Controller& c = schema.controllers[k];
        if (c.banned || idt[k] < 0.0 || idt[k] > 1.0) {
            continue;
        }
        const int ch = static_cast<int>(c.channel);
        double g = d_trs[c.bone][ch];
        if (c.mirror_bone >= 0) {
            g += mirror_sign(c.channel) * d_trs[c.mirror_bone][ch];
        }
        d[k] = g * (c.hi - c.lo);
    }
    return d;
}

std::vector<Mat4> local_matrices(const Skeleton& skeleton, std::span<const TransformTRS> bone_trs)
{
    if (bone_trs.size() != skeleton.size()) {
        throw ValidationError("local_matrices: one TransformTRS per bone required");
    }
    std::vector<Mat4> local(skeleton.size());
    for (std::size_t b = 0; b < skeleton.size(); ++b) {
        local[b] = compose(trs_to_matrix(skeleton.bones[b].rest), trs_to_matrix(bone_trs[b]));
    }
    return local;
}

namespace {

std::vector<Mat4> chain(const Skeleton& skeleton, const std::vector<Mat4>& local)
{
    std::vector<Mat4> world(local.size());
    for (std::size_t b = 0; b < local.size(); ++b) {
        const int p = skeleton.bones[b].parent;
        world[b] = p < 0 ? local[b] : compose(world[p], local[b]);
    }
    return world;
}

} // namespace

std::vector<Mat4> local_to_world(const Skeleton& skeleton, std::span<const TransformTRS> bone_trs)
{
    return chain(skeleton, local_matrices(skeleton, bone_trs));
}

std::vector<Mat4> rest_world(const Skeleton& skeleton)
{
    const std::vector<TransformTRS> neutral(skeleton.size(), TransformTRS::neutral());
    return local_to_world(skeleton, neutral);
}

void bind_rest_pose(Skeleton& skeleton)
{
    const auto world = rest_world(skeleton);
    for (std::size_t b = 0; b < skeleton.size(); ++b) {
        skeleton.bones[b].bind_pose_inv = affine_inverse(world[b]);
    }
}

std::vector<Vec3> apply_blendshapes(const FaceRig& rig, std::span<const double> exp)
{
    if (exp.size() != rig.blendshapes.size()) {
        throw ValidationError("apply_blendshapes: " + std::to_string(exp.size()) + " coefficients for " +
                              std::to_string(rig.blendshapes.size()) + " bases");
    }
    std::vector<Vec3> out = rig.vertices;
    for (std::size_t j = 0; j < exp.size(); ++j) {
        if (exp[j] == 0.0) {
            continue;
        }
        const auto& delta = rig.blendshapes.offsets[j];
        for (std::size_t v = 0; v < out.size(); ++v) {
            out[v] += exp[j] * delta[v];
        }
    }
    return out;
}

namespace {

std::vector<Mat4> skin_matrices(const Skeleton& skeleton, const std::vector<Mat4>& world)
{
    std::vector<Mat4> skin(world.size());
    for (std::size_t b = 0; b < world.size(); ++b) {
        skin[b] = compose(world[b], skeleton.bones[b].bind_pose_inv);
    }
    return skin;
}

Mat4 blended(const SkinBinding& binding, const std::vector<Mat4>& skin, std::size_t v)
{
    Mat4 m = Mat4::zero();
    for (int k = 0; k < 4; ++k) {
        const double w = binding.weight[v][k];
        if (w == 0.0) {
            continue;
        }
        const Mat4& s = skin[binding.bone[v][k]];
        for (int i = 0; i < 12; ++i) {
            m.a[i] += w * s.a[i];
        }
    }
    return m;
}

std::vector<Vec3> skin_vertices(const FaceRig& rig, const std::vector<Mat4>& skin, const std::vector<Vec3>& shaped)
{
    std::vector<Vec3> out(shaped.size());
    for (std::size_t v = 0; v < shaped.size(); ++v) {
        out[v] = apply_affine(blended(rig.skin, skin, v), shaped[v]);
    }
    return out;
}

} // namespace

std::vector<Vec3> skin_mesh(const FaceRig& rig, std::span<const double> idt, std::span<const double> exp)
{
    const BoneParams bp = identity_to_bone_params(idt, rig.schema, rig.skeleton.size());
    const auto world = local_to_world(rig.skeleton, bp.trs);
    return skin_vertices(rig, skin_matrices(rig.skeleton, world), apply_blendshapes(rig, exp));
}

std::vector<Vec3> apply_pose(std::span<const Vec3> vertices, std::span<const double> pose, const Vec3& pivot)
{
    if (pose.size() != pose_dim) {
        throw ValidationError("apply_pose: expected 6 pose values");
    }
    const Mat4 r = euler_rotation(pose[3], pose[4], pose[5]);
    // y = R x + (t + c - R c); exact identity when pose == 0.
    const Vec3 offset = Vec3{pose[0], pose[1], pose[2]} + (pivot - apply_linear(r, pivot));
    std::vector<Vec3> out(vertices.size());
    for (std::size_t v = 0; v < vertices.size(); ++v) {
        out[v] = apply_linear(r, vertices[v]) + offset;
    }
    return out;
}

std::vector<Vec3> landmark_positions(std::span<const Vec3> vertices, const FaceRig& rig)
{
    std::vector<Vec3> out;
    out.reserve(rig.landmarks.size());
    for (int idx : rig.landmarks) {
        out.push_back(vertices[idx]);
    }
    return out;
}

RigForward evaluate_rig(const FaceRig& rig, const FacialParams& params)
{
    RigForward f;
    f.bones = identity_to_bone_params(params.idt, rig.schema, rig.skeleton.size());
    f.local = local_matrices(rig.skeleton, f.bones.trs);
    f.world = chain(rig.skeleton, f.local);
    f.skin = skin_matrices(rig.skeleton, f.world);
    f.shaped = apply_blendshapes(rig, params.exp);
    f.skinned = skin_vertices(rig, f.skin, f.shaped);
    f.posed = apply_pose(f.skinned, params.pose, rig.pose_pivot);
    return f;
}

void rig_vjp(const FaceRig& rig, const FacialParams& params, const RigForward& fwd, std::span<const Vec3> d_posed,
             ParamGradient& grad)
{
    const std::size_t nv = rig.vertices.size();
    const std::size_t nb = rig.skeleton.size();
    if (d_posed.size() != nv) {
        throw ValidationError("rig_vjp: adjoint count != vertex count");
    }

    // Pose.
    const auto& pose = params.pose;
    const Mat4 r = euler_rotation(pose[3], pose[4], pose[5]);
    const auto dr = euler_rotation_derivatives(pose[3], pose[4], pose[5]);
    const Vec3& c = rig.pose_pivot;
    std::vector<Vec3> d_skinned(nv);
    Vec3 d_t{};
    double d_r[3][3] = {};
    for (std::size_t v = 0; v < nv; ++v) {
        const Vec3& g = d_posed[v];
        d_t += g;
        d_skinned[v] = apply_linear_transposed(r, g);
        const Vec3 rel = fwd.skinned[v] - c;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                d_r[i][j] += g[i] * rel[j];
            }
        }
    }
    grad.d_pose[0] += d_t.x;
    grad.d_pose[1] += d_t.y;
    grad.d_pose[2] += d_t.z;
    for (int k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                acc += d_r[i][j] * dr[k](i, j);
            }
        }
        grad.d_pose[3 + k] += acc;
    }

    // Skinning and blendshapes.
    std::vector<Mat4> d_skin(nb, Mat4::zero());
    std::vector<Vec3> d_shaped(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        const Vec3& g = d_skinned[v];
        const Vec3& p = fwd.shaped[v];
        const Mat4 m = blended(rig.skin, fwd.skin, v);
        d_shaped[v] = apply_linear_transposed(m, g);
        for (int k = 0; k < 4; ++k) {
            const double w = rig.skin.weight[v][k];
            if (w == 0.0) {
                continue;
            }
            Mat4& ds = d_skin[rig.skin.bone[v][k]];
            for (int i = 0; i < 3; ++i) {
                const double wg = w * g[i];
                ds(i, 0) += wg * p.x;
                ds(i, 1) += wg * p.y;
                ds(i, 2) += wg * p.z;
                ds(i, 3) += wg;
            }
        }
    }
    for (std::size_t j = 0; j < rig.blendshapes.size(); ++j) {
        const auto& delta = rig.blendshapes.offsets[j];
        double acc = 0.0;
        for (std::size_t v = 0; v < nv; ++v) {
            acc += dot(delta[v], d_shaped[v]);
        }
        grad.d_exp[j] += acc;
    }

    // Bone chain, leaves first.
    std::vector<Mat4> d_world(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        d_world[b] = compose(d_skin[b], transpose(rig.skeleton.bones[b].bind_pose_inv));
    }
    std::vector<std::array<double, 9>> d_trs(nb);
    for (std::size_t bi = nb; bi-- > 0;) {
        const int p = rig.skeleton.bones[bi].parent;
        Mat4 d_local = d_world[bi];
        if (p >= 0) {
            d_local = compose(transpose(fwd.world[p]), d_world[bi]);
            d_world[p] = d_world[p] + compose(d_world[bi], transpose(fwd.local[bi]));
        }
        const Mat4 rest = trs_to_matrix(rig.skeleton.bones[bi].rest);
        d_trs[bi] = trs_to_matrix_vjp(fwd.bones.trs[bi], compose(transpose(rest), d_local));
    }
    const auto d_idt = identity_to_bone_params_vjp(params.idt, rig.schema, d_trs);
    for (std::size_t k = 0; k < d_idt.size(); ++k) {
        grad.d_idt[k] += d_idt[k];
    }
}

} // namespace rigdiff
