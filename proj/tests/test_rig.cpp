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

#include "rigdiff/error.hpp"
#include "rigdiff/rig.hpp"
#include "rigdiff/rig_generator.hpp"
#include "rigdiff/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

using namespace rigdiff;
using rigdiff::test::default_rig;

namespace {

Skeleton chain(const std::vector<TransformTRS>& rests, const std::vector<int>& parents)
{
    Skeleton s;
    for (std::size_t i = 0; i < rests.size(); ++i) {
        s.bones.push_back({"b" + std::to_string(i), parents[i], rests[i], Mat4::identity()});
    }
    bind_rest_pose(s);
    return s;
}

/// Recursive top-down oracle: world(k) = world(parent) * rest(k) * trs(k).
Mat4 world_oracle(const Skeleton& s, const std::vector<TransformTRS>& trs, int k)
{
    const Mat4 local = compose(trs_to_matrix(s.bones[k].rest), trs_to_matrix(trs[k]));
    const int p = s.bones[k].parent;
    return p < 0 ? local : compose(world_oracle(s, trs, p), local);
}

/// One bone, three vertices, weight 1 on the bone.
FaceRig tiny_rig()
{
    FaceRig r;
    r.skeleton = chain({TransformTRS::neutral()}, {-1});
    r.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0.5}};
    r.triangles = {{0, 1, 2}};
    r.albedo.assign(3, {0.8, 0.6, 0.5});
    r.skin.bone.assign(3, {0, 0, 0, 0});
    r.skin.weight.assign(3, {1.0, 0.0, 0.0, 0.0});
    return r;
}

std::vector<double> random_idt(const FaceRig& rig, Rng& rng)
{
    std::vector<double> idt(rig.identity_size(), 0.5);
    for (std::size_t k = 0; k < idt.size(); ++k) {
        if (!rig.schema.controllers[k].banned) {
            idt[k] = rng.uniform();
        }
    }
    return idt;
}

double max_displacement(const std::vector<Vec3>& a, const std::vector<Vec3>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, norm(a[i] - b[i]));
    }
    return m;
}

} // namespace

TEST(DefaultRig, Dimensions)
{
    const FaceRig& rig = default_rig();
    EXPECT_NO_THROW(rig.validate());
    EXPECT_EQ(rig.identity_size(), 261u);
    EXPECT_EQ(rig.schema.active_count(), 208u);
    EXPECT_EQ(rig.expression_size(), 22u);
    EXPECT_EQ(rig.landmarks.size(), 68u);
    EXPECT_GE(rig.vertices.size(), 1000u);
    EXPECT_EQ(rig.blendshapes.labels[jaw_open_basis], "Jaw-open");
}

TEST(DefaultRig, SkinWeightsSumToOne)
{
    const FaceRig& rig = default_rig();
    for (std::size_t v = 0; v < rig.vertices.size(); ++v) {
        double s = 0.0;
        for (double w : rig.skin.weight[v]) {
            EXPECT_GE(w, 0.0);
            s += w;
        }
        EXPECT_NEAR(s, 1.0, 1e-6) << "vertex " << v;
    }
}

TEST(DefaultRig, ValidationCatchesBrokenInvariants)
{
    FaceRig bad = default_rig();
    bad.skin.weight[10][0] += 0.01;
    EXPECT_THROW(bad.validate(), ValidationError);

    FaceRig dup = default_rig();
    dup.landmarks[1] = dup.landmarks[0];
    EXPECT_THROW(dup.validate(), ValidationError);

    FaceRig tri = default_rig();
    tri.triangles[0][2] = static_cast<int>(tri.vertices.size());
    EXPECT_THROW(tri.validate(), ValidationError);

    FaceRig parent = default_rig();
    parent.skeleton.bones[2].parent = 5;
    EXPECT_THROW(parent.validate(), ValidationError);
}

TEST(DefaultRig, SameSeedSameRig)
{
    const FaceRig a = generate_default_rig(7);
    const FaceRig b = generate_default_rig(7);
    EXPECT_EQ(a.vertices, b.vertices);
    EXPECT_EQ(a.albedo, b.albedo);
}

TEST(IdentityToBones, MidpointsOfSymmetricRangesAreNeutral)
{
    ControllerSchema schema;
    schema.controllers = {{"g", 1, -1, Channel::tx, -0.2, 0.2},
                          {"g", 1, -1, Channel::rz, -0.3, 0.3},
                          {"g", 2, 3, Channel::ry, -0.3, 0.3}};
    const std::vector<double> idt(3, 0.5);
    const BoneParams b = identity_to_bone_params(idt, schema, 4);
    for (const auto& t : b.trs) {
        EXPECT_EQ(t, TransformTRS::neutral());
    }
}

TEST(IdentityToBones, AffineEndpoint)
{
    ControllerSchema schema;
    schema.controllers = {{"g", 3, -1, Channel::ty, -0.2, 0.2}};
    const BoneParams b = identity_to_bone_params(std::vector<double>{1.0}, schema, 4);
    EXPECT_DOUBLE_EQ(b.trs[3][Channel::ty], 0.2);
    EXPECT_EQ(b.clamped, 0u);
}

TEST(IdentityToBones, MatchesPerControllerOracle)
{
    const FaceRig& rig = default_rig();
    Rng rng(17);
    const std::vector<double> idt = random_idt(rig, rng);
    const BoneParams b = identity_to_bone_params(idt, rig.schema, rig.skeleton.size());

    std::vector<TransformTRS> oracle(rig.skeleton.size());
    for (std::size_t k = 0; k < idt.size(); ++k) {
        const Controller& c = rig.schema.controllers[k];
        if (c.banned) {
            continue;
        }
        const double v = c.lo + idt[k] * (c.hi - c.lo);
        oracle[c.bone][c.channel] = v;
        if (c.mirror_bone >= 0) {
            const bool flip = c.channel == Channel::tx || c.channel == Channel::ry || c.channel == Channel::rz;
            oracle[c.mirror_bone][c.channel] = flip ? -v : v;
        }
    }
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        for (int c = 0; c < 9; ++c) {
            EXPECT_NEAR(b.trs[i].v[c], oracle[i].v[c], 1e-15) << "bone " << i << " channel " << c;
        }
    }
}

TEST(IdentityToBones, OutOfRangeIsClampedAndFlagged)
{
    ControllerSchema schema;
    schema.controllers = {{"g", 0, -1, Channel::tz, -0.1, 0.1}, {"g", 0, -1, Channel::tx, -0.1, 0.1}};
    const BoneParams b = identity_to_bone_params(std::vector<double>{1.5, -0.2}, schema, 1);
    EXPECT_EQ(b.clamped, 2u);
    EXPECT_DOUBLE_EQ(b.trs[0][Channel::tz], 0.1);
    EXPECT_DOUBLE_EQ(b.trs[0][Channel::tx], -0.1);
}

TEST(IdentityToBones, BannedSlotsDriveNothing)
{
    const FaceRig& rig = default_rig();
    std::vector<double> idt(rig.identity_size(), 0.5);
    for (std::size_t k = 0; k < idt.size(); ++k) {
        if (rig.schema.controllers[k].banned) {
            idt[k] = 0.9;
        }
    }
    const BoneParams b = identity_to_bone_params(idt, rig.schema, rig.skeleton.size());
    for (const auto& t : b.trs) {
        EXPECT_EQ(t, TransformTRS::neutral());
    }
}

TEST(LocalToWorld, NeutralChainIsRestChain)
{
    const FaceRig& rig = default_rig();
    const std::vector<TransformTRS> neutral(rig.skeleton.size());
    EXPECT_EQ(local_to_world(rig.skeleton, neutral), rest_world(rig.skeleton));
}

TEST(LocalToWorld, ChildOffsetFollowsParentRotation)
{
    const Skeleton s = chain({TransformTRS::from({1, 2, 3}, {std::numbers::pi / 2, 0, 0}),
                              TransformTRS::from({0, 1, 0})},
                             {-1, 0});
    const std::vector<TransformTRS> neutral(2);
    const auto w = local_to_world(s, neutral);
    const Vec3 parent = w[0].translation_part(), child = w[1].translation_part();
    EXPECT_NEAR(child.x - parent.x, 0.0, 1e-15);
    EXPECT_NEAR(child.y - parent.y, 0.0, 1e-15);
    EXPECT_NEAR(child.z - parent.z, 1.0, 1e-15);
}

TEST(LocalToWorld, MatchesRecursiveOracle)
{
    Rng rng(9);
    std::vector<TransformTRS> rests, trs;
    for (int i = 0; i < 5; ++i) {
        TransformTRS r, t;
        for (int c = 0; c < 6; ++c) {
            r.v[c] = rng.uniform(-0.5, 0.5);
            t.v[c] = rng.uniform(-0.3, 0.3);
        }
        for (int c = 6; c < 9; ++c) {
            t.v[c] = rng.uniform(0.8, 1.2);
        }
        rests.push_back(r);
        trs.push_back(t);
    }
    const Skeleton s = chain(rests, {-1, 0, 1, 1, 3});
    const auto w = local_to_world(s, trs);
    for (int k = 0; k < 5; ++k) {
        const Mat4 o = world_oracle(s, trs, k);
        for (int e = 0; e < 16; ++e) {
            EXPECT_NEAR(w[k].a[e], o.a[e], 1e-13);
        }
    }
}

TEST(SkinMesh, SingleIdentityBoneLeavesVerticesUnchanged)
{
    const FaceRig r = tiny_rig();
    EXPECT_EQ(skin_mesh(r, {}, {}), r.vertices);
}

TEST(SkinMesh, NeutralIdentityIsBindPose)
{
    const FaceRig& rig = default_rig();
    const FacialParams n = rig.neutral_params();
    const auto v = skin_mesh(rig, n.idt, n.exp);
    EXPECT_EQ(max_displacement(v, rig.vertices), 0.0);
}

TEST(SkinMesh, JawOpenBasisIsExact)
{
    const FaceRig& rig = default_rig();
    FacialParams p = rig.neutral_params();
    p.exp[jaw_open_basis] = 1.0;
    const auto v = skin_mesh(rig, p.idt, p.exp);
    const auto& d = rig.blendshapes.offsets[jaw_open_basis];
    bool moved = false;
    for (std::size_t q = 0; q < v.size(); ++q) {
        const Vec3 expected = rig.vertices[q] + d[q];
        EXPECT_EQ(v[q], expected) << "vertex " << q;
        moved = moved || !(d[q] == Vec3{});
    }
    EXPECT_TRUE(moved);
    EXPECT_EQ(apply_blendshapes(rig, p.exp), v);
}

TEST(SkinMesh, LinearInExpression)
{
    const FaceRig& rig = default_rig();
    Rng rng(23);
    for (int trial = 0; trial < 3; ++trial) {
        const std::vector<double> idt = random_idt(rig, rng);
        std::vector<double> a(rig.expression_size()), b(rig.expression_size()), mix(rig.expression_size());
        const double alpha = rng.uniform();
        for (std::size_t j = 0; j < a.size(); ++j) {
            a[j] = rng.uniform();
            b[j] = rng.uniform();
            mix[j] = alpha * a[j] + (1.0 - alpha) * b[j];
        }
        const auto va = skin_mesh(rig, idt, a), vb = skin_mesh(rig, idt, b), vm = skin_mesh(rig, idt, mix);
        double dev = 0.0;
        for (std::size_t q = 0; q < vm.size(); ++q) {
            dev = std::max(dev, norm(vm[q] - (alpha * va[q] + (1.0 - alpha) * vb[q])));
        }
        EXPECT_LE(dev, 1e-9);
    }
}

TEST(ApplyPose, ZeroTranslateRotate)
{
    const FaceRig& rig = default_rig();
    const Vec3 pivot = rig.pose_pivot;
    EXPECT_EQ(apply_pose(rig.vertices, std::vector<double>(6, 0.0), pivot), rig.vertices);

    const auto shifted = apply_pose(rig.vertices, std::vector<double>{0, 0, 1, 0, 0, 0}, pivot);
    for (std::size_t q = 0; q < shifted.size(); ++q) {
        EXPECT_NEAR(shifted[q].z, rig.vertices[q].z + 1.0, 1e-15);
        EXPECT_NEAR(shifted[q].x, rig.vertices[q].x, 1e-15);
    }

    const auto turned = apply_pose(rig.vertices, std::vector<double>{0, 0, 0, 0, std::numbers::pi / 4, 0}, pivot);
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const std::size_t a = rng.index(rig.vertices.size()), b = rng.index(rig.vertices.size());
        EXPECT_NEAR(norm(turned[a] - turned[b]), norm(rig.vertices[a] - rig.vertices[b]), 1e-9);
    }
}

TEST(Landmarks, GatherAndRigidShift)
{
    const FaceRig& rig = default_rig();
    const auto lm = landmark_positions(rig.vertices, rig);
    ASSERT_EQ(lm.size(), 68u);
    for (std::size_t i = 0; i < lm.size(); ++i) {
        EXPECT_EQ(lm[i], rig.vertices[rig.landmarks[i]]);
    }

    // Permuting two non-landmark vertices does not move any landmark.
    const std::set<int> used(rig.landmarks.begin(), rig.landmarks.end());
    std::vector<int> free;
    for (int q = 0; q < static_cast<int>(rig.vertices.size()) && free.size() < 2; ++q) {
        if (used.count(q) == 0) {
            free.push_back(q);
        }
    }
    auto perm = rig.vertices;
    std::swap(perm[free[0]], perm[free[1]]);
    EXPECT_EQ(landmark_positions(perm, rig), lm);

    const Vec3 t{0.4, -0.2, 1.1};
    const auto moved =
        landmark_positions(apply_pose(rig.vertices, std::vector<double>{t.x, t.y, t.z, 0, 0, 0}, rig.pose_pivot), rig);
    for (std::size_t i = 0; i < lm.size(); ++i) {
        EXPECT_NEAR(moved[i].x - lm[i].x, t.x, 1e-14);
        EXPECT_NEAR(moved[i].y - lm[i].y, t.y, 1e-14);
        EXPECT_NEAR(moved[i].z - lm[i].z, t.z, 1e-14);
    }
}

TEST(FacialParams, RangesAndClamp)
{
    FacialParams p = FacialParams::neutral();
    EXPECT_NO_THROW(p.validate(identity_dim, expression_dim));
    p.pose[0] = 3.5;
    p.exp[2] = -0.1;
    EXPECT_THROW(p.validate(identity_dim, expression_dim), ValidationError);
    p.clamp_to_ranges();
    EXPECT_DOUBLE_EQ(p.pose[0], 3.0);
    EXPECT_DOUBLE_EQ(p.exp[2], 0.0);
    EXPECT_NO_THROW(p.validate(identity_dim, expression_dim));

    std::vector<double> flat = p.flatten();
    ASSERT_EQ(flat.size(), identity_dim + expression_dim + pose_dim);
    flat[identity_dim] = 0.25;
    p.assign(flat);
    EXPECT_DOUBLE_EQ(p.exp[0], 0.25);
}
