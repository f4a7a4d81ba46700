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
#include "rigdiff/error.hpp"
#include "rigdiff/geom.hpp"
#include "rigdiff/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace rigdiff;

namespace {

Mat4 naive_product(const Mat4& a, const Mat4& b)
{
    Mat4 c;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) {
                s += a(i, k) * b(k, j);
            }
            c(i, j) = s;
        }
    }
    return c;
}

Mat4 random_mat(Rng& rng)
{
    Mat4 m;
    for (double& v : m.a) {
        v = rng.uniform(-2.0, 2.0);
    }
    return m;
}

TransformTRS random_trs(Rng& rng)
{
    TransformTRS t;
    for (int i = 0; i < 6; ++i) {
        t.v[i] = rng.uniform(-1.0, 1.0);
    }
    for (int i = 6; i < 9; ++i) {
        t.v[i] = rng.uniform(0.5, 1.5);
    }
    return t;
}

Mat4 translation(double x, double y, double z)
{
    return trs_to_matrix(TransformTRS::from({x, y, z}));
}

void expect_near(const Vec3& a, const Vec3& b, double tol)
{
    EXPECT_NEAR(a.x, b.x, tol);
    EXPECT_NEAR(a.y, b.y, tol);
    EXPECT_NEAR(a.z, b.z, tol);
}

} // namespace

TEST(TrsToMatrix, NeutralIsExactIdentity)
{
    EXPECT_EQ(trs_to_matrix(TransformTRS::neutral()), Mat4::identity());
}

TEST(TrsToMatrix, QuarterTurnAboutX)
{
    const Mat4 m = trs_to_matrix(TransformTRS::from({}, {std::numbers::pi / 2, 0, 0}));
    expect_near(transform_point(m, {0, 1, 0}), {0, 0, 1}, 1e-15);
}

TEST(TrsToMatrix, TranslateAfterScale)
{
    TransformTRS t;
    t[Channel::tx] = 1.0;
    t[Channel::sx] = 2.0;
    // T * S applied to (1, 0, 0): scale first, then translate.
    const Mat4 hand = naive_product(translation(1, 0, 0), [] {
        Mat4 s = Mat4::identity();
        s(0, 0) = 2.0;
        return s;
    }());
    EXPECT_EQ(trs_to_matrix(t), hand);
    expect_near(transform_point(trs_to_matrix(t), {1, 0, 0}), {3, 0, 0}, 0.0);
}

TEST(TrsToMatrix, ComposesInTzRyRxSOrder)
{
    Rng rng(5);
    const TransformTRS t = random_trs(rng);
    Mat4 s = Mat4::identity();
    s(0, 0) = t[Channel::sx];
    s(1, 1) = t[Channel::sy];
    s(2, 2) = t[Channel::sz];
    auto rot = [](int axis, double a) {
        Mat4 r = Mat4::identity();
        const int i = (axis + 1) % 3, j = (axis + 2) % 3;
        r(i, i) = std::cos(a);
        r(i, j) = -std::sin(a);
        r(j, i) = std::sin(a);
        r(j, j) = std::cos(a);
        return r;
    };
    const Mat4 oracle = naive_product(
        naive_product(naive_product(naive_product(translation(t.v[0], t.v[1], t.v[2]), rot(2, t[Channel::rz])),
                                    rot(1, t[Channel::ry])),
                      rot(0, t[Channel::rx])),
        s);
    const Mat4 m = trs_to_matrix(t);
    for (int k = 0; k < 16; ++k) {
        EXPECT_NEAR(m.a[k], oracle.a[k], 1e-14);
    }
}

TEST(TrsToMatrix, BottomRowAndDeterminant)
{
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const TransformTRS t = random_trs(rng);
        const Mat4 m = trs_to_matrix(t);
        EXPECT_EQ(m(3, 0), 0.0);
        EXPECT_EQ(m(3, 1), 0.0);
        EXPECT_EQ(m(3, 2), 0.0);
        EXPECT_EQ(m(3, 3), 1.0);
        EXPECT_NEAR(det3(m), t[Channel::sx] * t[Channel::sy] * t[Channel::sz], 1e-9);
    }
}

TEST(TrsToMatrix, RejectsBadInput)
{
    TransformTRS t;
    t[Channel::ry] = std::nan("");
    EXPECT_THROW(trs_to_matrix(t), ValidationError);
    TransformTRS s;
    s[Channel::sz] = 0.0;
    EXPECT_THROW(trs_to_matrix(s), ValidationError);
}

TEST(TrsToMatrix, JacobianMatchesFiniteDifferences)
{
    Rng rng(21);
    const double h = 1e-5;
    for (int trial = 0; trial < 5; ++trial) {
        const TransformTRS t = random_trs(rng);
        const auto jac = trs_to_matrix_jacobian(t);
        for (int c = 0; c < 9; ++c) {
            TransformTRS p = t, m = t;
            p.v[c] += h;
            m.v[c] -= h;
            const Mat4 mp = trs_to_matrix(p), mm = trs_to_matrix(m);
            for (int k = 0; k < 16; ++k) {
                const double fd = (mp.a[k] - mm.a[k]) / (2 * h);
                const double an = jac[c].a[k];
                if (std::max(std::abs(fd), std::abs(an)) > 1e-6) {
                    EXPECT_LE(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)), 1e-5)
                        << "channel " << channel_names[c] << " entry " << k;
                }
            }
        }
    }
}

TEST(TrsToMatrix, VjpIsJacobianContraction)
{
    Rng rng(3);
    const TransformTRS t = random_trs(rng);
    const Mat4 dm = random_mat(rng);
    const auto jac = trs_to_matrix_jacobian(t);
    const auto g = trs_to_matrix_vjp(t, dm);
    for (int c = 0; c < 9; ++c) {
        double s = 0.0;
        for (int k = 0; k < 16; ++k) {
            s += jac[c].a[k] * dm.a[k];
        }
        EXPECT_NEAR(g[c], s, 1e-12);
    }
}

TEST(Compose, IdentityAndTranslations)
{
    Rng rng(1);
    const Mat4 m = random_mat(rng);
    EXPECT_EQ(compose(Mat4::identity(), m), m);
    EXPECT_EQ(compose(translation(1, 0, 0), translation(0, 1, 0)), translation(1, 1, 0));
}

TEST(Compose, MatchesTripleLoop)
{
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const Mat4 a = random_mat(rng), b = random_mat(rng);
        const Mat4 c = compose(a, b), o = naive_product(a, b);
        for (int k = 0; k < 16; ++k) {
            EXPECT_NEAR(c.a[k], o.a[k], 1e-14);
        }
    }
}

TEST(Compose, Associative)
{
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        const Mat4 a = random_mat(rng), b = random_mat(rng), c = random_mat(rng);
        const Mat4 l = compose(compose(a, b), c), r = compose(a, compose(b, c));
        for (int k = 0; k < 16; ++k) {
            EXPECT_NEAR(l.a[k], r.a[k], 1e-9);
        }
    }
}

TEST(TransformPoint, IdentityTranslationAndPerspective)
{
    const Vec3 p{0.3, -1.2, 4.0};
    EXPECT_EQ(transform_point(Mat4::identity(), p), p);
    EXPECT_EQ(transform_point(translation(1, 2, 3), {0, 0, 0}), (Vec3{1, 2, 3}));

    // Projective matrix with w = z: (x, y, z) -> (2x/z, 2y/z, 1 - 1/z) worked by hand.
    Mat4 persp;
    persp(0, 0) = 2.0;
    persp(1, 1) = 2.0;
    persp(2, 2) = 1.0;
    persp(2, 3) = -1.0;
    persp(3, 2) = 1.0;
    expect_near(transform_point(persp, {1.0, 2.0, 4.0}), {0.5, 1.0, 0.75}, 1e-15);
}

TEST(TransformPoint, DegenerateWIsAnError)
{
    Mat4 m = Mat4::identity();
    m(3, 3) = 0.0;
    EXPECT_THROW(transform_point(m, {1, 2, 3}), NumericalError);
}

TEST(AffineInverse, RoundTrip)
{
    Rng rng(8);
    for (int i = 0; i < 10; ++i) {
        const Mat4 m = trs_to_matrix(random_trs(rng));
        const Mat4 r = compose(m, affine_inverse(m));
        for (int k = 0; k < 16; ++k) {
            EXPECT_NEAR(r.a[k], Mat4::identity().a[k], 1e-12);
        }
    }
}

TEST(Convention, ColumnVectorsRowMajor)
{
    // Translation lives in the last column of a row-major matrix.
    const Mat4 t = translation(1, 2, 3);
    EXPECT_EQ(t.a[3], 1.0);
    EXPECT_EQ(t.a[7], 2.0);
    EXPECT_EQ(t.a[11], 3.0);
    EXPECT_EQ(t.translation_part(), (Vec3{1, 2, 3}));
    // Right-handed: a positive z turn takes +x to +y.
    expect_near(transform_point(euler_rotation(0, 0, std::numbers::pi / 2), {1, 0, 0}), {0, 1, 0}, 1e-15);
}
