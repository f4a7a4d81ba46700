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

#ifndef RIGDIFF_GEOM_HPP
#define RIGDIFF_GEOM_HPP

#include <array>
#include <cmath>
#include <cstddef>

namespace rigdiff {

/**
 * Conventions used throughout the library:
 *  - column vectors, p' = M * p;
 *  - right-handed axes, y up, the face looks towards +z;
 *  - Mat4 stores its 16 entries row-major, m(r, c) = m.a[4 * r + c];
 *  - Euler rotations are applied as Rz * Ry * Rx (x first).
 */
struct Vec3
{
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3& operator+=(const Vec3& o)
    {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3& operator-=(const Vec3& o)
    {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    Vec3& operator*=(double s)
    {
        x *= s;
        y *= s;
        z *= s;
        return *this;
    }

    friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
inline Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
inline Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
inline Vec3 operator*(Vec3 a, double s) { return a *= s; }
inline Vec3 operator*(double s, Vec3 a) { return a *= s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b)
{
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline bool is_finite(const Vec3& a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

struct Mat4
{
    std::array<double, 16> a{};

    double& operator()(int r, int c) { return a[4 * r + c]; }
    double operator()(int r, int c) const { return a[4 * r + c]; }

    static Mat4 identity()
    {
        Mat4 m;
        m(0, 0) = m(1, 1) = m(2, 2) = m(3, 3) = 1.0;
        return m;
    }
    static Mat4 zero() { return Mat4{}; }
    static Mat4 translation(const Vec3& t)
    {
        Mat4 m = identity();
        m(0, 3) = t.x;
        m(1, 3) = t.y;
        m(2, 3) = t.z;
        return m;
    }

    Vec3 translation_part() const { return {a[3], a[7], a[11]}; }

    friend bool operator==(const Mat4&, const Mat4&) = default;
};

/// Standard matrix product a * b.
Mat4 compose(const Mat4& a, const Mat4& b);
Mat4 operator+(const Mat4& a, const Mat4& b);
Mat4 operator*(double s, const Mat4& m);
Mat4 transpose(const Mat4& m);

/**
 * Inverse of an affine matrix (bottom row 0 0 0 1). Exact for pure
 * translations with representable offsets, which the bind pose relies on.
 */
Mat4 affine_inverse(const Mat4& m);

/**
 * Homogeneous transform of p (w = 1), divided by the resulting w.
 * Throws NumericalError when |w| < 1e-12.
 */
Vec3 transform_point(const Mat4& m, const Vec3& p);

/// Affine part only: upper 3x4 block applied to (p, 1). No division.
inline Vec3 apply_affine(const Mat4& m, const Vec3& p)
{
    return {m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2) * p.z + m(0, 3),
            m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2) * p.z + m(1, 3),
            m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2) * p.z + m(2, 3)};
}

/// Upper-left 3x3 block applied to v.
inline Vec3 apply_linear(const Mat4& m, const Vec3& v)
{
    return {m(0, 0) * v.x + m(0, 1) * v.y + m(0, 2) * v.z, m(1, 0) * v.x + m(1, 1) * v.y + m(1, 2) * v.z,
            m(2, 0) * v.x + m(2, 1) * v.y + m(2, 2) * v.z};
}

/// Transposed upper-left 3x3 block applied to v (used by adjoints).
inline Vec3 apply_linear_transposed(const Mat4& m, const Vec3& v)
{
    return {m(0, 0) * v.x + m(1, 0) * v.y + m(2, 0) * v.z, m(0, 1) * v.x + m(1, 1) * v.y + m(2, 1) * v.z,
            m(0, 2) * v.x + m(1, 2) * v.y + m(2, 2) * v.z};
}

double det3(const Mat4& m);

/// Channel order of a TransformTRS when viewed as 9 reals.
enum class Channel : int { tx = 0, ty, tz, rx, ry, rz, sx, sy, sz };

inline constexpr std::array<const char*, 9> channel_names{"tx", "ty", "tz", "rx", "ry", "rz", "sx", "sy", "sz"};

/// Neutral value of a channel: 1 for scales, 0 otherwise.
inline constexpr double channel_neutral(Channel c) { return static_cast<int>(c) >= 6 ? 1.0 : 0.0; }

/**
 * Local translation, Euler rotation (radians) and scale of a bone.
 * Scales must be strictly positive.
 */
struct TransformTRS
{
    std::array<double, 9> v{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0};

    double& operator[](Channel c) { return v[static_cast<int>(c)]; }
    double operator[](Channel c) const { return v[static_cast<int>(c)]; }

    static TransformTRS neutral() { return {}; }
    static TransformTRS from(const Vec3& t, const Vec3& r = {}, const Vec3& s = {1.0, 1.0, 1.0})
    {
        return {{t.x, t.y, t.z, r.x, r.y, r.z, s.x, s.y, s.z}};
    }

    friend bool operator==(const TransformTRS&, const TransformTRS&) = default;
};

/// Rotation Rz(rz) * Ry(ry) * Rx(rx) as an affine matrix.
Mat4 euler_rotation(double rx, double ry, double rz);

/// Partial derivatives of euler_rotation with respect to rx, ry, rz.
std::array<Mat4, 3> euler_rotation_derivatives(double rx, double ry, double rz);

/**
 * T * Rz * Ry * Rx * S. Throws ValidationError on non-finite input or
 * non-positive scale.
 */
Mat4 trs_to_matrix(const TransformTRS& t);

/// d(trs_to_matrix)/d(channel) for each of the 9 channels.
std::array<Mat4, 9> trs_to_matrix_jacobian(const TransformTRS& t);

/**
 * Vector-Jacobian product of trs_to_matrix: returns sum_ij dm(i,j) * dM(i,j)/dchannel
 * for each channel.
 */
std::array<double, 9> trs_to_matrix_vjp(const TransformTRS& t, const Mat4& dm);

} // namespace rigdiff

#endif // RIGDIFF_GEOM_HPP
