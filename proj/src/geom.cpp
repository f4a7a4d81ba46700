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
#include "rigdiff/geom.hpp"

#include "rigdiff/error.hpp"

#include <string>

namespace rigdiff {

Mat4 compose(const Mat4& a, const Mat4& b)
{
    Mat4 r;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j) + a(i, 3) * b(3, j);
        }
    }
    return r;
}

Mat4 operator+(const Mat4& a, const Mat4& b)
{
    Mat4 r;
    for (int i = 0; i < 16; ++i) {
        r.a[i] = a.a[i] + b.a[i];
    }
    return r;
}

Mat4 operator*(double s, const Mat4& m)
{
    Mat4 r;
    for (int i = 0; i < 16; ++i) {
        r.a[i] = s * m.a[i];
    }
    return r;
}

Mat4 transpose(const Mat4& m)
{
    Mat4 r;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            r(i, j) = m(j, i);
        }
    }
    return r;
}

double det3(const Mat4& m)
{
    return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
           m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

Mat4 affine_inverse(const Mat4& m)
{
    const double d = det3(m);
    if (!(std::abs(d) > 1e-300)) {
        throw NumericalError("affine_inverse: singular linear part");
    }
    Mat4 r;
    // Adjugate divided by the determinant.
    r(0, 0) = (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / d;
    r(0, 1) = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / d;
    r(0, 2) = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / d;
    r(1, 0) = (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / d;
    r(1, 1) = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / d;
    r(1, 2) = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / d;
    r(2, 0) = (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / d;
    r(2, 1) = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / d;
    r(2, 2) = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / d;
    const Vec3 t = m.translation_part();
    const Vec3 it = apply_linear(r, t);
    r(0, 3) = -it.x;
    r(1, 3) = -it.y;
    r(2, 3) = -it.z;
    r(3, 3) = 1.0;
    return r;
}

Vec3 transform_point(const Mat4& m, const Vec3& p)
{
    const double w = m(3, 0) * p.x + m(3, 1) * p.y + m(3, 2) * p.z + m(3, 3);
    if (!(std::abs(w) >= 1e-12)) {
        throw NumericalError("transform_point: degenerate homogeneous coordinate w=" + std::to_string(w));
    }
    const Vec3 q = apply_affine(m, p);
    if (w == 1.0) {
        return q;
    }
    return {q.x / w, q.y / w, q.z / w};
}

namespace {

struct Trig
{
    double cx, sx, cy, sy, cz, sz;
};

Trig trig(double rx, double ry, double rz)
{
    return {std::cos(rx), std::sin(rx), std::cos(ry), std::sin(ry), std::cos(rz), std::sin(rz)};
}

Mat4 from3(double m00, double m01, double m02, double m10, double m11, double m12, double m20, double m21,
           double m22, double m33)
{
    Mat4 m;
    m(0, 0) = m00;
    m(0, 1) = m01;
    m(0, 2) = m02;
    m(1, 0) = m10;
    m(1, 1) = m11;
    m(1, 2) = m12;
    m(2, 0) = m20;
    m(2, 1) = m21;
    m(2, 2) = m22;
    m(3, 3) = m33;
    return m;
}

Mat4 rot_x(double c, double s) { return from3(1, 0, 0, 0, c, -s, 0, s, c, 1); }
Mat4 rot_y(double c, double s) { return from3(c, 0, s, 0, 1, 0, -s, 0, c, 1); }
Mat4 rot_z(double c, double s) { return from3(c, -s, 0, s, c, 0, 0, 0, 1, 1); }
Mat4 drot_x(double c, double s) { return from3(0, 0, 0, 0, -s, -c, 0, c, -s, 0); }
Mat4 drot_y(double c, double s) { return from3(-s, 0, c, 0, 0, 0, -c, 0, -s, 0); }
Mat4 drot_z(double c, double s) { return from3(-s, -c, 0, c, -s, 0, 0, 0, 0, 0); }

void check_trs(const TransformTRS& t)
{
    for (int i = 0; i < 9; ++i) {
        if (!std::isfinite(t.v[i])) {
            throw ValidationError(std::string("trs_to_matrix: non-finite channel ") + channel_names[i]);
        }
    }
    for (int i = 6; i < 9; ++i) {
        if (!(t.v[i] > 0.0)) {
            throw ValidationError(std::string("trs_to_matrix: non-positive scale ") + channel_names[i]);
        }
    }
}

} // namespace

Mat4 euler_rotation(double rx, double ry, double rz)
{
    const Trig g = trig(rx, ry, rz);
    return compose(rot_z(g.cz, g.sz), compose(rot_y(g.cy, g.sy), rot_x(g.cx, g.sx)));
}

std::array<Mat4, 3> euler_rotation_derivatives(double rx, double ry, double rz)
{
    const Trig g = trig(rx, ry, rz);
    const Mat4 Rx = rot_x(g.cx, g.sx);
    const Mat4 Ry = rot_y(g.cy, g.sy);
    const Mat4 Rz = rot_z(g.cz, g.sz);
    return {compose(Rz, compose(Ry, drot_x(g.cx, g.sx))), compose(Rz, compose(drot_y(g.cy, g.sy), Rx)),
            compose(drot_z(g.cz, g.sz), compose(Ry, Rx))};
}

Mat4 trs_to_matrix(const TransformTRS& t)
{
    check_trs(t);
    Mat4 m = euler_rotation(t.v[3], t.v[4], t.v[5]);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            m(r, c) *= t.v[6 + c];
        }
        m(r, 3) = t.v[r];
    }
    return m;
}

std::array<Mat4, 9> trs_to_matrix_jacobian(const TransformTRS& t)
{
    check_trs(t);
    std::array<Mat4, 9> j{};
    for (int i = 0; i < 3; ++i) {
        j[i](i, 3) = 1.0;
    }
    const auto dr = euler_rotation_derivatives(t.v[3], t.v[4], t.v[5]);
    for (int k = 0; k < 3; ++k) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                j[3 + k](r, c) = dr[k](r, c) * t.v[6 + c];
            }
        }
    }
    const Mat4 R = euler_rotation(t.v[3], t.v[4], t.v[5]);
    for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < 3; ++r) {
            j[6 + c](r, c) = R(r, c);
        }
    }
    return j;
}

std::array<double, 9> trs_to_matrix_vjp(const TransformTRS& t, const Mat4& dm)
{
    const auto dr = euler_rotation_derivatives(t.v[3], t.v[4], t.v[5]);
    const Mat4 R = euler_rotation(t.v[3], t.v[4], t.v[5]);
    std::array<double, 9> g{};
    for (int i = 0; i < 3; ++i) {
        g[i] = dm(i, 3);
    }
    for (int k = 0; k < 3; ++k) {
        double acc = 0.0;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                acc += dm(r, c) * dr[k](r, c) * t.v[6 + c];
            }
        }
        g[3 + k] = acc;
    }
    for (int c = 0; c < 3; ++c) {
        g[6 + c] = dm(0, c) * R(0, c) + dm(1, c) * R(1, c) + dm(2, c) * R(2, c);
    }
    return g;
}

} // namespace rigdiff
