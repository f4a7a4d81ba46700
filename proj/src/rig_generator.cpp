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
#include "rigdiff/rig_generator.hpp"

#include "rigdiff/error.hpp"
#include "rigdiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace rigdiff {

namespace {

constexpr double pi = std::numbers::pi;

double smoothstep(double e0, double e1, double x)
{
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double gauss(double dx, double dy, double sx, double sy)
{
    return std::exp(-0.5 * (dx * dx / (sx * sx) + dy * dy / (sy * sy)));
}

// Bone origins live on a 1/256 grid so rest chains and their inverses are exact.
double quantize(double v) { return std::round(v * 256.0) / 256.0; }

// Surface relief added along +z on the front of the head, in head units
// (the head spans y in [-1, 1]).
double relief(double x, double y)
{
    double r = 0.0;

    // Nose: a ridge that grows from the bridge to the tip, then drops off.
    const double t = std::clamp((0.25 - y) / 0.42, 0.0, 1.0);
    double amp = 0.0;
    if (y > 0.25) {
        amp = 0.02 * std::exp(-0.5 * std::pow((y - 0.25) / 0.05, 2.0));
    } else if (y >= -0.17) {
        amp = 0.02 + 0.24 * std::pow(t, 1.5);
    } else {
        amp = 0.26 * std::exp(-0.5 * std::pow((y + 0.17) / 0.045, 2.0));
    }
    const double wx = 0.045 + 0.06 * t;
    r += amp * std::exp(-0.5 * (x / wx) * (x / wx));

    for (double s : {-1.0, 1.0}) {
        r += 0.05 * gauss(x - s * 0.1, y + 0.2, 0.05, 0.04);  // nose wings
        r += -0.07 * gauss(x - s * 0.3, y - 0.2, 0.11, 0.08); // eye sockets
        r += 0.035 * gauss(x - s * 0.3, y - 0.2, 0.07, 0.04); // eyeballs
        r += 0.045 * gauss(x - s * 0.3, y - 0.37, 0.2, 0.05); // brow ridge
        r += 0.05 * gauss(x - s * 0.46, y, 0.12, 0.1);        // cheekbones
    }
    r += 0.06 * gauss(x, y + 0.44, 0.16, 0.035);  // upper lip
    r += 0.07 * gauss(x, y + 0.58, 0.14, 0.04);   // lower lip
    r -= 0.03 * gauss(x, y + 0.505, 0.22, 0.012); // mouth line
    r += 0.06 * gauss(x, y + 0.82, 0.11, 0.08);   // chin
    return r;
}

struct SurfaceSample
{
    Vec3 p;
    double fx, fy; // front-projected coordinates before relief
    double front;  // z component of the unit direction, > 0 on the face side
};

SurfaceSample surface(double theta, double psi)
{
    const Vec3 d{std::sin(theta) * std::sin(psi), std::cos(theta), std::sin(theta) * std::cos(psi)};
    Vec3 p{0.75 * d.x, 1.0 * d.y, 0.85 * d.z};
    if (p.y < -0.25) {
        p.x *= 1.0 - 0.22 * smoothstep(-0.25, -1.0, p.y);
    }
    SurfaceSample s{p, p.x, p.y, d.z};
    s.p.z += smoothstep(0.15, 0.55, d.z) * relief(p.x, p.y);
    return s;
}

Part classify(double x, double y, double front)
{
    if (front < 0.25) {
        return Part::skin;
    }
    for (double s : {-1.0, 1.0}) {
        const double ex = (x - s * 0.3) / 0.12;
        const double ey = (y - 0.2) / 0.055;
        if (ex * ex + ey * ey < 1.0) {
            return Part::eyes;
        }
    }
    for (double s : {-1.0, 1.0}) {
        const double bx = (x - s * 0.31) / 0.2;
        const double by = (y - 0.385 + 0.04 * bx * bx) / 0.04;
        if (bx * bx + by * by < 1.0) {
            return Part::brows;
        }
    }
    {
        const double mx = x / 0.28;
        const double my = (y + 0.51) / 0.1;
        if (mx * mx + my * my < 1.0) {
            return Part::mouth;
        }
    }
    if (y > -0.3 && y < 0.27) {
        double w = 0.05 + 0.1 * std::clamp((0.25 - y) / 0.5, 0.0, 1.0);
        if (y < -0.12) {
            w = 0.16;
        }
        if (std::abs(x) < w) {
            return Part::nose;
        }
    }
    return Part::skin;
}

struct Texture
{
    std::array<Vec3, 8> freq;
    std::array<double, 8> phase;
    std::array<double, 8> amp;

    explicit Texture(Rng& rng)
    {
        double total = 0.0;
        for (int k = 0; k < 8; ++k) {
            Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
            dir *= 1.0 / norm(dir);
            freq[k] = dir * rng.uniform(8.0, 30.0);
            phase[k] = rng.uniform(0.0, 2.0 * pi);
            amp[k] = 1.0 / std::sqrt(k + 1.0);
            total += amp[k];
        }
        for (auto& a : amp) {
            a /= total;
        }
    }

    double operator()(const Vec3& p) const
    {
        double t = 0.0;
        for (int k = 0; k < 8; ++k) {
            t += amp[k] * std::sin(dot(freq[k], p) + phase[k]);
        }
        return t;
    }
};

Vec3 clamp01(Vec3 c)
{
    return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
}

Vec3 albedo_for(const SurfaceSample& s, Part part, double t1, double t2)
{
    const double x = s.fx;
    const double y = s.fy;
    const Vec3 skin{0.78, 0.58, 0.48};
    switch (part) {
    case Part::brows:
        return clamp01(Vec3{0.25, 0.18, 0.13} * (1.0 + 0.15 * t1));
    case Part::eyes: {
        for (double sd : {-1.0, 1.0}) {
            const double r = std::hypot(x - sd * 0.3, y - 0.2);
            if (r < 0.02) {
                return {0.05, 0.05, 0.06};
            }
            if (r < 0.04) {
                return {0.22, 0.28, 0.36};
            }
        }
        return {0.93, 0.92, 0.9};
    }
    case Part::mouth:
        if (std::abs(y + 0.505) < 0.014) {
            return {0.4, 0.15, 0.15};
        }
        return clamp01(Vec3{0.72, 0.34, 0.34} * (1.0 + 0.1 * t1));
    case Part::nose:
        for (double sd : {-1.0, 1.0}) {
            if (std::hypot(x - sd * 0.07, y + 0.255) < 0.03) {
                return {0.3, 0.18, 0.16};
            }
        }
        return clamp01(Vec3{0.8, 0.55, 0.46} * (1.0 + 0.12 * t1) + Vec3{0.03 * t2, 0.0, -0.02 * t2});
    default:
        return clamp01(skin * (1.0 + 0.14 * t1) + Vec3{0.03 * t2, 0.0, -0.02 * t2});
    }
}

struct BoneDef
{
    const char* group;
    bool paired;
    double x, y;
    double sigma;
    const char* parent; // group name, nullptr for the head root
};

// Origins given for the +x side; paired groups are mirrored to -x.
constexpr std::array<BoneDef, 29> bone_defs{{
    {"eyebrow-head", true, 0.14, 0.37, 0.06, nullptr},
    {"eyebrow-body", true, 0.30, 0.40, 0.07, nullptr},
    {"eyebrow-tail", true, 0.47, 0.37, 0.07, nullptr},
    {"eye", true, 0.30, 0.20, 0.06, nullptr},
    {"outside-eyelid", true, 0.36, 0.245, 0.045, "eye"},
    {"inside-eyelid", true, 0.24, 0.245, 0.045, "eye"},
    {"lower-eyelid", true, 0.30, 0.15, 0.045, "eye"},
    {"inner-eye-corner", true, 0.18, 0.20, 0.04, "eye"},
    {"outer-eye-corner", true, 0.43, 0.20, 0.04, "eye"},
    {"nose-body", false, 0.0, 0.0, 0.08, nullptr},
    {"nose-bridge", false, 0.0, 0.18, 0.07, "nose-body"},
    {"nose-wing", true, 0.11, -0.20, 0.05, "nose-body"},
    {"nose-tip", false, 0.0, -0.15, 0.06, "nose-body"},
    {"nose-bottom", false, 0.0, -0.26, 0.045, "nose-body"},
    {"mouth", false, 0.0, -0.51, 0.09, nullptr},
    {"middle-upper-lip", false, 0.0, -0.43, 0.05, "mouth"},
    {"outer-upper-lip", true, 0.14, -0.45, 0.05, "mouth"},
    {"middle-lower-lip", false, 0.0, -0.59, 0.05, "mouth"},
    {"outer-lower-lip", true, 0.14, -0.57, 0.05, "mouth"},
    {"mouth-corner", true, 0.26, -0.50, 0.045, "mouth"},
    {"forehead", false, 0.0, 0.68, 0.22, nullptr},
    {"glabellum", false, 0.0, 0.36, 0.07, nullptr},
    {"cheekbone", true, 0.48, 0.02, 0.12, nullptr},
    {"risorius", true, 0.38, -0.42, 0.09, nullptr},
    {"cheek", true, 0.33, -0.17, 0.11, nullptr},
    {"jaw", false, 0.0, -0.83, 0.13, nullptr},
    {"lower-jaw", true, 0.28, -0.76, 0.11, "jaw"},
    {"mandibular", true, 0.54, -0.48, 0.12, "jaw"},
    {"outer-jaw", true, 0.66, -0.12, 0.11, "jaw"},
}};

// Struck-through channels of the identity table, bit i = channel i (tx..sz).
constexpr std::array<unsigned, 29> banned_mask{
    1u << 4, 1u << 4, 1u << 4,                                    // eyebrows: Ry
    (1u << 6) | (1u << 7) | (1u << 8),                            // eye: S
    0, 0, 0, 0, 0,                                                // eyelids, corners
    1u | (1u << 4) | (1u << 5) | (1u << 6) | (1u << 7) | (1u << 8), // nose body
    1u | (1u << 4) | (1u << 5),                                   // nose bridge
    0,                                                            // nose wing
    1u | (1u << 4) | (1u << 5),                                   // nose tip
    1u | (1u << 4) | (1u << 5),                                   // nose bottom
    1u | (1u << 4) | (1u << 5) | (1u << 6) | (1u << 7) | (1u << 8), // mouth
    1u | (1u << 4) | (1u << 5),                                   // middle upper lip
    0,                                                            // outer upper lip
    1u | (1u << 4) | (1u << 5),                                   // middle lower lip
    0, 0,                                                         // outer lower lip, mouth corner
    1u | (1u << 4) | (1u << 5),                                   // forehead
    1u | (1u << 4) | (1u << 5),                                   // glabellum
    (1u << 5) | (1u << 6) | (1u << 7) | (1u << 8),                // cheekbone
    (1u << 5) | (1u << 6) | (1u << 7) | (1u << 8),                // risorius
    (1u << 6) | (1u << 7) | (1u << 8),                            // cheek
    1u | (1u << 4) | (1u << 5),                                   // jaw
    0, 0, 0,                                                      // lower jaw, mandibular, outer jaw
};

// Landmark targets in front-projected head coordinates, dlib 68-point order.
std::array<std::pair<double, double>, 68> landmark_targets()
{
    std::array<std::pair<double, double>, 68> t{};
    for (int k = 0; k <= 16; ++k) {
        const double a = pi - k * pi / 16.0;
        t[k] = {0.66 * std::cos(a), 0.12 - 1.02 * std::sin(a)};
    }
    const double brow_x[5] = {-0.52, -0.42, -0.32, -0.22, -0.13};
    const double brow_y[5] = {0.36, 0.395, 0.41, 0.40, 0.38};
    for (int k = 0; k < 5; ++k) {
        t[17 + k] = {brow_x[k], brow_y[k]};
        t[26 - k] = {-brow_x[k], brow_y[k]};
    }
    const double nose_y[4] = {0.2, 0.08, -0.04, -0.16};
    for (int k = 0; k < 4; ++k) {
        t[27 + k] = {0.0, nose_y[k]};
    }
    const double nostril_x[5] = {-0.13, -0.065, 0.0, 0.065, 0.13};
    for (int k = 0; k < 5; ++k) {
        t[31 + k] = {nostril_x[k], k == 2 ? -0.27 : -0.255};
    }
    const std::pair<double, double> eye[6] = {{-0.43, 0.2}, {-0.35, 0.245}, {-0.25, 0.245},
                                              {-0.17, 0.2}, {-0.25, 0.155}, {-0.35, 0.155}};
    for (int k = 0; k < 6; ++k) {
        t[36 + k] = eye[k];
    }
    // Left eye mirrors the right one, starting from the inner corner.
    const int mirror_order[6] = {3, 2, 1, 0, 5, 4};
    for (int k = 0; k < 6; ++k) {
        t[42 + k] = {-eye[mirror_order[k]].first, eye[mirror_order[k]].second};
    }
    const std::pair<double, double> outer_lip[12] = {
        {-0.25, -0.5},  {-0.16, -0.44}, {-0.06, -0.415}, {0.0, -0.425}, {0.06, -0.415}, {0.16, -0.44},
        {0.25, -0.5},   {0.16, -0.58},  {0.06, -0.615},  {0.0, -0.62},  {-0.06, -0.615}, {-0.16, -0.58}};
    for (int k = 0; k < 12; ++k) {
        t[48 + k] = outer_lip[k];
    }
    const std::pair<double, double> inner_lip[8] = {{-0.19, -0.5},  {-0.08, -0.475}, {0.0, -0.475},
                                                    {0.08, -0.475}, {0.19, -0.5},    {0.08, -0.535},
                                                    {0.0, -0.535},  {-0.08, -0.535}};
    for (int k = 0; k < 8; ++k) {
        t[60 + k] = inner_lip[k];
    }
    return t;
}

struct Displacement
{
    // Expression offset fields, evaluated on front-projected coordinates.
    static Vec3 eval(int basis, double x, double y, double front)
    {
        const double fw = smoothstep(0.2, 0.5, front);
        if (fw == 0.0) {
            return {};
        }
        Vec3 d{};
        // Region below the mouth line that follows the jaw.
        const double jaw = smoothstep(-0.47, -0.62, y) * (1.0 - smoothstep(0.5, 0.72, std::abs(x)));
        switch (basis) {
        case 0: // Eye-close
            for (double s : {-1.0, 1.0}) {
                const double g = gauss(x - s * 0.3, y - 0.235, 0.1, 0.035);
                d += Vec3{0.0, -0.05 * g, 0.01 * g};
            }
            break;
        case 1: // Upper-lid-raise
            for (double s : {-1.0, 1.0}) {
                d.y += 0.03 * gauss(x - s * 0.3, y - 0.26, 0.1, 0.04);
            }
            break;
        case 2: // Lid-tighten
            for (double s : {-1.0, 1.0}) {
                d.y += 0.025 * gauss(x - s * 0.3, y - 0.15, 0.1, 0.03);
                d.y -= 0.015 * gauss(x - s * 0.3, y - 0.25, 0.1, 0.03);
                d.x -= 0.08 * (x - s * 0.3) * gauss(x - s * 0.3, y - 0.2, 0.12, 0.06);
            }
            break;
        case 3: // Inner-brow-raise
            for (double s : {-1.0, 1.0}) {
                d.y += 0.06 * gauss(x - s * 0.15, y - 0.37, 0.08, 0.06);
            }
            break;
        case 4: // Left-outer-brow-raise
            d.y += 0.06 * gauss(x - 0.47, y - 0.37, 0.1, 0.06);
            break;
        case 5: // Right-outer-brow-raise
            d.y += 0.06 * gauss(x + 0.47, y - 0.37, 0.1, 0.06);
            break;
        case 6: // Brow-Lower
            for (double s : {-1.0, 1.0}) {
                const double g = gauss(x - s * 0.3, y - 0.38, 0.18, 0.06);
                d += Vec3{-s * 0.02 * g, -0.05 * g, 0.0};
            }
            break;
        case 7: // Jaw-open
            d += Vec3{0.0, -0.16 * jaw, -0.04 * jaw};
            break;
        case 8: { // Nose-wrinkle
            const double g = gauss(x, y - 0.1, 0.12, 0.1);
            d += Vec3{0.0, 0.025 * g, -0.01 * g};
            break;
        }
        case 9: // Upper-lip-raise
            d.y += 0.04 * gauss(x, y + 0.43, 0.18, 0.04);
            break;
        case 10: // Down-lip-down
            d.y -= 0.04 * gauss(x, y + 0.59, 0.16, 0.04);
            break;
        case 11: // Lip-corner-pull
            for (double s : {-1.0, 1.0}) {
                const double g = gauss(x - s * 0.25, y + 0.5, 0.08, 0.06);
                d += Vec3{s * 0.04 * g, 0.03 * g, 0.0};
            }
            break;
        case 12: { // Left-mouth-press
            const double g = gauss(x - 0.22, y + 0.5, 0.07, 0.06);
            d += Vec3{-0.03 * g, 0.0, -0.02 * g};
            break;
        }
        case 13: { // Right-mouth-press
            const double g = gauss(x + 0.22, y + 0.5, 0.07, 0.06);
            d += Vec3{0.03 * g, 0.0, -0.02 * g};
            break;
        }
        case 14: { // Lip-pucker
            const double g = gauss(x, y + 0.51, 0.2, 0.09);
            d += Vec3{-0.3 * x * g, 0.0, 0.05 * g};
            break;
        }
        case 15: // Lip-stretch
            d.x += 0.35 * x * gauss(x, y + 0.5, 0.22, 0.06);
            break;
        case 16: // Lip-upper-close
            d.y -= 0.03 * gauss(x, y + 0.45, 0.15, 0.03);
            break;
        case 17: // Lip-lower-close
            d.y += 0.03 * gauss(x, y + 0.57, 0.15, 0.03);
            break;
        case 18: // Puff
            for (double s : {-1.0, 1.0}) {
                const double g = gauss(x - s * 0.38, y + 0.25, 0.14, 0.14);
                d += Vec3{s * 0.035 * g, 0.0, 0.035 * g};
            }
            break;
        case 19: // Lip-corner-depress
            for (double s : {-1.0, 1.0}) {
                d.y -= 0.035 * gauss(x - s * 0.25, y + 0.52, 0.08, 0.06);
            }
            break;
        case 20: // Jaw-left
            d.x += 0.06 * jaw;
            break;
        case 21: // Jaw-right
            d.x -= 0.06 * jaw;
            break;
        default:
            break;
        }
        return d * fw;
    }
};

} // namespace

FaceRig generate_default_rig(std::uint64_t seed, const RigGeneratorOptions& options)
{
    if (options.rings < 4 || options.columns < 8) {
        throw ValidationError("generate_default_rig: mesh resolution too small");
    }
    Rng rng(seed);
    const Texture tex1(rng);
    const Texture tex2(rng);

    FaceRig rig;
    rig.name = "rigdiff-default-head";

    // Mesh: latitude rings plus two poles; longitude warped so the face gets
    // roughly half of the columns.
    const int nt = options.rings;
    const int np = options.columns;
    std::vector<SurfaceSample> samples;
    samples.push_back(surface(0.0, 0.0));
    for (int i = 1; i < nt; ++i) {
        const double theta = pi * i / nt;
        for (int j = 0; j < np; ++j) {
            const double s = -1.0 + 2.0 * j / np;
            const double psi = pi * (0.4 * s + 0.6 * s * s * s);
            samples.push_back(surface(theta, psi));
        }
    }
    samples.push_back(surface(pi, 0.0));
    const int top = 0;
    const int bottom = static_cast<int>(samples.size()) - 1;
    auto idx = [np](int ring, int col) { return 1 + (ring - 1) * np + ((col % np) + np) % np; };
    for (int j = 0; j < np; ++j) {
        rig.triangles.push_back({top, idx(1, j), idx(1, j + 1)});
    }
    for (int i = 1; i + 1 < nt; ++i) {
        for (int j = 0; j < np; ++j) {
            rig.triangles.push_back({idx(i, j), idx(i + 1, j), idx(i, j + 1)});
            rig.triangles.push_back({idx(i, j + 1), idx(i + 1, j), idx(i + 1, j + 1)});
        }
    }
    for (int j = 0; j < np; ++j) {
        rig.triangles.push_back({idx(nt - 1, j), bottom, idx(nt - 1, j + 1)});
    }

    for (const auto& s : samples) {
        rig.vertices.push_back(s.p);
        const Part part = classify(s.fx, s.fy, s.front);
        rig.parts.push_back(part);
        rig.albedo.push_back(albedo_for(s, part, tex1(s.p), tex2(s.p)));
    }
    const std::size_t nv = rig.vertices.size();

    Vec3 centroid{};
    for (const auto& v : rig.vertices) {
        centroid += v;
    }
    rig.pose_pivot = centroid * (1.0 / static_cast<double>(nv));

    // Skeleton: head root, then parent groups before their children.
    auto surface_z = [&](double x, double y) {
        double best = std::numeric_limits<double>::max();
        double z = 0.0;
        for (const auto& s : samples) {
            if (s.front < 0.2) {
                continue;
            }
            const double d = std::hypot(s.fx - x, s.fy - y);
            if (d < best) {
                best = d;
                z = s.p.z;
            }
        }
        return z;
    };

    struct Placed
    {
        int def;
        double side;
        Vec3 origin;
    };
    std::vector<Placed> placed;
    std::vector<Vec3> origins{{0.0, 0.0, 0.0}};
    rig.skeleton.bones.push_back(Bone{"head", -1, TransformTRS::neutral(), Mat4::identity()});
    std::vector<std::array<int, 2>> group_bones(bone_defs.size(), {-1, -1});
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t g = 0; g < bone_defs.size(); ++g) {
            const BoneDef& d = bone_defs[g];
            if ((d.parent == nullptr) != (pass == 0)) {
                continue;
            }
            int parent_group = -1;
            if (d.parent != nullptr) {
                for (std::size_t h = 0; h < bone_defs.size(); ++h) {
                    if (std::string(bone_defs[h].group) == d.parent) {
                        parent_group = static_cast<int>(h);
                    }
                }
            }
            const int sides = d.paired ? 2 : 1;
            for (int k = 0; k < sides; ++k) {
                const double side = k == 0 ? 1.0 : -1.0;
                const double x = side * d.x;
                const double inset = std::max(0.02, 0.5 * d.sigma);
                const Vec3 origin{quantize(x), quantize(d.y), quantize(surface_z(x, d.y) - inset)};
                const int parent = parent_group < 0 ? 0 : group_bones[parent_group][bone_defs[parent_group].paired ? k : 0];
                const Vec3 rel = origin - origins[parent];
                std::string name = d.group;
                if (d.paired) {
                    name += k == 0 ? "-L" : "-R";
                }
                group_bones[g][k] = static_cast<int>(rig.skeleton.bones.size());
                rig.skeleton.bones.push_back(Bone{name, parent, TransformTRS::from(rel), Mat4::identity()});
                origins.push_back(origin);
                placed.push_back({static_cast<int>(g), side, origin});
            }
        }
    }
    bind_rest_pose(rig.skeleton);

    // Skin binding: Gaussian affinity to each part bone plus a constant root
    // affinity, top four kept, weights on a 2^-16 grid summing to exactly 1.
    rig.skin.bone.resize(nv);
    rig.skin.weight.resize(nv);
    const std::size_t nb = rig.skeleton.size();
    for (std::size_t v = 0; v < nv; ++v) {
        std::vector<std::pair<double, int>> aff;
        aff.reserve(nb);
        aff.emplace_back(0.02, 0);
        for (std::size_t b = 1; b < nb; ++b) {
            const double sigma = bone_defs[placed[b - 1].def].sigma;
            const Vec3 d = rig.vertices[v] - origins[b];
            aff.emplace_back(std::exp(-0.5 * dot(d, d) / (sigma * sigma)), static_cast<int>(b));
        }
        std::stable_sort(aff.begin(), aff.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        double total = 0.0;
        for (int k = 0; k < 4; ++k) {
            total += aff[k].first;
        }
        std::array<long, 4> q{};
        long sum = 0;
        for (int k = 0; k < 4; ++k) {
            q[k] = std::lround(aff[k].first / total * 65536.0);
            sum += q[k];
        }
        q[0] += 65536 - sum;
        for (int k = 0; k < 4; ++k) {
            rig.skin.bone[v][k] = aff[k].second;
            rig.skin.weight[v][k] = static_cast<double>(q[k]) / 65536.0;
        }
    }

    // Expression bases.
    for (std::size_t j = 0; j < expression_labels.size(); ++j) {
        rig.blendshapes.labels.emplace_back(expression_labels[j]);
        std::vector<Vec3> offsets(nv);
        for (std::size_t v = 0; v < nv; ++v) {
            offsets[v] = Displacement::eval(static_cast<int>(j), samples[v].fx, samples[v].fy, samples[v].front);
        }
        rig.blendshapes.offsets.push_back(std::move(offsets));
    }

    // Controller table: 29 groups x 9 channels in table order.
    for (std::size_t g = 0; g < bone_defs.size(); ++g) {
        const BoneDef& d = bone_defs[g];
        const double t_half = std::min(0.2, 0.5 * d.sigma);
        for (int ch = 0; ch < 9; ++ch) {
            Controller c;
            c.group = d.group;
            c.bone = group_bones[g][0];
            c.mirror_bone = d.paired ? group_bones[g][1] : -1;
            c.channel = static_cast<Channel>(ch);
            c.banned = (banned_mask[g] >> ch) & 1u;
            if (ch < 3) {
                c.lo = -t_half;
                c.hi = t_half;
            } else if (ch < 6) {
                c.lo = -0.3;
                c.hi = 0.3;
            } else {
                c.lo = 0.7;
                c.hi = 1.3;
            }
            rig.schema.controllers.push_back(c);
        }
    }

    // Landmarks: nearest unused front vertex to each target.
    std::vector<bool> used(nv, false);
    for (const auto& [tx, ty] : landmark_targets()) {
        double best = std::numeric_limits<double>::max();
        int pick = -1;
        for (std::size_t v = 0; v < nv; ++v) {
            if (used[v] || samples[v].front < 0.25) {
                continue;
            }
            const double d = std::hypot(samples[v].fx - tx, samples[v].fy - ty);
            if (d < best) {
                best = d;
                pick = static_cast<int>(v);
            }
        }
        used[pick] = true;
        rig.landmarks.push_back(pick);
    }

    rig.validate();
    return rig;
}

} // namespace rigdiff
