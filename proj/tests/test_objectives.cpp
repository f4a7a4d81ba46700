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
#include "rigdiff/objectives.hpp"
#include "rigdiff/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace rigdiff;
using rigdiff::test::default_rig;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0)
{
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return v;
}

std::vector<std::array<double, 2>> random_points(Rng& rng)
{
    std::vector<std::array<double, 2>> p(68);
    for (auto& q : p) {
        q = {rng.uniform(0, 128), rng.uniform(0, 128)};
    }
    return p;
}

FacialParams random_params(Rng& rng)
{
    FacialParams p = FacialParams::neutral();
    for (double& v : p.idt) {
        v = rng.uniform();
    }
    for (double& v : p.exp) {
        v = rng.uniform();
    }
    for (std::size_t i = 0; i < pose_dim; ++i) {
        p.pose[i] = rng.uniform(-1, 1) * pose_limit(i);
    }
    return p;
}

Image random_image(Rng& rng, int w, int h)
{
    Image img = Image::filled(w, h, 0.0);
    for (double& v : img.data) {
        v = rng.uniform();
    }
    return img;
}

double sum_sq(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return s;
}

double l1(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += std::abs(a[i] - b[i]);
    }
    return s;
}

} // namespace

TEST(IdentityLoss, CosineCases)
{
    const std::vector<double> a{1.0, 2.0, -0.5};
    EXPECT_NEAR(identity_loss(a, a), 0.0, 1e-15);
    EXPECT_NEAR(identity_loss({1.0, 0.0, 0.0}, {0.0, 3.0, 0.0}), 1.0, 1e-15);
    EXPECT_NEAR(identity_loss(a, {-2.0, -4.0, 1.0}), 2.0, 1e-15);
    EXPECT_THROW(identity_loss({0.0, 0.0}, {1.0, 0.0}), NumericalError);
    EXPECT_THROW(identity_loss({1.0, 0.0}, {1.0, 0.0, 0.0}), ValidationError);
}

TEST(IdentityLoss, ScaleInvariantAndGradient)
{
    Rng rng(1);
    const auto a = random_vec(rng, 32), b = random_vec(rng, 32);
    std::vector<double> a10 = a, b10 = b;
    for (double& v : a10) {
        v *= 10.0;
    }
    for (double& v : b10) {
        v *= 10.0;
    }
    const double base = identity_loss(a, b);
    EXPECT_LT(std::abs(identity_loss(a10, b) - base), 1e-9);
    EXPECT_LT(std::abs(identity_loss(a, b10) - base), 1e-9);

    std::vector<double> g;
    identity_loss(a, b, &g);
    for (std::size_t i = 0; i < b.size(); ++i) {
        std::vector<double> p = b, m = b;
        p[i] += 1e-6;
        m[i] -= 1e-6;
        EXPECT_NEAR(g[i], (identity_loss(a, p) - identity_loss(a, m)) / 2e-6, 1e-8);
    }
}

TEST(IdentityLoss, ImagesThroughProvider)
{
    const FaceRig& rig = default_rig();
    const Camera cam = Camera::for_size(128, 128);
    const Providers prov = Providers::standard(rig, cam);
    Rng rng(2);
    const Image img = random_image(rng, 128, 128);
    EXPECT_NEAR(identity_loss(img, img, *prov.recg), 0.0, 1e-15);
    EXPECT_THROW(identity_loss(img, Image::filled(64, 64, 0.5), *prov.recg), ValidationError);
}

TEST(ContentLoss, Arithmetic)
{
    std::vector<double> a(content_dim, 0.3);
    EXPECT_EQ(content_loss(a, a), 0.0);
    std::vector<double> b = a;
    for (std::size_t i = 2 * 1024; i < 3 * 1024; ++i) {
        b[i] += 0.1;
    }
    EXPECT_NEAR(content_loss(a, b), 102.4, 1e-9);
    EXPECT_THROW(content_loss(a, std::vector<double>(content_dim - 1024, 0.0)), ValidationError);

    Rng rng(3);
    const auto x = random_vec(rng, content_dim, 0, 1), y = random_vec(rng, content_dim, 0, 1);
    EXPECT_NEAR(content_loss(x, y), l1(x, y), 1e-9);
}

TEST(LandmarkLoss, WeightedL1)
{
    Rng rng(4);
    const LandmarkSet t = LandmarkSet::with_default_weights(random_points(rng));
    EXPECT_EQ(landmark_loss(t, t.points), 0.0);

    auto eye = t.points;
    eye[36][0] += 1.0;
    EXPECT_DOUBLE_EQ(landmark_loss(t, eye), 5.0);

    auto jaw = t.points;
    jaw[5][1] += 2.0;
    EXPECT_DOUBLE_EQ(landmark_loss(t, jaw), 2.0);

    EXPECT_THROW(landmark_loss(t, std::vector<std::array<double, 2>>(67)), ValidationError);
}

TEST(LandmarkSet, DefaultWeights)
{
    const auto w = LandmarkSet::default_weights();
    ASSERT_EQ(w.size(), 68u);
    for (std::size_t i = 0; i < 68; ++i) {
        EXPECT_EQ(w[i], i >= 27 ? 5.0 : 1.0) << i;
    }
    LandmarkSet bad = LandmarkSet::with_default_weights(std::vector<std::array<double, 2>>(68));
    bad.weights[3] = 0.0;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(LoopbackLoss, ConcatenatedL1)
{
    Rng rng(5);
    const FacialParams a = random_params(rng);
    EXPECT_EQ(loopback_loss(a, a), 0.0);
    FacialParams b = a;
    b.idt[17] += 0.3;
    EXPECT_NEAR(loopback_loss(a, b), 0.3, 1e-15);

    const FacialParams c = random_params(rng);
    EXPECT_NEAR(loopback_loss(a, c), l1(a.flatten(), c.flatten()), 1e-12);

    FacialParams d = a;
    d.exp.pop_back();
    EXPECT_THROW(loopback_loss(a, d), ValidationError);
}

TEST(GanLoss, ConstantDiscriminator)
{
    const std::vector<double> half(16, 0.5);
    EXPECT_NEAR(gan_loss(half, half), -2.0 * std::log(2.0), 1e-12);
}

TEST(GanLoss, ClampEndpoints)
{
    const double v = gan_loss({1.0, 2.0}, {0.0, -1.0});
    EXPECT_NEAR(v, 2.0 * std::log(1.0 - 1e-7), 1e-15);
    EXPECT_LE(v, 0.0);
    EXPECT_THROW(gan_loss({}, {0.5}), ValidationError);
}

TEST(GanLoss, DirectFormulaAndGradients)
{
    Rng rng(6);
    const auto r = random_vec(rng, 9, 0.01, 0.99), p = random_vec(rng, 7, 0.01, 0.99);
    double oracle = 0.0;
    for (double x : r) {
        oracle += std::log(x) / 9.0;
    }
    for (double x : p) {
        oracle += std::log(1.0 - x) / 7.0;
    }
    std::vector<double> gr, gp;
    EXPECT_NEAR(gan_loss(r, p, &gr, &gp), oracle, 1e-12);
    for (std::size_t i = 0; i < r.size(); ++i) {
        EXPECT_NEAR(gr[i], 1.0 / (9.0 * r[i]), 1e-12);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_NEAR(gp[i], -1.0 / (7.0 * (1.0 - p[i])), 1e-12);
    }
}

TEST(SimilarityTotal, WeightedSum)
{
    const LossWeights w;
    EXPECT_EQ(similarity_total({}, w), 0.0);
    SimilarityTerms only;
    only.lm_pred = 1.0;
    EXPECT_DOUBLE_EQ(similarity_total(only, w), 2.0);

    Rng rng(7);
    SimilarityTerms t{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(),
                      rng.uniform(), rng.uniform(), rng.uniform(), -rng.uniform()};
    const double oracle = 0.05 * (t.idt_pred + t.idt_ref) + 1.0 * (t.ctt_pred + t.ctt_ref) +
                          2.0 * (t.lm_pred + t.lm_ref) + 2.0 * (t.loop_pred + t.loop_ref) + 1.0 * t.gan;
    EXPECT_NEAR(similarity_total(t, w), oracle, 1e-12);
}

TEST(Regularizer, Examples)
{
    const RegWeights w;
    FacialParams pred = FacialParams::neutral(), ref = FacialParams::neutral();
    std::fill(pred.idt.begin(), pred.idt.end(), 0.0);
    std::fill(ref.idt.begin(), ref.idt.end(), 0.0);
    const Image img = Image::filled(8, 8, 0.4);
    EXPECT_EQ(regularizer(pred, ref, &img, &img, w), 0.0);

    pred.idt[0] = 1.0;
    EXPECT_NEAR(regularizer(pred, ref, &img, &img, w), 1.1, 1e-15);
}

TEST(Regularizer, FormulaAndGradient)
{
    Rng rng(8);
    const RegWeights w{0.7, 0.2, 0.3, 0.05, 0.4};
    FacialParams pred = random_params(rng), ref = random_params(rng);
    ref.exp.clear();
    const Image a = random_image(rng, 8, 6), b = random_image(rng, 8, 6);
    const double oracle = w.idt * (sum_sq(pred.idt) + sum_sq(ref.idt)) + w.exp * sum_sq(pred.exp) +
                          w.pose * (sum_sq(pred.pose) + sum_sq(ref.pose)) + w.image * l1(a.data, b.data) +
                          w.ref * l1(pred.idt, ref.idt);
    RegularizerGrad g;
    EXPECT_NEAR(regularizer(pred, ref, &a, &b, w, &g), oracle, 1e-9);
    EXPECT_NEAR(regularizer(pred, ref, nullptr, nullptr, w), oracle - w.image * l1(a.data, b.data), 1e-9);

    const double h = 1e-7;
    for (std::size_t i : {0u, 100u, 260u}) {
        FacialParams p = pred, m = pred;
        p.idt[i] += h;
        m.idt[i] -= h;
        EXPECT_NEAR(g.d_idt[i], (regularizer(p, ref, &a, &b, w) - regularizer(m, ref, &a, &b, w)) / (2 * h), 1e-6);
    }
    for (std::size_t i = 0; i < pose_dim; ++i) {
        FacialParams p = ref, m = ref;
        p.pose[i] += h;
        m.pose[i] -= h;
        EXPECT_NEAR(g.d_pose_ref[i],
                    (regularizer(pred, p, &a, &b, w) - regularizer(pred, m, &a, &b, w)) / (2 * h), 1e-6);
    }
    for (std::size_t i : {0u, 17u, 143u}) {
        EXPECT_DOUBLE_EQ(g.d_image_pred[i], w.image * (a.data[i] > b.data[i] ? 1.0 : -1.0));
        EXPECT_DOUBLE_EQ(g.d_image_ref[i], -g.d_image_pred[i]);
    }
}

TEST(Losses, NonNegativeAndZeroOnIdentical)
{
    Rng rng(9);
    for (int i = 0; i < 10; ++i) {
        const auto a = random_vec(rng, 64), b = random_vec(rng, 64);
        EXPECT_GE(identity_loss(a, b), 0.0);
        EXPECT_GE(content_loss(a, b), 0.0);
        EXPECT_GE(loopback_loss(a, b), 0.0);
        EXPECT_EQ(content_loss(a, a), 0.0);
        EXPECT_EQ(loopback_loss(b, b), 0.0);
    }
}

TEST(Providers, EmbeddingsAndAdjoint)
{
    const FaceRig& rig = default_rig();
    const Camera cam = Camera::for_size(128, 128);
    const Providers prov = Providers::standard(rig, cam);
    EXPECT_EQ(prov.recg->dim(), embedding_dim);
    EXPECT_EQ(prov.aux->dim(), embedding_dim);

    const RenderResult r = render(rig, rig.neutral_params(), cam, {});
    const auto f = prov.features(r.image);
    ASSERT_EQ(f.size(), 2 * embedding_dim);
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < embedding_dim; ++i) {
        ASSERT_TRUE(std::isfinite(f[i]) && std::isfinite(f[i + embedding_dim]));
        n1 += f[i] * f[i];
        n2 += f[i + embedding_dim] * f[i + embedding_dim];
    }
    EXPECT_NEAR(n1, 1.0, 1e-12);
    EXPECT_NEAR(n2, 1.0, 1e-12);
    EXPECT_THROW(prov.recg->embed(Image::filled(128, 128, 0.0)), NumericalError);
    EXPECT_THROW(prov.features(Image::filled(64, 64, 0.5)), ValidationError);

    // Adjoint against central differences on a few pixels inside the crop.
    Rng rng(10);
    const auto seed = random_vec(rng, 2 * embedding_dim);
    const auto d = prov.features_vjp(r.image, seed);
    auto project = [&](const Image& img) {
        const auto g = prov.features(img);
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            s += seed[i] * g[i];
        }
        return s;
    };
    for (int k = 0; k < 10; ++k) {
        const std::size_t i = ((64 + k) * 128 + 60 + k) * 3 + (k % 3);
        Image p = r.image, m = r.image;
        p.data[i] += 1e-6;
        m.data[i] -= 1e-6;
        EXPECT_NEAR(d[i], (project(p) - project(m)) / 2e-6, 1e-6);
    }
}

TEST(ContentFeatures, PoolsMasks)
{
    PartMasks m = PartMasks::zeros(64, 64);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            m.at(2, x, y) = 1.0;
        }
    }
    m.at(0, 0, 0) = 1.0;
    const auto f = content_features(m);
    ASSERT_EQ(f.size(), content_dim);
    EXPECT_DOUBLE_EQ(f[2 * 1024 + 500], 1.0);
    EXPECT_DOUBLE_EQ(f[0], 0.25);
    EXPECT_DOUBLE_EQ(f[1], 0.0);
}

TEST(LossBreakdown, OrderedJson)
{
    LossBreakdown b;
    b.add("idt", 0.1);
    b.add("lm", 2.0);
    b.total = 2.1;
    EXPECT_TRUE(b.has("lm"));
    EXPECT_FALSE(b.has("gan"));
    const Json j = b.to_json();
    EXPECT_EQ(j.begin().key(), "idt");
    EXPECT_DOUBLE_EQ(j.at("total").get<double>(), 2.1);
}
