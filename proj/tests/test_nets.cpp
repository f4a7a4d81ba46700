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
#include "rigdiff/io.hpp"
#include "rigdiff/nets.hpp"
#include "rigdiff/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <utility>

using namespace rigdiff;
using rigdiff::test::TempDir;

namespace {

std::vector<bool> some_banned()
{
    std::vector<bool> b(identity_dim, false);
    for (std::size_t i = 0; i < identity_dim; i += 5) {
        b[i] = true;
    }
    return b;
}

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0)
{
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-scale, scale);
    }
    return m;
}

double sigmoid(double z)
{
    return 1.0 / (1.0 + std::exp(-z));
}

/// Loop-based dense layer, no Eigen products.
std::vector<double> dense_oracle(const Matrix& w, const Matrix& b, const std::vector<double>& x)
{
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        double s = b(r, 0);
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            s += w(r, c) * x[static_cast<std::size_t>(c)];
        }
        y[static_cast<std::size_t>(r)] = s;
    }
    return y;
}

/// Gradient check on a few entries of each parameter tensor for one scalar output.
template <typename Net, typename Forward, typename Backward>
void check_param_grads(Net& net, const Forward& value, const Backward& grads, Rng& rng, int per_tensor)
{
    const double h = 1e-6;
    const auto params = net.params();
    const std::vector<Matrix> g = grads();
    std::size_t strict = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Matrix& m = *params[t].value;
        for (int k = 0; k < per_tensor; ++k) {
            const Eigen::Index i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(m.size())));
            const double keep = m.data()[i];
            m.data()[i] = keep + h;
            const double fp = value();
            m.data()[i] = keep - h;
            const double fm = value();
            m.data()[i] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double an = g[t].data()[i];
            const double scale = std::max(std::abs(fd), std::abs(an));
            if (scale > 1e-3) {
                ++strict;
                EXPECT_LE(std::abs(fd - an) / scale, 1e-6) << params[t].name << "[" << i << "]";
            } else {
                // Below 1e-3 the central-difference quotient itself is only good to ~1e-10.
                EXPECT_LE(std::abs(fd - an), 1e-9) << params[t].name << "[" << i << "]";
            }
        }
    }
    EXPECT_GT(strict, params.size());
}

} // namespace

TEST(Activation, SoftmaxOfConstantsIsUniform)
{
    const Matrix z = Matrix::Constant(8, 3, 0.7);
    const Matrix a = activate(z, Activation::softmax);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a.data()[i], 1.0 / 8.0, 1e-15);
    }
}

TEST(Activation, SigmoidMonotone)
{
    Matrix z(1, 50);
    for (int i = 0; i < 50; ++i) {
        z(0, i) = -10.0 + 0.4 * i;
    }
    const Matrix a = activate(z, Activation::sigmoid);
    for (int i = 1; i < 50; ++i) {
        EXPECT_GT(a(0, i), a(0, i - 1));
    }
}

TEST(Translator, ZeroWeightsGiveMidpoints)
{
    Translator t("pred", identity_dim, expression_dim, some_banned(), 1);
    for (auto& p : t.params()) {
        p.value->setZero();
    }
    const FacialParams out = t.forward_one(std::vector<double>(512, 0.3));
    for (double v : out.idt) {
        EXPECT_EQ(v, 0.5);
    }
    for (double v : out.exp) {
        EXPECT_EQ(v, 0.5);
    }
    for (double v : out.pose) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Translator, MatchesLoopOracle)
{
    Translator t("pred", identity_dim, expression_dim, some_banned(), 2);
    Rng rng(3);
    std::vector<double> x(512);
    for (double& v : x) {
        v = rng.uniform();
    }
    Translator::Cache cache;
    Matrix xm(512, 1);
    for (int i = 0; i < 512; ++i) {
        xm(i, 0) = x[i];
    }
    const auto out = t.forward(xm, &cache);

    const auto p = t.params();
    auto relu = [](std::vector<double> v) {
        for (double& e : v) {
            e = std::max(0.0, e);
        }
        return v;
    };
    const auto h1 = relu(dense_oracle(*p[0].value, *p[1].value, x));
    const auto h2 = relu(dense_oracle(*p[2].value, *p[3].value, h1));
    auto logits = dense_oracle(*p[4].value, *p[5].value, h2);
    double mx = logits[0], z = 0.0;
    for (double l : logits) {
        mx = std::max(mx, l);
    }
    for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    std::vector<double> gated(512);
    for (int i = 0; i < 512; ++i) {
        gated[i] = h2[i] * 8.0 * logits[i / 64] / z;
    }
    const auto idt = dense_oracle(*p[6].value, *p[7].value, gated);
    const auto exp = dense_oracle(*p[8].value, *p[9].value, gated);
    const auto pose = dense_oracle(*p[10].value, *p[11].value, gated);
    const auto banned = some_banned();
    for (std::size_t i = 0; i < identity_dim; ++i) {
        EXPECT_NEAR(out.idt(i, 0), banned[i] ? 0.5 : sigmoid(idt[i]), 1e-12);
    }
    for (std::size_t i = 0; i < expression_dim; ++i) {
        EXPECT_NEAR(out.exp(i, 0), sigmoid(exp[i]), 1e-12);
    }
    for (std::size_t i = 0; i < pose_dim; ++i) {
        EXPECT_NEAR(out.pose(i, 0), std::tanh(pose[i]) * pose_limit(i), 1e-12);
    }
}

TEST(Translator, RangesHoldForExtremeInputs)
{
    Translator t("pred", identity_dim, expression_dim, some_banned(), 4);
    Rng rng(5);
    const Matrix x = random_matrix(rng, 512, 6, 1e3);
    for (const FacialParams& p : t.to_params(t.forward(x))) {
        EXPECT_NO_THROW(p.validate(identity_dim, expression_dim));
    }
    EXPECT_THROW(t.forward(Matrix::Zero(511, 1)), ValidationError);
}

TEST(Translator, ReferenceHasNoExpressionHead)
{
    Translator r("ref", identity_dim, 0, some_banned(), 6);
    EXPECT_FALSE(r.has_expression());
    const auto out = r.forward(Matrix::Constant(512, 2, 0.1));
    EXPECT_EQ(out.exp.rows(), 0);
    EXPECT_EQ(out.idt.rows(), static_cast<Eigen::Index>(identity_dim));
    for (const auto& p : r.params()) {
        EXPECT_EQ(p.name.find(".exp."), std::string::npos);
    }
}

TEST(Translator, GradientsMatchFiniteDifferences)
{
    Translator t("pred", identity_dim, expression_dim, some_banned(), 7);
    Rng rng(8);
    const Matrix x = random_matrix(rng, 512, 2, 1.0).cwiseAbs();
    // Sparse seed keeps the probed scalar O(1), so the quotient's roundoff stays far below the tolerance.
    Translator::Outputs seed;
    seed.idt = Matrix::Zero(identity_dim, 2);
    seed.exp = Matrix::Zero(expression_dim, 2);
    seed.pose = Matrix::Zero(pose_dim, 2);
    seed.idt(3, 0) = 1.0;
    seed.idt(40, 1) = -0.5;
    seed.exp(7, 1) = 1.0;
    seed.pose(4, 0) = 0.3;
    auto value = [&] {
        const auto o = t.forward(x);
        return (o.idt.cwiseProduct(seed.idt)).sum() + (o.exp.cwiseProduct(seed.exp)).sum() +
               (o.pose.cwiseProduct(seed.pose)).sum();
    };
    Matrix dx;
    auto grads = [&] {
        Translator::Cache c;
        t.forward(x, &c);
        return t.backward(c, seed, &dx);
    };
    check_param_grads(t, value, grads, rng, 6);

    // Input adjoint.
    Matrix xp = x;
    for (int k = 0; k < 8; ++k) {
        const Eigen::Index i = static_cast<Eigen::Index>(rng.index(512));
        const double keep = xp(i, 0);
        auto at = [&](double v) {
            xp(i, 0) = v;
            const auto o = t.forward(xp);
            return (o.idt.cwiseProduct(seed.idt)).sum() + (o.exp.cwiseProduct(seed.exp)).sum() +
                   (o.pose.cwiseProduct(seed.pose)).sum();
        };
        const double fd = (at(keep + 1e-6) - at(keep - 1e-6)) / 2e-6;
        xp(i, 0) = keep;
        EXPECT_NEAR(dx(i, 0), fd, std::max(1e-9, 1e-6 * std::abs(fd)));
    }
}

TEST(Discriminator, ZeroFinalLayerGivesHalf)
{
    Discriminator d(identity_dim, 1);
    d.layers().back().weight.setZero();
    d.layers().back().bias.setZero();
    EXPECT_EQ(d.forward_one(std::vector<double>(identity_dim, 0.3)), 0.5);
}

TEST(Discriminator, MonotoneInItsLogit)
{
    Discriminator d(identity_dim, 2);
    const std::vector<double> x(identity_dim, 0.4);
    double prev = 0.0;
    for (int i = 0; i < 10; ++i) {
        d.layers().back().bias(0, 0) = -3.0 + 0.6 * i;
        const double p = d.forward_one(x);
        EXPECT_GT(p, prev);
        EXPECT_LT(p, 1.0);
        prev = p;
    }
}

TEST(Discriminator, MatchesLoopOracleAndGradients)
{
    Discriminator d(identity_dim, 3);
    Rng rng(4);
    std::vector<double> x(identity_dim);
    for (double& v : x) {
        v = rng.uniform();
    }
    std::vector<double> a = x;
    for (std::size_t k = 0; k < d.layers().size(); ++k) {
        a = dense_oracle(d.layers()[k].weight, d.layers()[k].bias, a);
        for (double& v : a) {
            v = k + 1 < d.layers().size() ? std::max(0.0, v) : sigmoid(v);
        }
    }
    EXPECT_NEAR(d.forward_one(x), a[0], 1e-13);

    const Matrix batch = random_matrix(rng, identity_dim, 3, 1.0).cwiseAbs();
    const Matrix seed = random_matrix(rng, 1, 3);
    auto value = [&] { return d.forward(batch).cwiseProduct(seed).sum(); };
    auto grads = [&] {
        Discriminator::Cache c;
        d.forward(batch, &c);
        return d.backward(c, seed);
    };
    check_param_grads(d, value, grads, rng, 8);
}

TEST(Init, DeterministicAndScaled)
{
    DenseLayer a(512, 512, Activation::relu), b(512, 512, Activation::relu), c(512, 512, Activation::relu);
    init_layer(a, 42);
    init_layer(b, 42);
    init_layer(c, 43);
    EXPECT_EQ(a.weight, b.weight);
    EXPECT_NE(a.weight, c.weight);
    const double mean = a.weight.mean();
    const double var = (a.weight.array() - mean).square().mean();
    EXPECT_NEAR(var, 1.0 / 512.0, 0.2 / 512.0);
    EXPECT_TRUE(a.bias.isZero());

    Translator t1("pred", identity_dim, expression_dim, some_banned(), 9);
    Translator t2("pred", identity_dim, expression_dim, some_banned(), 9);
    EXPECT_EQ(checksum(std::as_const(t1).params()), checksum(std::as_const(t2).params()));
}

TEST(Adam, ZeroGradientLeavesParameters)
{
    Matrix w = Matrix::Constant(3, 2, 0.25);
    AdamState s;
    ASSERT_TRUE(adam_step(s, {{"w", &w}}, {Matrix::Zero(3, 2)}));
    EXPECT_TRUE((w.array() == 0.25).all());
}

TEST(Adam, FirstStepHandValue)
{
    Matrix w = Matrix::Zero(1, 1);
    AdamState s;
    ASSERT_TRUE(adam_step(s, {{"w", &w}}, {Matrix::Constant(1, 1, 0.1)}));
    // m_hat = 0.1, v_hat = 0.01: delta = -1e-4 * 0.1 / (0.1 + 1e-8).
    EXPECT_NEAR(w(0, 0), -1e-4 * 0.1 / (0.1 + 1e-8), 1e-18);
}

TEST(Adam, ConstantGradientStepsShrinkAfterFirst)
{
    Matrix w = Matrix::Zero(1, 1);
    AdamState s;
    s.lr = 1e-2;
    std::vector<double> deltas;
    double prev = 0.0;
    for (int i = 0; i < 5; ++i) {
        ASSERT_TRUE(adam_step(s, {{"w", &w}}, {Matrix::Constant(1, 1, 0.5)}));
        deltas.push_back(std::abs(w(0, 0) - prev));
        prev = w(0, 0);
    }
    // With bias correction a constant gradient gives |delta| = lr * g / (|g| + eps) every step.
    for (std::size_t i = 1; i < deltas.size(); ++i) {
        EXPECT_LE(deltas[i], deltas[i - 1] * (1.0 + 1e-12));
    }
    EXPECT_NEAR(deltas[0], 1e-2 * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(Adam, NonFiniteGradientIsRejected)
{
    Matrix w = Matrix::Constant(2, 2, 1.0);
    AdamState s;
    Matrix g = Matrix::Zero(2, 2);
    g(1, 1) = std::nan("");
    EXPECT_FALSE(adam_step(s, {{"w", &w}}, {g}));
    EXPECT_TRUE((w.array() == 1.0).all());
    EXPECT_EQ(s.step, 0u);
}

TEST(Checkpoint, RoundTripIsByteIdentical)
{
    TempDir dir("ckpt");
    Translator t("pred", identity_dim, expression_dim, some_banned(), 10);
    save_checkpoint(snapshot(t.params()), dir / "a.bin");
    const auto loaded = load_checkpoint(dir / "a.bin");
    save_checkpoint(loaded, dir / "b.bin");
    EXPECT_EQ(read_text_file(dir / "a.bin"), read_text_file(dir / "b.bin"));
    EXPECT_EQ(read_text_file(dir / "a.bin").rfind("rigdiff-ckpt/1\n", 0), 0u);

    Translator u("pred", identity_dim, expression_dim, some_banned(), 11);
    EXPECT_NE(checksum(std::as_const(t).params()), checksum(std::as_const(u).params()));
    restore_params(loaded, u.params());
    EXPECT_EQ(checksum(std::as_const(t).params()), checksum(std::as_const(u).params()));

    Translator r("ref", identity_dim, 0, some_banned(), 12);
    EXPECT_THROW(restore_params(loaded, r.params()), ValidationError);

    write_text_file(dir / "bad.bin", "not a checkpoint");
    EXPECT_THROW(load_checkpoint(dir / "bad.bin"), IoError);
}
