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

#ifndef RIGDIFF_NETS_HPP
#define RIGDIFF_NETS_HPP

#include "rigdiff/params.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rigdiff {

/// Batches are stored column-wise: one sample per column.
using Matrix = Eigen::MatrixXd;

enum class Activation { none, relu, sigmoid, tanh, softmax };

struct DenseLayer
{
    Matrix weight; ///< out x in
    Matrix bias;   ///< out x 1
    Activation activation = Activation::none;

    DenseLayer() = default;
    DenseLayer(int in, int out, Activation act);

    int in() const { return static_cast<int>(weight.cols()); }
    int out() const { return static_cast<int>(weight.rows()); }

    /// Affine map followed by the activation (softmax runs down each column).
    Matrix forward(const Matrix& x) const;
};

/// Applies `act` elementwise (column-wise for softmax).
Matrix activate(const Matrix& z, Activation act);
/// d(loss)/dz given d(loss)/d(activate(z)) and the activation output y.
Matrix activate_vjp(const Matrix& y, const Matrix& dy, Activation act);

/// A trainable tensor and its gradient slot, addressed by name.
struct ParamRef
{
    std::string name;
    Matrix* value;
};

/// Uniform in +-sqrt(3 / fan_in) (variance 1 / fan_in), zero biases.
void init_layer(DenseLayer& layer, std::uint64_t seed);

inline constexpr int translator_width = 512;
inline constexpr int translator_gate_groups = 8;

/**
 * Attention-gated MLP. Trunk 512 -> 512 -> 512 (relu); a softmax gate over
 * 8 segments of the trunk output rescales segment s by 8 * a_s (so a
 * uniform gate is the identity); heads map the gated features to identity
 * (sigmoid, banned slots pinned to 0.5), expression (sigmoid) and pose
 * (tanh scaled to the pose ranges).
 */
class Translator
{
public:
    struct Outputs
    {
        Matrix idt;  ///< n_idt x B
        Matrix exp;  ///< n_exp x B (0 rows for the reference translator)
        Matrix pose; ///< 6 x B
    };

    /// Forward intermediates of one batch.
    struct Cache
    {
        Matrix x, h1, h2, gate, gated, idt, exp, pose_unit;
    };

    Translator() = default;
    Translator(std::string name, std::size_t n_idt, std::size_t n_exp, std::vector<bool> banned,
               std::uint64_t seed);

    const std::string& name() const { return name_; }
    bool has_expression() const { return exp_.out() > 0; }
    std::size_t identity_size() const { return static_cast<std::size_t>(idt_.out()); }
    std::size_t expression_size() const { return static_cast<std::size_t>(exp_.out()); }

    Outputs forward(const Matrix& features, Cache* cache = nullptr) const;
    FacialParams forward_one(const std::vector<double>& features) const;

    /// Gradients (in params() order) given d(loss)/d(outputs); also d(loss)/d(features) when asked.
    std::vector<Matrix> backward(const Cache& cache, const Outputs& d_out, Matrix* d_features = nullptr) const;

    std::vector<ParamRef> params();
    std::vector<const Matrix*> params() const;

    /// Outputs as FacialParams, one per column.
    std::vector<FacialParams> to_params(const Outputs& out) const;

private:
    std::string name_;
    DenseLayer l1_, l2_, gate_, idt_, exp_, pose_;
    std::vector<bool> banned_;
};

/// 261 -> 256 -> 128 -> 64 -> 1, relu hidden layers, sigmoid output.
class Discriminator
{
public:
    struct Cache
    {
        std::vector<Matrix> activations; ///< input, then each layer output
    };

    Discriminator() = default;
    Discriminator(std::size_t n_idt, std::uint64_t seed);

    /// 1 x B probabilities.
    Matrix forward(const Matrix& idt, Cache* cache = nullptr) const;
    double forward_one(const std::vector<double>& idt) const;

    /// Parameter gradients and, when asked, d(loss)/d(input).
    std::vector<Matrix> backward(const Cache& cache, const Matrix& d_out, Matrix* d_input = nullptr) const;

    std::vector<ParamRef> params();
    std::vector<const Matrix*> params() const;

    std::vector<DenseLayer>& layers() { return layers_; }

private:
    std::vector<DenseLayer> layers_;
};

struct AdamState
{
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

/**
 * Bias-corrected Adam update in place. Returns false and leaves everything
 * unchanged when a gradient is non-finite.
 */
bool adam_step(AdamState& state, const std::vector<ParamRef>& params, const std::vector<Matrix>& grads);

/// Order-sensitive checksum of parameter values (for alternation checks).
std::uint64_t checksum(const std::vector<const Matrix*>& params);

inline constexpr const char* checkpoint_format_tag = "rigdiff-ckpt/1";

struct NamedTensor
{
    std::string name;
    Matrix value;
};

/**
 * Binary layout: the ASCII tag "rigdiff-ckpt/1\n", uint32 tensor count, then
 * per tensor uint32 name length, name bytes, uint32 rows, uint32 cols and
 * rows*cols float64 values in row-major order. Little-endian.
 */
void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies matching tensors (by name and shape) into the given slots; throws on any mismatch.
void restore_params(const std::vector<NamedTensor>& tensors, const std::vector<ParamRef>& params);
std::vector<NamedTensor> snapshot(const std::vector<ParamRef>& params);

} // namespace rigdiff

#endif // RIGDIFF_NETS_HPP
