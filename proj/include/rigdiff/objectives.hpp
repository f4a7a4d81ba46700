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

#ifndef RIGDIFF_OBJECTIVES_HPP
#define RIGDIFF_OBJECTIVES_HPP

#include "rigdiff/io.hpp"
#include "rigdiff/raster.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace rigdiff {

inline constexpr std::size_t embedding_dim = 256;
inline constexpr int content_grid = 32;
inline constexpr std::size_t content_dim = part_count * content_grid * content_grid;

/// An image -> embedding mapping with an adjoint.
class FeatureProvider
{
public:
    virtual ~FeatureProvider() = default;
    virtual std::size_t dim() const = 0;
    /// Throws NumericalError when the embedding has zero norm.
    virtual std::vector<double> embed(const Image& image) const = 0;
    /// d(loss)/d(image) given d(loss)/d(embedding).
    virtual std::vector<double> embed_vjp(const Image& image, const std::vector<double>& d_embed) const = 0;
};

/// Integer pixel box [x0, x1) x [y0, y1).
struct CropBox
{
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
};

/**
 * Grayscale crop, average-pooled onto a grid x grid lattice, L2-normalized
 * and zero-padded to 256 values. A stand-in for a face recognition network.
 */
class PooledCropProvider final : public FeatureProvider
{
public:
    PooledCropProvider(CropBox box, int grid);

    std::size_t dim() const override { return embedding_dim; }
    std::vector<double> embed(const Image& image) const override;
    std::vector<double> embed_vjp(const Image& image, const std::vector<double>& d_embed) const override;

    const CropBox& box() const { return box_; }
    int grid() const { return grid_; }

private:
    std::vector<double> pooled(const Image& image) const;
    int cell_of(int x, int y) const;

    CropBox box_;
    int grid_;
    std::vector<int> counts_;
};

/// Box around the projected neutral landmarks with a 15% margin, clipped to the image.
CropBox face_crop_box(const FaceRig& rig, const Camera& camera);
/// The central half of `box` (a 2x zoom).
CropBox zoom_box(const CropBox& box);

/// The two providers whose concatenated output feeds the translators.
struct Providers
{
    std::shared_ptr<const FeatureProvider> recg; ///< 16 x 16 pooled face crop
    std::shared_ptr<const FeatureProvider> aux;  ///< 8 x 8 pooled 2x zoomed crop
    int width = 0;                               ///< expected image size
    int height = 0;

    static Providers standard(const FaceRig& rig, const Camera& camera);

    /// concat(recg(I), aux(I)), 512 values. Throws ValidationError on a size mismatch.
    std::vector<double> features(const Image& image) const;
    /// Splits d(loss)/d(features) back onto the image.
    std::vector<double> features_vjp(const Image& image, const std::vector<double>& d_features) const;
};

/// Part masks average-pooled to 5 x 32 x 32 (channels brows, eyes, nose, mouth, skin).
std::vector<double> content_features(const PartMasks& masks);
/// Adjoint of content_features.
std::vector<double> content_features_vjp(int width, int height, const std::vector<double>& d_features);

struct LossWeights
{
    double idt = 0.05;
    double ctt = 1.0;
    double lm = 2.0;
    double loop = 2.0;
    double gan = 1.0;
};

struct RegWeights
{
    double idt = 1.0;
    double exp = 0.1;
    double pose = 0.1;
    double image = 0.1;
    double ref = 0.1;
};

inline constexpr double landmark_weight_major = 5.0;
inline constexpr double landmark_weight_minor = 1.0;

struct LandmarkSet
{
    std::vector<std::array<double, 2>> points;
    std::vector<double> weights;

    /// 5.0 on eye, nose and mouth points (dlib 27..67), 1.0 on jaw and brows.
    static std::vector<double> default_weights();
    static LandmarkSet with_default_weights(std::vector<std::array<double, 2>> points);
    void validate() const;
};

/// 1 - cos(a, b). Gradient with respect to b written to d_b when given.
double identity_loss(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>* d_b = nullptr);
double identity_loss(const Image& image, const Image& rendered, const FeatureProvider& provider);

/// Sum |a - b|. Gradient with respect to b (sign(b - a), 0 on ties).
double content_loss(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>* d_b = nullptr);

/// Sum_i w_i (|dx_i| + |dy_i|). Gradient with respect to the predicted points.
double landmark_loss(const LandmarkSet& target, const std::vector<std::array<double, 2>>& predicted,
                     std::vector<std::array<double, 2>>* d_predicted = nullptr);

/// L1 distance between concatenated parameter vectors; gradient with respect to b.
double loopback_loss(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>* d_b = nullptr);
double loopback_loss(const FacialParams& a, const FacialParams& b);

inline constexpr double gan_clamp = 1e-7;

/**
 * mean log D(ref) + mean log(1 - D(pred)), with D outputs clamped to
 * [1e-7, 1 - 1e-7]. Gradients with respect to the D outputs are zero where
 * the clamp is active.
 */
double gan_loss(const std::vector<double>& d_ref, const std::vector<double>& d_pred,
                std::vector<double>* grad_ref = nullptr, std::vector<double>* grad_pred = nullptr);

/// Component values of the combined similarity loss.
struct SimilarityTerms
{
    double idt_pred = 0.0, idt_ref = 0.0;
    double ctt_pred = 0.0, ctt_ref = 0.0;
    double lm_pred = 0.0, lm_ref = 0.0;
    double loop_pred = 0.0, loop_ref = 0.0;
    double gan = 0.0;
};

double similarity_total(const SimilarityTerms& t, const LossWeights& w);

/// Gradients of the regularizer with respect to each input.
struct RegularizerGrad
{
    std::vector<double> d_idt, d_exp, d_pose;
    std::vector<double> d_idt_ref, d_pose_ref;
    std::vector<double> d_image_pred, d_image_ref;
};

/**
 * b_idt (|idt|^2 + |idt_ref|^2) + b_exp |exp|^2 + b_pose (|pose|^2 + |pose_ref|^2)
 * + b_image |I_pred - I_ref|_1 + b_ref |idt - idt_ref|_1.
 * Pass nullptr images to drop the image term.
 */
double regularizer(const FacialParams& pred, const FacialParams& ref, const Image* image_pred,
                   const Image* image_ref, const RegWeights& w, RegularizerGrad* grad = nullptr);

/// Named loss values for one logged step, in insertion order.
struct LossBreakdown
{
    std::vector<std::pair<std::string, double>> terms;
    double total = 0.0;

    void add(const std::string& name, double value) { terms.emplace_back(name, value); }
    bool has(const std::string& name) const;
    Json to_json() const;
};

} // namespace rigdiff

#endif // RIGDIFF_OBJECTIVES_HPP
