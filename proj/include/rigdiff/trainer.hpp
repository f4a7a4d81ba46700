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

#ifndef RIGDIFF_TRAINER_HPP
#define RIGDIFF_TRAINER_HPP

#include "rigdiff/io.hpp"
#include "rigdiff/nets.hpp"
#include "rigdiff/objectives.hpp"
#include "rigdiff/raster.hpp"
#include "rigdiff/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rigdiff {

inline constexpr const char* corpus_format_tag = "rigdiff-corpus/1";

/// Everything the engine needs besides parameters: rig, camera, shading and the frozen providers.
struct Scene
{
    FaceRig rig;
    Camera camera;
    ShadingParams shading;
    Providers providers;

    static Scene make(FaceRig rig, Camera camera, ShadingParams shading = {});
};

/**
 * One rendered training sample. Images and content features are stored
 * 8-bit quantized, so a corpus read back from disk equals the one that was
 * written.
 */
struct SyntheticSample
{
    std::string id;
    Image image;
    std::vector<std::array<double, 2>> landmarks;
    std::vector<double> content; ///< pooled part masks, content_dim values
    FacialParams truth;
    bool poker_face = false;
};

struct SyntheticCorpus
{
    std::vector<SyntheticSample> samples;
    double pool_fraction = 0.0;
    double pose_spread = 0.0;
    std::uint64_t seed = 0;

    std::size_t pool_count() const;
    std::vector<std::size_t> pool_indices() const;
    /// Needs at least one poker-face and one expressive sample.
    void validate() const;
};

/// Fraction of each pose range used when sampling expressive samples.
inline constexpr double default_pose_spread = 0.1;

/**
 * n samples, of which round(n * pool_fraction) are poker faces (zero
 * expression, zero pose). Identity is uniform on [0, 1] for adjustable
 * slots, expression uniform on [0, 1], pose uniform on pose_spread times
 * each pose range.
 */
SyntheticCorpus synth_corpus(const Scene& scene, std::size_t n, double pool_fraction, std::uint64_t seed,
                             double pose_spread = default_pose_spread);

/// Draws one parameter set the way synth_corpus does.
FacialParams sample_params(const FaceRig& rig, Rng& rng, bool poker_face, double pose_spread);

/// The neutral-expression twin of an expressive sample: same identity and pose, zero expression.
Image render_quantized(const Scene& scene, const FacialParams& params, RenderResult* full = nullptr);

/// manifest.json plus one PNG, landmark file and content PNG per sample under `dir`.
void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);
SyntheticCorpus load_corpus(const std::filesystem::path& dir, const FaceRig& rig);

struct TrainConfig
{
    double lr = 1e-4;
    int epochs = 10;
    int batch_size = 16;
    std::uint64_t seed = 0;
    LossWeights loss;
    RegWeights reg;
    /// Epochs trained without the adversarial term and without D updates.
    int warmup_epochs = 1;
    /// When false, P never sees the adversarial term (D is still fitted as an observer).
    bool adversarial = true;
    /// P maximizes log D(pred) instead of minimizing log(1 - D(pred)).
    bool non_saturating = false;
    /// Adds parameter checksums around each D and P update to every step record.
    bool verify_alternation = false;

    void validate() const;
};

struct TrainedModels
{
    Translator pred;
    Translator ref;
    Discriminator disc;

    static TrainedModels init(const FaceRig& rig, std::uint64_t seed);

    std::vector<NamedTensor> tensors();
    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);
};

/// Called with every metrics record as it is produced (one per step, one per epoch).
using MetricsSink = std::function<void(const Json&)>;

struct TrainResult
{
    TrainedModels models;
    std::vector<Json> log;
    double final_disc_accuracy = 0.0; ///< mean D accuracy over the last epoch's D steps
};

/**
 * Alternating optimization: per batch one D step on detached translator
 * outputs, then one P step on the similarity and regularization losses.
 * Warmup epochs skip D entirely and train T_ref on pool samples only.
 * A non-finite loss throws NumericalError after writing
 * nonfinite_batch.json under `dump_dir` (when given).
 */
TrainResult train_phase2(const Scene& scene, const SyntheticCorpus& corpus, const TrainConfig& config,
                         const MetricsSink& sink = {}, const std::filesystem::path& dump_dir = {});

/// features(image) through the predictor.
FacialParams predict(const Translator& pred, const Providers& providers, const Image& image);

struct FitTarget
{
    Image image;
    LandmarkSet landmarks;
    std::optional<std::vector<double>> content; ///< pooled part masks when available
};

struct FitConfig
{
    int steps = 2000;
    double lr = 0.02;
    double lr_final = 0.002; ///< cosine decay from lr to lr_final
    double adam_eps = 1e-8;
    bool use_landmarks = true;
    bool use_content = true;
    bool use_pixels = true;
    double pixel_weight = 1.0;
    /**
     * Coarse-to-fine schedule. Between these fractions of the run the pixel
     * term fades in (from 0) and the landmark weight fades to
     * landmark_final_scale of its value. Silhouettes carry no gradient, so
     * pixel residuals are only trusted once landmarks have aligned the
     * outline. {0, 0} disables the schedule. Losses and the best iterate
     * are measured with the end-of-schedule weights.
     */
    std::array<double, 2> pixel_ramp{0.2, 0.4};
    double landmark_final_scale = 0.02;
    /**
     * Drop the pixel adjoint where the target shows bare background. Such
     * residuals come from outline mismatch, which interior gradients cannot
     * explain; they still count in the loss.
     */
    bool mask_silhouette = true;
    LossWeights loss;
    RegWeights reg;

    void validate() const;
};

struct FitResult
{
    FacialParams params;            ///< best iterate
    double best_loss = 0.0;
    int best_step = 0;
    int steps_run = 0;
    bool diverged = false;
    std::vector<double> loss_trace; ///< loss at every evaluated iterate
    std::vector<double> best_trace; ///< best-so-far, non-increasing
};

/// Adam on the parameters directly from neutral, projected back to the valid ranges after each step.
FitResult fit_single(const Scene& scene, const FitTarget& target, const FitConfig& config);

struct DisentanglementMetrics
{
    double idt_mae = 0.0;       ///< predicted vs true identity, expressive samples
    double exp_mae = 0.0;       ///< predicted vs true expression, expressive samples
    double leakage = 0.0;       ///< identity from expressive vs neutral twin render
    double disc_accuracy = 0.0; ///< D on held-out T_ref (pool) and T_pred outputs

    Json to_json() const;
};

/// Identity MAE over adjustable slots only (banned slots are pinned and carry no information).
double identity_mae(const FaceRig& rig, const std::vector<double>& a, const std::vector<double>& b);

DisentanglementMetrics evaluate_disentanglement(const Scene& scene, const SyntheticCorpus& test,
                                                const TrainedModels& models);

} // namespace rigdiff

#endif // RIGDIFF_TRAINER_HPP
