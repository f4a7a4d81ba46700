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

#ifndef RIGDIFF_CONFIG_HPP
#define RIGDIFF_CONFIG_HPP

#include "rigdiff/io.hpp"
#include "rigdiff/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace rigdiff {

inline constexpr const char* config_format_tag = "rigdiff-config/1";

struct PathsConfig
{
    std::filesystem::path rig;
    std::filesystem::path corpus;      ///< training corpus directory
    std::filesystem::path test_corpus; ///< held-out corpus directory
    std::filesystem::path checkpoint;
    std::filesystem::path output_dir = "out";
};

/// Image size; the rest of the camera follows Camera::for_size.
struct CameraConfig
{
    int width = 128;
    int height = 128;
};

struct SynthConfig
{
    std::size_t n_train = 500;
    std::size_t n_test = 100;
    double pool_fraction = 0.3;
    double pose_spread = default_pose_spread;
};

/**
 * Everything a command needs. Loss and regularizer weights live at the top
 * level and are shared by training and fitting; `seed` is the only source
 * of randomness.
 */
struct Config
{
    PathsConfig paths;
    CameraConfig camera;
    ShadingParams shading;
    TrainConfig train;
    FitConfig fit;
    LossWeights loss;
    RegWeights reg;
    SynthConfig synth;
    std::uint64_t seed = 0;

    Camera make_camera() const { return Camera::for_size(camera.width, camera.height); }
    /// train with the shared weights and seed filled in.
    TrainConfig train_config() const;
    /// fit with the shared weights filled in.
    FitConfig fit_config() const;

    /// Value ranges of every block.
    void validate() const;
    /// Input paths that are set must exist.
    void check_inputs_exist() const;

    Json to_json() const;
    /**
     * Missing keys keep their defaults, unknown keys are rejected. Relative
     * paths are resolved against `base_dir`.
     */
    static Config from_json(const Json& j, const std::filesystem::path& base_dir = {});
};

Config load_config(const std::filesystem::path& path);

} // namespace rigdiff

#endif // RIGDIFF_CONFIG_HPP
