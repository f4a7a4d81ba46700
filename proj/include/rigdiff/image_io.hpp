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

#ifndef RIGDIFF_IMAGE_IO_HPP
#define RIGDIFF_IMAGE_IO_HPP

#include "rigdiff/raster.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace rigdiff {

/// 8-bit quantization, round half to even.
std::uint8_t to_byte(double v);

/// 8-bit RGB PNG.
void write_png(const Image& image, const std::filesystem::path& path);
/// Reads an 8-bit gray, RGB or RGBA PNG into [0, 1] RGB.
Image read_png(const std::filesystem::path& path);

/// 8-bit grayscale PNG of `values` in [0, 1], row-major.
void write_gray_png(int width, int height, const std::vector<double>& values, const std::filesystem::path& path);
std::vector<double> read_gray_png(const std::filesystem::path& path, int& width, int& height);

/**
 * Debug dump of a fragment buffer, little-endian:
 * "RDFB" magic, uint32 width, uint32 height, then per pixel in row-major
 * order int32 triangle id (-1 when empty), 3 float32 barycentric weights,
 * float32 depth.
 */
void write_fragment_dump(const FragmentBuffer& fragments, const std::filesystem::path& path);
FragmentBuffer read_fragment_dump(const std::filesystem::path& path);

/// 68 landmark points, one "x y" line each.
void write_landmarks(const std::vector<std::array<double, 2>>& points, const std::filesystem::path& path);
std::vector<std::array<double, 2>> read_landmarks(const std::filesystem::path& path);

} // namespace rigdiff

#endif // RIGDIFF_IMAGE_IO_HPP
