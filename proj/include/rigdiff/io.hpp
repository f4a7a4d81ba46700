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

#ifndef RIGDIFF_IO_HPP
#define RIGDIFF_IO_HPP

#include "rigdiff/params.hpp"
#include "rigdiff/rig.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace rigdiff {

using Json = nlohmann::ordered_json;

inline constexpr const char* rig_format_tag = "rigdiff/1";
inline constexpr const char* params_format_tag = "rigdiff-params/1";

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/**
 * Deterministic text form: objects are indented one key per line, arrays of
 * scalars stay on a single line. Ends with a newline.
 */
std::string to_text(const Json& j);

/// Parses structured text; syntax errors become ValidationError with a line number.
Json parse_text(const std::string& text, const std::string& source);

Json rig_to_json(const FaceRig& rig);
FaceRig rig_from_json(const Json& j);
void save_rig(const FaceRig& rig, const std::filesystem::path& path);
FaceRig load_rig(const std::filesystem::path& path);

Json params_to_json(const FacialParams& p);
/// Shape and range checked against the given dimensions.
FacialParams params_from_json(const Json& j, std::size_t n_idt, std::size_t n_exp);
void save_params(const FacialParams& p, const std::filesystem::path& path);
FacialParams load_params(const std::filesystem::path& path, std::size_t n_idt, std::size_t n_exp);

} // namespace rigdiff

#endif // RIGDIFF_IO_HPP
