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
#include "rigdiff/image_io.hpp"

#include "rigdiff/error.hpp"
#include "rigdiff/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rigdiff {

static_assert(std::endian::native == std::endian::little, "fragment dumps assume a little-endian host");

namespace {

void ensure_parent(const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
}

void write_png_buffer(const std::vector<std::uint8_t>& bytes, int width, int height, bool rgb,
                      const std::filesystem::path& path)
{
    ensure_parent(path);
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr) == 0) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot write PNG '" + path.string() + "': " + msg);
    }
}

std::vector<std::uint8_t> read_png_buffer(const std::filesystem::path& path, int& width, int& height, bool rgb)
{
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot read PNG '" + path.string() + "': " + msg);
    }
    img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr) == 0) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
    }
    width = static_cast<int>(img.width);
    height = static_cast<int>(img.height);
    return bytes;
}

template <typename T>
void put(std::string& out, T v)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos)
{
    if (pos + sizeof(T) > in.size()) {
        throw IoError("fragment dump truncated");
    }
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::string format_real(double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::uint8_t to_byte(double v)
{
    const double c = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::nearbyint(c));
}

void write_png(const Image& image, const std::filesystem::path& path)
{
    std::vector<std::uint8_t> bytes(image.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = to_byte(image.data[i]);
    }
    write_png_buffer(bytes, image.width, image.height, true, path);
}

Image read_png(const std::filesystem::path& path)
{
    int w = 0;
    int h = 0;
    const auto bytes = read_png_buffer(path, w, h, true);
    Image img = Image::filled(w, h, 0.0);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.data[i] = bytes[i] / 255.0;
    }
    return img;
}

void write_gray_png(int width, int height, const std::vector<double>& values, const std::filesystem::path& path)
{
    if (values.size() != static_cast<std::size_t>(width) * height) {
        throw ValidationError("write_gray_png: size mismatch");
    }
    std::vector<std::uint8_t> bytes(values.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = to_byte(values[i]);
    }
    write_png_buffer(bytes, width, height, false, path);
}

std::vector<double> read_gray_png(const std::filesystem::path& path, int& width, int& height)
{
    const auto bytes = read_png_buffer(path, width, height, false);
    std::vector<double> out(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        out[i] = bytes[i] / 255.0;
    }
    return out;
}

void write_fragment_dump(const FragmentBuffer& fragments, const std::filesystem::path& path)
{
    std::string out = "RDFB";
    put<std::uint32_t>(out, static_cast<std::uint32_t>(fragments.width));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(fragments.height));
    for (const Fragment& f : fragments.pixels) {
        put<std::int32_t>(out, f.triangle);
        for (double b : f.bary) {
            put<float>(out, static_cast<float>(b));
        }
        put<float>(out, static_cast<float>(f.depth));
    }
    write_text_file(path, out);
}

FragmentBuffer read_fragment_dump(const std::filesystem::path& path)
{
    const std::string in = read_text_file(path);
    if (in.size() < 12 || in.compare(0, 4, "RDFB") != 0) {
        throw IoError("'" + path.string() + "' is not a fragment dump");
    }
    std::size_t pos = 4;
    FragmentBuffer fb;
    fb.width = static_cast<int>(get<std::uint32_t>(in, pos));
    fb.height = static_cast<int>(get<std::uint32_t>(in, pos));
    fb.pixels.resize(static_cast<std::size_t>(fb.width) * fb.height);
    for (Fragment& f : fb.pixels) {
        f.triangle = get<std::int32_t>(in, pos);
        for (double& b : f.bary) {
            b = get<float>(in, pos);
        }
        f.depth = get<float>(in, pos);
    }
    return fb;
}

void write_landmarks(const std::vector<std::array<double, 2>>& points, const std::filesystem::path& path)
{
    std::string out;
    for (const auto& p : points) {
        out += format_real(p[0]) + " " + format_real(p[1]) + "\n";
    }
    write_text_file(path, out);
}

std::vector<std::array<double, 2>> read_landmarks(const std::filesystem::path& path)
{
    std::istringstream in(read_text_file(path));
    std::vector<std::array<double, 2>> pts;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::array<double, 2> p{};
        if (!(ls >> p[0] >> p[1]) || !std::isfinite(p[0]) || !std::isfinite(p[1])) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected two finite numbers");
        }
        pts.push_back(p);
    }
    if (pts.size() != landmark_count) {
        throw ValidationError(path.string() + ": expected 68 landmarks, found " + std::to_string(pts.size()));
    }
    return pts;
}

} // namespace rigdiff
