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
#include "rigdiff/io.hpp"

#include "rigdiff/error.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace rigdiff {

namespace {

void write_value(std::string& out, const Json& j, int indent)
{
    const std::string pad(static_cast<std::size_t>(indent), ' ');
    if (j.is_object()) {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{\n";
        bool first = true;
        for (const auto& [key, value] : j.items()) {
            if (!first) {
                out += ",\n";
            }
            first = false;
            out += pad + "  " + Json(key).dump() + ": ";
            write_value(out, value, indent + 2);
        }
        out += "\n" + pad + "}";
    } else if (j.is_array()) {
        const bool flat = std::none_of(j.begin(), j.end(), [](const Json& e) { return e.is_structured(); });
        if (flat) {
            out += "[";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i > 0) {
                    out += ", ";
                }
                out += j[i].dump();
            }
            out += "]";
            return;
        }
        out += "[\n";
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i > 0) {
                out += ",\n";
            }
            out += pad + "  ";
            write_value(out, j[i], indent + 2);
        }
        out += "\n" + pad + "]";
    } else {
        out += j.dump();
    }
}

Json vec3(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }

Vec3 read_vec3(const Json& j)
{
    if (!j.is_array() || j.size() != 3) {
        throw ValidationError("expected a 3-vector");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

int channel_from_name(const std::string& name)
{
    for (int c = 0; c < 9; ++c) {
        if (name == channel_names[c]) {
            return c;
        }
    }
    throw ValidationError("unknown channel '" + name + "'");
}

std::vector<double> read_reals(const Json& j, const char* field)
{
    const Json& a = j.at(field);
    if (!a.is_array()) {
        throw ValidationError(std::string("field '") + field + "' must be an array");
    }
    std::vector<double> out;
    out.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) {
            throw ValidationError(std::string("field '") + field + "[" + std::to_string(i) + "]' is not a number");
        }
        out.push_back(a[i].get<double>());
    }
    return out;
}

} // namespace

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!out) {
        throw IoError("write to '" + path.string() + "' failed");
    }
}

std::string to_text(const Json& j)
{
    std::string out;
    write_value(out, j, 0);
    out += "\n";
    return out;
}

Json parse_text(const std::string& text, const std::string& source)
{
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        const std::size_t pos = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n');
        throw ValidationError(source + ":" + std::to_string(line) + ": " + e.what());
    }
}

Json rig_to_json(const FaceRig& rig)
{
    Json j;
    j["format"] = rig_format_tag;
    j["name"] = rig.name;
    j["conventions"] = {{"matrix", "row-major, column vectors, right-handed, y up, face toward +z"},
                        {"bone_transform", "T*Rz*Ry*Rx*S"},
                        {"landmarks", "dlib-68"}};

    Json bones = Json::array();
    for (const auto& b : rig.skeleton.bones) {
        Json jb;
        jb["name"] = b.name;
        jb["parent"] = b.parent;
        jb["rest"] = b.rest.v;
        jb["bind_pose_inv"] = b.bind_pose_inv.a;
        bones.push_back(std::move(jb));
    }
    j["bones"] = std::move(bones);

    Json verts = Json::array();
    for (const auto& v : rig.vertices) {
        verts.push_back(vec3(v));
    }
    j["vertices"] = std::move(verts);
    j["triangles"] = rig.triangles;
    Json albedo = Json::array();
    for (const auto& c : rig.albedo) {
        albedo.push_back(vec3(c));
    }
    j["albedo"] = std::move(albedo);
    j["skin_bones"] = rig.skin.bone;
    j["skin_weights"] = rig.skin.weight;

    // Bases are stored sparsely: only vertices with a nonzero offset.
    Json shapes = Json::array();
    for (std::size_t k = 0; k < rig.blendshapes.size(); ++k) {
        Json idx = Json::array();
        Json off = Json::array();
        const auto& o = rig.blendshapes.offsets[k];
        for (std::size_t v = 0; v < o.size(); ++v) {
            if (o[v].x != 0.0 || o[v].y != 0.0 || o[v].z != 0.0) {
                idx.push_back(v);
                off.push_back(vec3(o[v]));
            }
        }
        shapes.push_back({{"label", rig.blendshapes.labels[k]}, {"vertices", idx}, {"offsets", off}});
    }
    j["blendshapes"] = std::move(shapes);

    Json ctrls = Json::array();
    for (const auto& c : rig.schema.controllers) {
        ctrls.push_back({{"group", c.group},
                         {"bone", c.bone},
                         {"mirror_bone", c.mirror_bone},
                         {"channel", channel_names[static_cast<int>(c.channel)]},
                         {"lo", c.lo},
                         {"hi", c.hi},
                         {"banned", c.banned}});
    }
    j["controllers"] = std::move(ctrls);
    j["landmarks"] = rig.landmarks;

    Json parts = Json::object();
    for (std::size_t p = 0; p < part_count; ++p) {
        Json idx = Json::array();
        for (std::size_t v = 0; v < rig.parts.size(); ++v) {
            if (static_cast<std::size_t>(rig.parts[v]) == p) {
                idx.push_back(v);
            }
        }
        parts[part_names[p]] = std::move(idx);
    }
    j["parts"] = std::move(parts);
    j["pose_pivot"] = vec3(rig.pose_pivot);
    return j;
}

FaceRig rig_from_json(const Json& j)
{
    try {
        if (j.at("format").get<std::string>() != rig_format_tag) {
            throw ValidationError("rig: unsupported format '" + j.at("format").get<std::string>() + "'");
        }
        if (j.at("conventions").at("bone_transform").get<std::string>() != "T*Rz*Ry*Rx*S") {
            throw ValidationError("rig: unsupported bone transform convention");
        }
        FaceRig rig;
        rig.name = j.at("name").get<std::string>();
        for (const auto& jb : j.at("bones")) {
            Bone b;
            b.name = jb.at("name").get<std::string>();
            b.parent = jb.at("parent").get<int>();
            b.rest.v = jb.at("rest").get<std::array<double, 9>>();
            b.bind_pose_inv.a = jb.at("bind_pose_inv").get<std::array<double, 16>>();
            rig.skeleton.bones.push_back(std::move(b));
        }
        for (const auto& v : j.at("vertices")) {
            rig.vertices.push_back(read_vec3(v));
        }
        rig.triangles = j.at("triangles").get<std::vector<std::array<int, 3>>>();
        for (const auto& c : j.at("albedo")) {
            rig.albedo.push_back(read_vec3(c));
        }
        rig.skin.bone = j.at("skin_bones").get<std::vector<std::array<int, 4>>>();
        rig.skin.weight = j.at("skin_weights").get<std::vector<std::array<double, 4>>>();

        for (const auto& s : j.at("blendshapes")) {
            rig.blendshapes.labels.push_back(s.at("label").get<std::string>());
            std::vector<Vec3> offsets(rig.vertices.size());
            const auto& idx = s.at("vertices");
            const auto& off = s.at("offsets");
            if (idx.size() != off.size()) {
                throw ValidationError("rig: blendshape '" + rig.blendshapes.labels.back() +
                                      "' has mismatched vertices/offsets");
            }
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const auto v = idx[i].get<std::size_t>();
                if (v >= offsets.size()) {
                    throw ValidationError("rig: blendshape vertex index out of range");
                }
                offsets[v] = read_vec3(off[i]);
            }
            rig.blendshapes.offsets.push_back(std::move(offsets));
        }

        for (const auto& jc : j.at("controllers")) {
            Controller c;
            c.group = jc.at("group").get<std::string>();
            c.bone = jc.at("bone").get<int>();
            c.mirror_bone = jc.at("mirror_bone").get<int>();
            c.channel = static_cast<Channel>(channel_from_name(jc.at("channel").get<std::string>()));
            c.lo = jc.at("lo").get<double>();
            c.hi = jc.at("hi").get<double>();
            c.banned = jc.at("banned").get<bool>();
            rig.schema.controllers.push_back(std::move(c));
        }
        rig.landmarks = j.at("landmarks").get<std::vector<int>>();

        rig.parts.assign(rig.vertices.size(), Part::none);
        const auto& parts = j.at("parts");
        for (std::size_t p = 0; p < part_count; ++p) {
            for (const auto& v : parts.at(part_names[p])) {
                const auto i = v.get<std::size_t>();
                if (i >= rig.parts.size()) {
                    throw ValidationError(std::string("rig: part '") + part_names[p] + "' vertex out of range");
                }
                rig.parts[i] = static_cast<Part>(p);
            }
        }
        rig.pose_pivot = read_vec3(j.at("pose_pivot"));
        rig.validate();
        return rig;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("rig: ") + e.what());
    }
}

void save_rig(const FaceRig& rig, const std::filesystem::path& path)
{
    rig.validate();
    write_text_file(path, to_text(rig_to_json(rig)));
}

FaceRig load_rig(const std::filesystem::path& path)
{
    return rig_from_json(parse_text(read_text_file(path), path.string()));
}

Json params_to_json(const FacialParams& p)
{
    Json j;
    j["format"] = params_format_tag;
    j["idt"] = p.idt;
    j["exp"] = p.exp;
    j["pose"] = p.pose;
    return j;
}

FacialParams params_from_json(const Json& j, std::size_t n_idt, std::size_t n_exp)
{
    try {
        if (j.contains("format") && j.at("format").get<std::string>() != params_format_tag) {
            throw ValidationError("params: unsupported format '" + j.at("format").get<std::string>() + "'");
        }
        for (const auto& [key, value] : j.items()) {
            if (key != "format" && key != "idt" && key != "exp" && key != "pose") {
                throw ValidationError("params: unknown field '" + key + "'");
            }
        }
        FacialParams p;
        p.idt = read_reals(j, "idt");
        p.exp = read_reals(j, "exp");
        p.pose = read_reals(j, "pose");
        p.validate(n_idt, n_exp);
        return p;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("params: ") + e.what());
    }
}

void save_params(const FacialParams& p, const std::filesystem::path& path)
{
    write_text_file(path, to_text(params_to_json(p)));
}

FacialParams load_params(const std::filesystem::path& path, std::size_t n_idt, std::size_t n_exp)
{
    try {
        return params_from_json(parse_text(read_text_file(path), path.string()), n_idt, n_exp);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

} // namespace rigdiff
