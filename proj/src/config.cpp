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
#include "rigdiff/config.hpp"

#include "rigdiff/error.hpp"

#include <set>

namespace rigdiff {

namespace {

/// Reads known keys of one object and rejects everything else.
class Block
{
public:
    Block(const Json& j, std::string where) : j_(j), where_(std::move(where))
    {
        if (!j_.is_object()) {
            throw ValidationError(where_ + ": expected an object");
        }
    }

    template <typename T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        if (!j_.contains(key)) {
            return;
        }
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(where_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
        }
    }

    void path(const char* key, std::filesystem::path& out, const std::filesystem::path& base)
    {
        std::string s;
        get(key, s);
        if (!s.empty()) {
            const std::filesystem::path p(s);
            out = p.is_relative() && !base.empty() ? base / p : p;
        }
    }

    const Json* child(const char* key)
    {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (seen_.count(it.key()) == 0) {
                throw ValidationError(where_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& what)
{
    if (!ok) {
        throw ValidationError("config: " + what);
    }
}

} // namespace

TrainConfig Config::train_config() const
{
    TrainConfig t = train;
    t.loss = loss;
    t.reg = reg;
    t.seed = seed;
    return t;
}

FitConfig Config::fit_config() const
{
    FitConfig f = fit;
    f.loss = loss;
    f.reg = reg;
    return f;
}

void Config::validate() const
{
    require(camera.width > 0 && camera.height > 0, "camera size must be positive");
    make_camera().validate();
    shading.validate();
    train_config().validate();
    fit_config().validate();
    for (double w : {loss.idt, loss.ctt, loss.lm, loss.loop, loss.gan}) {
        require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and non-negative");
    }
    for (double w : {reg.idt, reg.exp, reg.pose, reg.image, reg.ref}) {
        require(std::isfinite(w) && w >= 0.0, "regularizer weights must be finite and non-negative");
    }
    require(synth.n_train >= 2 && synth.n_test >= 2, "synth sizes must be at least 2");
    require(synth.pool_fraction > 0.0 && synth.pool_fraction < 1.0, "synth.pool_fraction must lie in (0, 1)");
    require(synth.pose_spread >= 0.0 && synth.pose_spread <= 1.0, "synth.pose_spread must lie in [0, 1]");
}

void Config::check_inputs_exist() const
{
    for (const auto* p : {&paths.rig, &paths.corpus, &paths.test_corpus, &paths.checkpoint}) {
        if (!p->empty() && !std::filesystem::exists(*p)) {
            throw IoError("config: path does not exist: " + p->string());
        }
    }
}

Json Config::to_json() const
{
    Json j;
    j["format"] = config_format_tag;
    j["seed"] = seed;
    Json p;
    p["rig"] = paths.rig.string();
    p["corpus"] = paths.corpus.string();
    p["test_corpus"] = paths.test_corpus.string();
    p["checkpoint"] = paths.checkpoint.string();
    p["output_dir"] = paths.output_dir.string();
    j["paths"] = p;
    j["camera"] = Json{{"width", camera.width}, {"height", camera.height}};
    j["shading"] = Json{{"light", std::vector<double>{shading.light.x, shading.light.y, shading.light.z}},
                        {"intensity", shading.intensity},
                        {"ambient", shading.ambient},
                        {"background", shading.background}};
    j["loss"] = Json{{"idt", loss.idt}, {"ctt", loss.ctt}, {"lm", loss.lm}, {"loop", loss.loop}, {"gan", loss.gan}};
    j["reg"] = Json{{"idt", reg.idt}, {"exp", reg.exp}, {"pose", reg.pose}, {"image", reg.image}, {"ref", reg.ref}};
    j["train"] = Json{{"lr", train.lr},
                      {"epochs", train.epochs},
                      {"batch_size", train.batch_size},
                      {"warmup_epochs", train.warmup_epochs},
                      {"adversarial", train.adversarial},
                      {"non_saturating", train.non_saturating}};
    j["fit"] = Json{{"steps", fit.steps},
                    {"lr", fit.lr},
                    {"lr_final", fit.lr_final},
                    {"adam_eps", fit.adam_eps},
                    {"use_landmarks", fit.use_landmarks},
                    {"use_content", fit.use_content},
                    {"use_pixels", fit.use_pixels},
                    {"pixel_weight", fit.pixel_weight},
                    {"pixel_ramp", std::vector<double>{fit.pixel_ramp[0], fit.pixel_ramp[1]}},
                    {"landmark_final_scale", fit.landmark_final_scale},
                    {"mask_silhouette", fit.mask_silhouette}};
    j["synth"] = Json{{"n_train", synth.n_train},
                      {"n_test", synth.n_test},
                      {"pool_fraction", synth.pool_fraction},
                      {"pose_spread", synth.pose_spread}};
    return j;
}

Config Config::from_json(const Json& j, const std::filesystem::path& base_dir)
{
    Config c;
    Block top(j, "config");
    std::string format = config_format_tag;
    top.get("format", format);
    if (format != config_format_tag) {
        throw ValidationError("config: unsupported format '" + format + "'");
    }
    top.get("seed", c.seed);
    if (const Json* p = top.child("paths")) {
        Block b(*p, "config.paths");
        b.path("rig", c.paths.rig, base_dir);
        b.path("corpus", c.paths.corpus, base_dir);
        b.path("test_corpus", c.paths.test_corpus, base_dir);
        b.path("checkpoint", c.paths.checkpoint, base_dir);
        b.path("output_dir", c.paths.output_dir, base_dir);
        b.finish();
    }
    if (const Json* p = top.child("camera")) {
        Block b(*p, "config.camera");
        b.get("width", c.camera.width);
        b.get("height", c.camera.height);
        b.finish();
    }
    if (const Json* p = top.child("shading")) {
        Block b(*p, "config.shading");
        std::vector<double> light{c.shading.light.x, c.shading.light.y, c.shading.light.z};
        b.get("light", light);
        if (light.size() != 3) {
            throw ValidationError("config.shading.light: expected 3 values");
        }
        c.shading.light = {light[0], light[1], light[2]};
        b.get("intensity", c.shading.intensity);
        b.get("ambient", c.shading.ambient);
        b.get("background", c.shading.background);
        b.finish();
    }
    if (const Json* p = top.child("loss")) {
        Block b(*p, "config.loss");
        b.get("idt", c.loss.idt);
        b.get("ctt", c.loss.ctt);
        b.get("lm", c.loss.lm);
        b.get("loop", c.loss.loop);
        b.get("gan", c.loss.gan);
        b.finish();
    }
    if (const Json* p = top.child("reg")) {
        Block b(*p, "config.reg");
        b.get("idt", c.reg.idt);
        b.get("exp", c.reg.exp);
        b.get("pose", c.reg.pose);
        b.get("image", c.reg.image);
        b.get("ref", c.reg.ref);
        b.finish();
    }
    if (const Json* p = top.child("train")) {
        Block b(*p, "config.train");
        b.get("lr", c.train.lr);
        b.get("epochs", c.train.epochs);
        b.get("batch_size", c.train.batch_size);
        b.get("warmup_epochs", c.train.warmup_epochs);
        b.get("adversarial", c.train.adversarial);
        b.get("non_saturating", c.train.non_saturating);
        b.finish();
    }
    if (const Json* p = top.child("fit")) {
        Block b(*p, "config.fit");
        b.get("steps", c.fit.steps);
        b.get("lr", c.fit.lr);
        b.get("lr_final", c.fit.lr_final);
        b.get("adam_eps", c.fit.adam_eps);
        b.get("use_landmarks", c.fit.use_landmarks);
        b.get("use_content", c.fit.use_content);
        b.get("use_pixels", c.fit.use_pixels);
        b.get("pixel_weight", c.fit.pixel_weight);
        std::vector<double> ramp{c.fit.pixel_ramp[0], c.fit.pixel_ramp[1]};
        b.get("pixel_ramp", ramp);
        if (ramp.size() != 2) {
            throw ValidationError("config.fit.pixel_ramp: expected 2 values");
        }
        c.fit.pixel_ramp = {ramp[0], ramp[1]};
        b.get("landmark_final_scale", c.fit.landmark_final_scale);
        b.get("mask_silhouette", c.fit.mask_silhouette);
        b.finish();
    }
    if (const Json* p = top.child("synth")) {
        Block b(*p, "config.synth");
        b.get("n_train", c.synth.n_train);
        b.get("n_test", c.synth.n_test);
        b.get("pool_fraction", c.synth.pool_fraction);
        b.get("pose_spread", c.synth.pose_spread);
        b.finish();
    }
    top.finish();
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path)
{
    const Json j = parse_text(read_text_file(path), path.string());
    return Config::from_json(j, path.parent_path());
}

} // namespace rigdiff
