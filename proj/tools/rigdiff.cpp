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

// rigdiff command line tool: one executable, one subcommand per task.

#include "rigdiff/config.hpp"
#include "rigdiff/error.hpp"
#include "rigdiff/grad.hpp"
#include "rigdiff/image_io.hpp"
#include "rigdiff/io.hpp"
#include "rigdiff/parallel.hpp"
#include "rigdiff/rig_generator.hpp"
#include "rigdiff/trainer.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace rigdiff;

namespace {

struct Common
{
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
};

struct Paths
{
    std::string rig, corpus, checkpoint, image, landmarks, content, params, out;
};

Config load(const Common& c)
{
    Config cfg = c.config.empty() ? Config{} : load_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    return cfg;
}

/// Flag wins over config; an empty rig path falls back to the default generated rig.
FaceRig rig_for(const Config& cfg, const Paths& p)
{
    const std::filesystem::path path = p.rig.empty() ? cfg.paths.rig : std::filesystem::path(p.rig);
    if (path.empty()) {
        return generate_default_rig(0);
    }
    return load_rig(path);
}

std::filesystem::path pick(const std::string& flag, const std::filesystem::path& fallback, const char* what)
{
    std::filesystem::path p = flag.empty() ? fallback : std::filesystem::path(flag);
    if (p.empty()) {
        throw ValidationError(std::string("missing ") + what + " (give the flag or set it in the config)");
    }
    return p;
}

std::filesystem::path out_dir(const Config& cfg, const Paths& p)
{
    return p.out.empty() ? cfg.paths.output_dir : std::filesystem::path(p.out);
}

int cmd_rig_gen(const Common& c, const Paths& p)
{
    const Config cfg = load(c);
    const FaceRig rig = generate_default_rig(cfg.seed);
    rig.validate();
    save_rig(rig, pick(p.out, {}, "--out"));
    return 0;
}

int cmd_render(const Common& c, const Paths& p, const std::string& masks_out, const std::string& fragments_out)
{
    const Config cfg = load(c);
    const FaceRig rig = rig_for(cfg, p);
    const FacialParams params = p.params.empty()
                                    ? rig.neutral_params()
                                    : load_params(p.params, rig.identity_size(), rig.expression_size());
    const Camera cam = cfg.make_camera();
    const RenderResult r = render(rig, params, cam, cfg.shading);
    const std::filesystem::path out = pick(p.out, {}, "--out");
    write_png(r.image, out);
    std::filesystem::path lm = p.landmarks.empty() ? out : std::filesystem::path(p.landmarks);
    if (p.landmarks.empty()) {
        lm.replace_extension(".landmarks.txt");
    }
    write_landmarks(r.landmarks, lm);
    if (!masks_out.empty()) {
        std::vector<double> stacked(r.masks.data.begin(), r.masks.data.end());
        write_gray_png(cam.width, static_cast<int>(part_count) * cam.height, stacked, masks_out);
    }
    if (!fragments_out.empty()) {
        write_fragment_dump(r.fragments, fragments_out);
    }
    return 0;
}

int cmd_synth(const Common& c, const Paths& p, std::optional<std::size_t> n, std::optional<std::size_t> n_test,
              std::optional<double> pool)
{
    Config cfg = load(c);
    if (n) {
        cfg.synth.n_train = *n;
    }
    if (n_test) {
        cfg.synth.n_test = *n_test;
    }
    if (pool) {
        cfg.synth.pool_fraction = *pool;
    }
    cfg.validate();
    const Scene scene = Scene::make(rig_for(cfg, p), cfg.make_camera(), cfg.shading);
    const std::filesystem::path out = out_dir(cfg, p);
    // Train and test draw from disjoint seed streams.
    Rng rng(cfg.seed);
    const std::uint64_t train_seed = rng.next();
    const std::uint64_t test_seed = rng.next();
    save_corpus(synth_corpus(scene, cfg.synth.n_train, cfg.synth.pool_fraction, train_seed, cfg.synth.pose_spread),
                out / "train");
    save_corpus(synth_corpus(scene, cfg.synth.n_test, cfg.synth.pool_fraction, test_seed, cfg.synth.pose_spread),
                out / "test");
    return 0;
}

int cmd_train(const Common& c, const Paths& p, std::optional<int> epochs, bool no_adv)
{
    Config cfg = load(c);
    if (epochs) {
        cfg.train.epochs = *epochs;
    }
    if (no_adv) {
        cfg.train.adversarial = false;
    }
    cfg.validate();
    const Scene scene = Scene::make(rig_for(cfg, p), cfg.make_camera(), cfg.shading);
    const SyntheticCorpus corpus = load_corpus(pick(p.corpus, cfg.paths.corpus, "--corpus"), scene.rig);
    const std::filesystem::path out = out_dir(cfg, p);
    std::filesystem::create_directories(out);
    std::ofstream log(out / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) {
        throw IoError("cannot write " + (out / "metrics.jsonl").string());
    }
    auto sink = [&](const Json& j) {
        log << j.dump() << "\n";
        log.flush();
        if (j.at("type") == "epoch") {
            std::cerr << "epoch " << j.at("epoch") << ": " << j.at("mean").dump() << "\n";
        }
    };
    TrainResult res = train_phase2(scene, corpus, cfg.train_config(), sink, out);
    res.models.save(out / "checkpoint.bin");
    write_text_file(out / "config.json", to_text(cfg.to_json()));
    return 0;
}

int cmd_fit(const Common& c, const Paths& p, std::optional<int> steps)
{
    Config cfg = load(c);
    if (steps) {
        cfg.fit.steps = *steps;
    }
    cfg.validate();
    const Scene scene = Scene::make(rig_for(cfg, p), cfg.make_camera(), cfg.shading);
    FitTarget target;
    target.image = read_png(pick(p.image, {}, "--image"));
    target.landmarks = LandmarkSet::with_default_weights(read_landmarks(pick(p.landmarks, {}, "--landmarks")));
    if (!p.content.empty()) {
        int w = 0, h = 0;
        target.content = read_gray_png(p.content, w, h);
    }
    const FitResult r = fit_single(scene, target, cfg.fit_config());
    const std::filesystem::path out = pick(p.out, {}, "--out");
    save_params(r.params, out);
    Json trace;
    trace["best_loss"] = r.best_loss;
    trace["best_step"] = r.best_step;
    trace["steps_run"] = r.steps_run;
    trace["diverged"] = r.diverged;
    trace["loss"] = r.loss_trace;
    std::filesystem::path tp = out;
    tp.replace_extension(".trace.json");
    write_text_file(tp, to_text(trace));
    if (r.diverged) {
        std::cerr << "fit: stopped early, loss exceeded 10x its initial value at step " << r.steps_run << "\n";
    }
    return 0;
}

TrainedModels models_for(const Config& cfg, const Paths& p, const FaceRig& rig)
{
    TrainedModels m = TrainedModels::init(rig, 0);
    m.load(pick(p.checkpoint, cfg.paths.checkpoint, "--checkpoint"));
    return m;
}

int cmd_predict(const Common& c, const Paths& p)
{
    const Config cfg = load(c);
    const Scene scene = Scene::make(rig_for(cfg, p), cfg.make_camera(), cfg.shading);
    const TrainedModels m = models_for(cfg, p, scene.rig);
    const FacialParams params = predict(m.pred, scene.providers, read_png(pick(p.image, {}, "--image")));
    save_params(params, pick(p.out, {}, "--out"));
    return 0;
}

int cmd_eval(const Common& c, const Paths& p)
{
    const Config cfg = load(c);
    const Scene scene = Scene::make(rig_for(cfg, p), cfg.make_camera(), cfg.shading);
    const TrainedModels m = models_for(cfg, p, scene.rig);
    const SyntheticCorpus test = load_corpus(pick(p.corpus, cfg.paths.test_corpus, "--corpus"), scene.rig);
    const Json j = evaluate_disentanglement(scene, test, m).to_json();
    if (p.out.empty()) {
        std::cout << to_text(j);
    } else {
        write_text_file(p.out, to_text(j));
    }
    return 0;
}

int cmd_gradcheck(const Common& c, const Paths& p, double threshold)
{
    const Config cfg = load(c);
    const FaceRig rig = rig_for(cfg, p);
    const GradcheckReport rep = gradcheck(rig, cfg.make_camera(), cfg.shading, cfg.seed);
    Json j = rep.to_json();
    j["threshold"] = threshold;
    const bool render_ok = rep.render.pass_rate() >= threshold;
    const bool lm_ok = rep.landmarks.count(FdStatus::fail) == 0;
    j["passed"] = render_ok && lm_ok;
    if (!p.out.empty()) {
        write_text_file(p.out, to_text(j));
    }
    std::cout << "render: pass " << rep.render.count(FdStatus::pass) << ", fail " << rep.render.count(FdStatus::fail)
              << ", unstable " << rep.render.count(FdStatus::unstable) << ", skipped "
              << rep.render.count(FdStatus::skipped) << ", rate " << rep.render.pass_rate() << "\n"
              << "landmarks: pass " << rep.landmarks.count(FdStatus::pass) << ", fail "
              << rep.landmarks.count(FdStatus::fail) << "\n";
    return render_ok && lm_ok ? 0 : static_cast<int>(ExitCode::numerical);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"rigdiff: differentiable face rig rendering, fitting and training"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    Paths paths;
    app.add_option("--config", common.config, "Configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", common.seed, "Seed (overrides the config)");
    app.add_option("--threads", common.threads, "Worker threads (0 = all cores)")->default_val(1);

    auto* rig_gen = app.add_subcommand("rig-gen", "Generate the default rig");
    rig_gen->add_option("--out", paths.out, "Output rig file")->required();

    std::string masks_out, fragments_out;
    auto* render_cmd = app.add_subcommand("render", "Render a parameter file");
    render_cmd->add_option("--rig", paths.rig, "Rig file");
    render_cmd->add_option("--params", paths.params, "Parameter file (neutral when omitted)");
    render_cmd->add_option("--out", paths.out, "Output PNG")->required();
    render_cmd->add_option("--landmarks", paths.landmarks, "Landmark file (default: <out>.landmarks.txt)");
    render_cmd->add_option("--masks", masks_out, "Part masks as a stacked grayscale PNG");
    render_cmd->add_option("--fragments", fragments_out, "Fragment buffer dump");

    std::optional<std::size_t> n, n_test;
    std::optional<double> pool;
    auto* synth = app.add_subcommand("synth", "Synthesize train and test corpora");
    synth->add_option("--rig", paths.rig, "Rig file");
    synth->add_option("--out", paths.out, "Output directory");
    synth->add_option("--n", n, "Training samples");
    synth->add_option("--n-test", n_test, "Test samples");
    synth->add_option("--pool-fraction", pool, "Fraction of poker-face samples");

    std::optional<int> epochs;
    bool no_adv = false;
    auto* train = app.add_subcommand("train", "Train the predictor and discriminator");
    train->add_option("--rig", paths.rig, "Rig file");
    train->add_option("--corpus", paths.corpus, "Training corpus directory");
    train->add_option("--out", paths.out, "Output directory");
    train->add_option("--epochs", epochs, "Epochs");
    train->add_flag("--no-adversarial", no_adv, "Train without the adversarial term");

    std::optional<int> steps;
    auto* fit = app.add_subcommand("fit", "Fit parameters to one image by direct optimization");
    fit->add_option("--rig", paths.rig, "Rig file");
    fit->add_option("--image", paths.image, "Target PNG")->required();
    fit->add_option("--landmarks", paths.landmarks, "Target landmarks")->required();
    fit->add_option("--content", paths.content, "Target content map PNG");
    fit->add_option("--out", paths.out, "Output parameter file")->required();
    fit->add_option("--steps", steps, "Optimizer steps");

    auto* predict_cmd = app.add_subcommand("predict", "Predict parameters for one image");
    predict_cmd->add_option("--rig", paths.rig, "Rig file");
    predict_cmd->add_option("--checkpoint", paths.checkpoint, "Checkpoint");
    predict_cmd->add_option("--image", paths.image, "Input PNG")->required();
    predict_cmd->add_option("--out", paths.out, "Output parameter file")->required();

    auto* eval = app.add_subcommand("eval", "Disentanglement metrics on a test corpus");
    eval->add_option("--rig", paths.rig, "Rig file");
    eval->add_option("--checkpoint", paths.checkpoint, "Checkpoint");
    eval->add_option("--corpus", paths.corpus, "Test corpus directory");
    eval->add_option("--out", paths.out, "Output metrics file (stdout when omitted)");

    double threshold = 0.95;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the render and landmark gradients");
    grad->add_option("--rig", paths.rig, "Rig file");
    grad->add_option("--out", paths.out, "Report file");
    grad->add_option("--threshold", threshold, "Minimum render pass rate")->default_val(0.95);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::validation);
    }

    CLI::App* cmd = app.get_subcommands().front();
    try {
        set_thread_count(common.threads);
        if (cmd == rig_gen) {
            return cmd_rig_gen(common, paths);
        }
        if (cmd == render_cmd) {
            return cmd_render(common, paths, masks_out, fragments_out);
        }
        if (cmd == synth) {
            return cmd_synth(common, paths, n, n_test, pool);
        }
        if (cmd == train) {
            return cmd_train(common, paths, epochs, no_adv);
        }
        if (cmd == fit) {
            return cmd_fit(common, paths, steps);
        }
        if (cmd == predict_cmd) {
            return cmd_predict(common, paths);
        }
        if (cmd == eval) {
            return cmd_eval(common, paths);
        }
        if (cmd == grad) {
            return cmd_gradcheck(common, paths, threshold);
        }
    } catch (const Error& e) {
        std::cerr << "rigdiff " << cmd->get_name() << ": " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "rigdiff " << cmd->get_name() << ": " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    } catch (const std::exception& e) {
        std::cerr << "rigdiff " << cmd->get_name() << ": " << e.what() << "\n";
        return static_cast<int>(ExitCode::validation);
    }
    return static_cast<int>(ExitCode::validation);
}
