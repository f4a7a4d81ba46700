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
#include "rigdiff/trainer.hpp"

#include "rigdiff/error.hpp"
#include "rigdiff/grad.hpp"
#include "rigdiff/image_io.hpp"
#include "rigdiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace rigdiff {

namespace {

std::vector<bool> banned_mask(const FaceRig& rig)
{
    std::vector<bool> m(rig.identity_size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = rig.schema.controllers[i].banned;
    }
    return m;
}

Image quantize(const Image& in)
{
    Image out = in;
    for (double& v : out.data) {
        v = to_byte(v) / 255.0;
    }
    return out;
}

std::vector<double> quantize(std::vector<double> v)
{
    for (double& x : v) {
        x = to_byte(x) / 255.0;
    }
    return v;
}

Matrix column(const std::vector<double>& v)
{
    return Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1);
}

std::vector<double> to_vector(const Matrix& m)
{
    return std::vector<double>(m.data(), m.data() + m.size());
}

std::string sample_id(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%05zu", i);
    return buf;
}

std::string hex(std::uint64_t v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void add_into(std::vector<Matrix>& acc, const std::vector<Matrix>& g)
{
    if (acc.empty()) {
        acc = g;
        return;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += g[i];
    }
}

void add_into(std::vector<double>& acc, const std::vector<double>& g, double s = 1.0)
{
    for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += s * g[i];
    }
}

} // namespace

Scene Scene::make(FaceRig rig, Camera camera, ShadingParams shading)
{
    rig.validate();
    camera.validate();
    shading.validate();
    Scene s;
    s.providers = Providers::standard(rig, camera);
    s.rig = std::move(rig);
    s.camera = camera;
    s.shading = shading;
    return s;
}

// ---------------------------------------------------------------------------
// Corpus

std::size_t SyntheticCorpus::pool_count() const
{
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const SyntheticSample& s) { return s.poker_face; }));
}

std::vector<std::size_t> SyntheticCorpus::pool_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].poker_face) {
            out.push_back(i);
        }
    }
    return out;
}

void SyntheticCorpus::validate() const
{
    const std::size_t pool = pool_count();
    if (pool == 0 || pool == samples.size()) {
        throw ValidationError("corpus: needs at least one poker-face and one expressive sample (have " +
                              std::to_string(pool) + " of " + std::to_string(samples.size()) + " in the pool)");
    }
    for (const auto& s : samples) {
        if (s.landmarks.size() != landmark_count || s.content.size() != content_dim) {
            throw ValidationError("corpus: sample " + s.id + " is incomplete");
        }
        if (s.poker_face) {
            const bool neutral = std::all_of(s.truth.exp.begin(), s.truth.exp.end(), [](double v) { return v == 0.0; }) &&
                                 std::all_of(s.truth.pose.begin(), s.truth.pose.end(), [](double v) { return v == 0.0; });
            if (!neutral) {
                throw ValidationError("corpus: poker-face sample " + s.id + " has expression or pose");
            }
        }
    }
}

FacialParams sample_params(const FaceRig& rig, Rng& rng, bool poker_face, double pose_spread)
{
    FacialParams p = rig.neutral_params();
    for (std::size_t i = 0; i < p.idt.size(); ++i) {
        const double u = rng.uniform();
        if (!rig.schema.controllers[i].banned) {
            p.idt[i] = u;
        }
    }
    for (double& e : p.exp) {
        const double u = rng.uniform();
        e = poker_face ? 0.0 : u;
    }
    for (std::size_t i = 0; i < pose_dim; ++i) {
        const double u = rng.uniform(-1.0, 1.0);
        p.pose[i] = poker_face ? 0.0 : u * pose_spread * pose_limit(i);
    }
    return p;
}

Image render_quantized(const Scene& scene, const FacialParams& params, RenderResult* full)
{
    RenderResult r = render(scene.rig, params, scene.camera, scene.shading);
    Image img = quantize(r.image);
    if (full != nullptr) {
        *full = std::move(r);
    }
    return img;
}

SyntheticCorpus synth_corpus(const Scene& scene, std::size_t n, double pool_fraction, std::uint64_t seed,
                             double pose_spread)
{
    if (n < 2) {
        throw ValidationError("synth: need at least 2 samples");
    }
    if (!(pool_fraction > 0.0 && pool_fraction < 1.0)) {
        throw ValidationError("synth: pool_fraction must lie in (0, 1)");
    }
    if (!(pose_spread >= 0.0 && pose_spread <= 1.0)) {
        throw ValidationError("synth: pose_spread must lie in [0, 1]");
    }
    const auto pool = static_cast<std::size_t>(std::llround(static_cast<double>(n) * pool_fraction));
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    rng.shuffle(order);
    std::vector<bool> in_pool(n, false);
    for (std::size_t k = 0; k < pool; ++k) {
        in_pool[order[k]] = true;
    }

    SyntheticCorpus c;
    c.pool_fraction = pool_fraction;
    c.pose_spread = pose_spread;
    c.seed = seed;
    c.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        SyntheticSample& s = c.samples[i];
        s.id = sample_id(i);
        s.poker_face = in_pool[i];
        s.truth = sample_params(scene.rig, rng, s.poker_face, pose_spread);
        RenderResult r;
        s.image = render_quantized(scene, s.truth, &r);
        s.landmarks = r.landmarks;
        s.content = quantize(content_features(r.masks));
    }
    c.validate();
    return c;
}

void save_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir)
{
    corpus.validate();
    Json m;
    m["format"] = corpus_format_tag;
    m["width"] = corpus.samples.front().image.width;
    m["height"] = corpus.samples.front().image.height;
    m["pool_fraction"] = corpus.pool_fraction;
    m["pose_spread"] = corpus.pose_spread;
    m["seed"] = corpus.seed;
    Json list = Json::array();
    for (const auto& s : corpus.samples) {
        Json e;
        e["id"] = s.id;
        e["image"] = "images/" + s.id + ".png";
        e["landmarks"] = "landmarks/" + s.id + ".txt";
        e["content"] = "content/" + s.id + ".png";
        e["poker_face"] = s.poker_face;
        Json p = params_to_json(s.truth);
        p.erase("format");
        e["params"] = p;
        list.push_back(e);

        std::filesystem::create_directories(dir / "images");
        std::filesystem::create_directories(dir / "landmarks");
        std::filesystem::create_directories(dir / "content");
        write_png(s.image, dir / e["image"].get<std::string>());
        write_landmarks(s.landmarks, dir / e["landmarks"].get<std::string>());
        write_gray_png(content_grid, static_cast<int>(part_count) * content_grid, s.content,
                       dir / e["content"].get<std::string>());
    }
    m["samples"] = list;
    write_text_file(dir / "manifest.json", to_text(m));
}

SyntheticCorpus load_corpus(const std::filesystem::path& dir, const FaceRig& rig)
{
    const Json m = parse_text(read_text_file(dir / "manifest.json"), (dir / "manifest.json").string());
    SyntheticCorpus c;
    try {
        if (m.at("format").get<std::string>() != corpus_format_tag) {
            throw ValidationError("corpus manifest: unsupported format '" + m.at("format").get<std::string>() + "'");
        }
        c.pool_fraction = m.at("pool_fraction").get<double>();
        c.pose_spread = m.at("pose_spread").get<double>();
        c.seed = m.at("seed").get<std::uint64_t>();
        const int width = m.at("width").get<int>();
        const int height = m.at("height").get<int>();
        for (const Json& e : m.at("samples")) {
            SyntheticSample s;
            s.id = e.at("id").get<std::string>();
            s.poker_face = e.at("poker_face").get<bool>();
            Json p = e.at("params");
            p["format"] = params_format_tag;
            s.truth = params_from_json(p, rig.identity_size(), rig.expression_size());
            s.image = read_png(dir / e.at("image").get<std::string>());
            if (s.image.width != width || s.image.height != height) {
                throw ValidationError("corpus: image of " + s.id + " has the wrong size");
            }
            s.landmarks = read_landmarks(dir / e.at("landmarks").get<std::string>());
            int cw = 0, ch = 0;
            s.content = read_gray_png(dir / e.at("content").get<std::string>(), cw, ch);
            if (cw != content_grid || ch != static_cast<int>(part_count) * content_grid) {
                throw ValidationError("corpus: content map of " + s.id + " has the wrong size");
            }
            c.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("corpus manifest: " + std::string(e.what()));
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Models

void TrainConfig::validate() const
{
    if (!(lr > 0.0) || epochs < 1 || batch_size < 1 || warmup_epochs < 0) {
        throw ValidationError("train config: lr > 0, epochs >= 1, batch_size >= 1 and warmup_epochs >= 0 required");
    }
}

TrainedModels TrainedModels::init(const FaceRig& rig, std::uint64_t seed)
{
    Rng rng(seed);
    TrainedModels m;
    const auto banned = banned_mask(rig);
    m.pred = Translator("pred", rig.identity_size(), rig.expression_size(), banned, rng.next());
    m.ref = Translator("ref", rig.identity_size(), 0, banned, rng.next());
    m.disc = Discriminator(rig.identity_size(), rng.next());
    return m;
}

namespace {

std::vector<ParamRef> all_params(TrainedModels& m)
{
    std::vector<ParamRef> out = m.pred.params();
    for (auto& p : m.ref.params()) {
        out.push_back(p);
    }
    for (auto& p : m.disc.params()) {
        out.push_back(p);
    }
    return out;
}

} // namespace

std::vector<NamedTensor> TrainedModels::tensors() { return snapshot(all_params(*this)); }

void TrainedModels::save(const std::filesystem::path& path) { save_checkpoint(tensors(), path); }

void TrainedModels::load(const std::filesystem::path& path)
{
    const auto t = load_checkpoint(path);
    const auto p = all_params(*this);
    if (t.size() != p.size()) {
        throw ValidationError("checkpoint " + path.string() + ": expected " + std::to_string(p.size()) +
                              " tensors, found " + std::to_string(t.size()));
    }
    restore_params(t, p);
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// One rendered branch (pred or ref) of a sample.
struct Branch
{
    FacialParams phi;
    RenderResult render;
    std::vector<double> feat; ///< features of the render
    double idt = 0.0, ctt = 0.0, lm = 0.0, loop = 0.0;
    RenderAdjoint adj;
    std::vector<double> d_feat;
    std::vector<double> d_phi; ///< direct gradient, flattened [idt, exp, pose]
};

struct SampleTarget
{
    const SyntheticSample* sample;
    const std::vector<double>* feat;
    LandmarkSet landmarks;
};

/**
 * Forward of one branch and the adjoints of its similarity terms, each
 * already multiplied by its weight and `scale`. Loop-back parameter
 * gradients of the predictor land in `loop_grads`.
 */
void run_branch(const Scene& scene, const Translator& pred, const SampleTarget& t, Branch& b, const LossWeights& w,
                double scale, std::vector<Matrix>& loop_grads)
{
    b.render = render(scene.rig, b.phi, scene.camera, scene.shading);
    b.feat = scene.providers.features(b.render.image);
    b.d_feat.assign(b.feat.size(), 0.0);
    b.d_phi.assign(b.phi.size(), 0.0);

    const std::size_t half = scene.providers.recg->dim();
    std::vector<double> d_recg;
    b.idt = identity_loss(std::vector<double>(t.feat->begin(), t.feat->begin() + static_cast<std::ptrdiff_t>(half)),
                          std::vector<double>(b.feat.begin(), b.feat.begin() + static_cast<std::ptrdiff_t>(half)),
                          &d_recg);
    for (std::size_t i = 0; i < half; ++i) {
        b.d_feat[i] += w.idt * scale * d_recg[i];
    }

    std::vector<double> d_content;
    b.ctt = content_loss(t.sample->content, content_features(b.render.masks), &d_content);
    for (double& v : d_content) {
        v *= w.ctt * scale;
    }
    b.adj.d_masks = content_features_vjp(scene.camera.width, scene.camera.height, d_content);

    b.lm = landmark_loss(t.landmarks, b.render.landmarks, &b.adj.d_landmarks);
    for (auto& p : b.adj.d_landmarks) {
        p[0] *= w.lm * scale;
        p[1] *= w.lm * scale;
    }

    Translator::Cache cache;
    const Translator::Outputs again = pred.forward(column(b.feat), &cache);
    const std::vector<double> phi_flat = b.phi.flatten();
    const std::vector<double> again_flat = pred.to_params(again).front().flatten();
    std::vector<double> d_again;
    b.loop = loopback_loss(phi_flat, again_flat, &d_again);
    std::vector<double> d_phi_loop;
    loopback_loss(again_flat, phi_flat, &d_phi_loop);
    add_into(b.d_phi, d_phi_loop, w.loop * scale);

    Translator::Outputs d_out;
    const auto n_idt = static_cast<Eigen::Index>(again.idt.rows());
    const auto n_exp = static_cast<Eigen::Index>(again.exp.rows());
    d_out.idt = Matrix(n_idt, 1);
    d_out.exp = Matrix(n_exp, 1);
    d_out.pose = Matrix(static_cast<Eigen::Index>(pose_dim), 1);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < n_idt; ++r) {
        d_out.idt(r, 0) = w.loop * scale * d_again[static_cast<std::size_t>(k++)];
    }
    for (Eigen::Index r = 0; r < n_exp; ++r) {
        d_out.exp(r, 0) = w.loop * scale * d_again[static_cast<std::size_t>(k++)];
    }
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(pose_dim); ++r) {
        d_out.pose(r, 0) = w.loop * scale * d_again[static_cast<std::size_t>(k++)];
    }
    Matrix d_feat_loop;
    add_into(loop_grads, pred.backward(cache, d_out, &d_feat_loop));
    for (std::size_t i = 0; i < b.d_feat.size(); ++i) {
        b.d_feat[i] += d_feat_loop(static_cast<Eigen::Index>(i), 0);
    }
}

ParamGradient finish_branch(const Scene& scene, Branch& b)
{
    std::vector<double> d_img = scene.providers.features_vjp(b.render.image, b.d_feat);
    if (b.adj.d_image.empty()) {
        b.adj.d_image = std::move(d_img);
    } else {
        add_into(b.adj.d_image, d_img);
    }
    ParamGradient g = vjp_render(scene.rig, b.phi, scene.camera, scene.shading, b.render, b.adj);
    std::size_t k = 0;
    for (double& v : g.d_idt) {
        v += b.d_phi[k++];
    }
    for (double& v : g.d_exp) {
        v += b.d_phi[k++];
    }
    for (double& v : g.d_pose) {
        v += b.d_phi[k++];
    }
    return g;
}

/// b_idt |idt|^2 + b_exp |exp|^2 + b_pose |pose|^2, gradient added into d (flattened).
double own_regularizer(const FacialParams& p, const RegWeights& w, double scale, std::vector<double>& d)
{
    double r = 0.0;
    std::size_t k = 0;
    for (double v : p.idt) {
        r += w.idt * v * v;
        d[k++] += scale * 2.0 * w.idt * v;
    }
    for (double v : p.exp) {
        r += w.exp * v * v;
        d[k++] += scale * 2.0 * w.exp * v;
    }
    for (double v : p.pose) {
        r += w.pose * v * v;
        d[k++] += scale * 2.0 * w.pose * v;
    }
    return r;
}

void write_column(Translator::Outputs& d_out, Eigen::Index col, const ParamGradient& g, bool with_exp)
{
    for (std::size_t i = 0; i < g.d_idt.size(); ++i) {
        d_out.idt(static_cast<Eigen::Index>(i), col) = g.d_idt[i];
    }
    if (with_exp) {
        for (std::size_t i = 0; i < g.d_exp.size(); ++i) {
            d_out.exp(static_cast<Eigen::Index>(i), col) = g.d_exp[i];
        }
    }
    for (std::size_t i = 0; i < pose_dim; ++i) {
        d_out.pose(static_cast<Eigen::Index>(i), col) = g.d_pose[i];
    }
}

Translator::Outputs zero_outputs(const Translator::Outputs& like)
{
    return {Matrix::Zero(like.idt.rows(), like.idt.cols()), Matrix::Zero(like.exp.rows(), like.exp.cols()),
            Matrix::Zero(like.pose.rows(), like.pose.cols())};
}

Matrix gather(const std::vector<std::vector<double>>& feats, const std::vector<std::size_t>& idx)
{
    Matrix x(static_cast<Eigen::Index>(translator_width), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
        x.col(static_cast<Eigen::Index>(c)) = column(feats[idx[c]]);
    }
    return x;
}

std::vector<double> row0(const Matrix& m) { return to_vector(m.row(0).transpose()); }

/// Running means of named values, kept in first-seen order.
struct Averages
{
    std::vector<std::pair<std::string, double>> sums;
    std::vector<std::size_t> counts;

    void add(const std::string& name, double v)
    {
        for (std::size_t i = 0; i < sums.size(); ++i) {
            if (sums[i].first == name) {
                sums[i].second += v;
                ++counts[i];
                return;
            }
        }
        sums.emplace_back(name, v);
        counts.push_back(1);
    }

    Json to_json() const
    {
        Json j = Json::object();
        for (std::size_t i = 0; i < sums.size(); ++i) {
            j[sums[i].first] = sums[i].second / static_cast<double>(counts[i]);
        }
        return j;
    }

    double mean(const std::string& name) const
    {
        for (std::size_t i = 0; i < sums.size(); ++i) {
            if (sums[i].first == name) {
                return sums[i].second / static_cast<double>(counts[i]);
            }
        }
        return 0.0;
    }
};

} // namespace

TrainResult train_phase2(const Scene& scene, const SyntheticCorpus& corpus, const TrainConfig& config,
                         const MetricsSink& sink, const std::filesystem::path& dump_dir)
{
    config.validate();
    corpus.validate();
    const LossWeights& w = config.loss;
    const RegWeights& rw = config.reg;

    Rng rng(config.seed);
    TrainResult result;
    result.models = TrainedModels::init(scene.rig, rng.next());
    TrainedModels& m = result.models;

    AdamState adam_pred, adam_ref, adam_disc;
    adam_pred.lr = adam_ref.lr = adam_disc.lr = config.lr;

    std::vector<std::vector<double>> feats(corpus.samples.size());
    std::vector<LandmarkSet> marks(corpus.samples.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        feats[i] = scene.providers.features(corpus.samples[i].image);
        marks[i] = LandmarkSet::with_default_weights(corpus.samples[i].landmarks);
    }
    const std::vector<std::size_t> pool = corpus.pool_indices();
    std::vector<std::size_t> pool_order = pool;
    std::size_t pool_cursor = pool_order.size();

    auto emit = [&](const Json& j) {
        result.log.push_back(j);
        if (sink) {
            sink(j);
        }
    };

    std::size_t step = 0;
    const std::size_t n = corpus.samples.size();
    const auto bsize = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const bool warmup = epoch <= config.warmup_epochs;
        const bool gan_on = !warmup && config.adversarial;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        Averages epoch_avg;

        for (std::size_t start = 0; start < n; start += bsize) {
            ++step;
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bsize)));
            const double scale = 1.0 / static_cast<double>(batch.size());
            const Matrix x = gather(feats, batch);

            Translator::Cache cache_pred, cache_ref;
            const Translator::Outputs out_pred = m.pred.forward(x, &cache_pred);
            const Translator::Outputs out_ref = m.ref.forward(x, &cache_ref);
            const auto phi_pred = m.pred.to_params(out_pred);
            const auto phi_ref = m.ref.to_params(out_ref);

            LossBreakdown terms;
            Json step_rec;
            Json alternation;
            auto mark = [&](const char* key, std::uint64_t sum) {
                if (config.verify_alternation) {
                    alternation[key] = hex(sum);
                }
            };
            auto sum_pred = [&] { return checksum(std::as_const(m.pred).params()); };
            auto sum_ref = [&] { return checksum(std::as_const(m.ref).params()); };
            auto sum_disc = [&] { return checksum(std::as_const(m.disc).params()); };
            if (config.verify_alternation) {
                mark("pred_before_d", sum_pred());
                mark("ref_before_d", sum_ref());
            }

            // D step on detached outputs.
            Matrix ref_pool_idt;
            if (!warmup) {
                std::vector<std::size_t> pb;
                while (pb.size() < batch.size()) {
                    if (pool_cursor >= pool_order.size()) {
                        rng.shuffle(pool_order);
                        pool_cursor = 0;
                    }
                    pb.push_back(pool_order[pool_cursor++]);
                }
                ref_pool_idt = m.ref.forward(gather(feats, pb)).idt;
                Discriminator::Cache cr, cp;
                const Matrix dr = m.disc.forward(ref_pool_idt, &cr);
                const Matrix dp = m.disc.forward(out_pred.idt, &cp);
                std::vector<double> gr, gp;
                const double l = gan_loss(row0(dr), row0(dp), &gr, &gp);
                Matrix dgr(1, static_cast<Eigen::Index>(gr.size())), dgp(1, static_cast<Eigen::Index>(gp.size()));
                for (std::size_t i = 0; i < gr.size(); ++i) {
                    dgr(0, static_cast<Eigen::Index>(i)) = -gr[i];
                }
                for (std::size_t i = 0; i < gp.size(); ++i) {
                    dgp(0, static_cast<Eigen::Index>(i)) = -gp[i];
                }
                auto g = m.disc.backward(cr, dgr);
                add_into(g, m.disc.backward(cp, dgp));
                double correct = 0.0;
                for (Eigen::Index i = 0; i < dr.cols(); ++i) {
                    correct += dr(0, i) > 0.5 ? 1.0 : 0.0;
                }
                for (Eigen::Index i = 0; i < dp.cols(); ++i) {
                    correct += dp(0, i) < 0.5 ? 1.0 : 0.0;
                }
                const double acc = correct / static_cast<double>(dr.cols() + dp.cols());
                if (!std::isfinite(l) || !adam_step(adam_disc, m.disc.params(), g)) {
                    throw NumericalError("train: non-finite discriminator update at step " + std::to_string(step));
                }
                step_rec["d_loss"] = l;
                step_rec["d_accuracy"] = acc;
                epoch_avg.add("d_loss", l);
                epoch_avg.add("d_accuracy", acc);
            }

            if (config.verify_alternation) {
                mark("pred_after_d", sum_pred());
                mark("ref_after_d", sum_ref());
                mark("disc_before_p", sum_disc());
            }

            // P step.
            Translator::Outputs d_pred = zero_outputs(out_pred);
            Translator::Outputs d_ref = zero_outputs(out_ref);
            std::vector<Matrix> loop_grads;
            SimilarityTerms st;
            double reg = 0.0;
            bool ref_used = false;
            for (std::size_t c = 0; c < batch.size(); ++c) {
                const std::size_t i = batch[c];
                const SampleTarget target{&corpus.samples[i], &feats[i], marks[i]};
                const bool ref_active = !warmup || corpus.samples[i].poker_face;
                ref_used = ref_used || ref_active;

                Branch bp;
                bp.phi = phi_pred[c];
                run_branch(scene, m.pred, target, bp, w, scale, loop_grads);
                st.idt_pred += scale * bp.idt;
                st.ctt_pred += scale * bp.ctt;
                st.lm_pred += scale * bp.lm;
                st.loop_pred += scale * bp.loop;

                Branch br;
                if (ref_active) {
                    br.phi = phi_ref[c];
                    br.phi.exp.assign(scene.rig.expression_size(), 0.0);
                    run_branch(scene, m.pred, target, br, w, scale, loop_grads);
                    st.idt_ref += scale * br.idt;
                    st.ctt_ref += scale * br.ctt;
                    st.lm_ref += scale * br.lm;
                    st.loop_ref += scale * br.loop;

                    RegularizerGrad rg;
                    reg += scale * regularizer(bp.phi, br.phi, &bp.render.image, &br.render.image, rw, &rg);
                    std::size_t k = 0;
                    for (double v : rg.d_idt) {
                        bp.d_phi[k++] += scale * v;
                    }
                    for (double v : rg.d_exp) {
                        bp.d_phi[k++] += scale * v;
                    }
                    for (double v : rg.d_pose) {
                        bp.d_phi[k++] += scale * v;
                    }
                    k = 0;
                    for (double v : rg.d_idt_ref) {
                        br.d_phi[k++] += scale * v;
                    }
                    k += br.phi.exp.size();
                    for (double v : rg.d_pose_ref) {
                        br.d_phi[k++] += scale * v;
                    }
                    bp.adj.d_image = rg.d_image_pred;
                    br.adj.d_image = rg.d_image_ref;
                    for (double& v : bp.adj.d_image) {
                        v *= scale;
                    }
                    for (double& v : br.adj.d_image) {
                        v *= scale;
                    }
                    write_column(d_ref, static_cast<Eigen::Index>(c), finish_branch(scene, br), false);
                } else {
                    reg += scale * own_regularizer(bp.phi, rw, scale, bp.d_phi);
                }
                write_column(d_pred, static_cast<Eigen::Index>(c), finish_branch(scene, bp), true);
            }

            if (gan_on) {
                Discriminator::Cache cp;
                const Matrix dp = m.disc.forward(out_pred.idt, &cp);
                const std::vector<double> dr = row0(m.disc.forward(ref_pool_idt));
                std::vector<double> gp;
                st.gan = gan_loss(dr, row0(dp), nullptr, &gp);
                if (config.non_saturating) {
                    for (Eigen::Index c = 0; c < dp.cols(); ++c) {
                        const double v = std::clamp(dp(0, c), gan_clamp, 1.0 - gan_clamp);
                        gp[static_cast<std::size_t>(c)] =
                            (dp(0, c) > gan_clamp && dp(0, c) < 1.0 - gan_clamp) ? -1.0 / (v * static_cast<double>(dp.cols()))
                                                                                  : 0.0;
                    }
                }
                Matrix seed(1, dp.cols());
                for (Eigen::Index c = 0; c < dp.cols(); ++c) {
                    seed(0, c) = w.gan * gp[static_cast<std::size_t>(c)];
                }
                Matrix d_idt;
                m.disc.backward(cp, seed, &d_idt);
                d_pred.idt += d_idt;
            }

            terms.add("idt", st.idt_pred + st.idt_ref);
            terms.add("ctt", st.ctt_pred + st.ctt_ref);
            terms.add("lm", st.lm_pred + st.lm_ref);
            terms.add("loop", st.loop_pred + st.loop_ref);
            if (gan_on) {
                terms.add("gan", st.gan);
            }
            terms.add("reg", reg);
            LossWeights applied = w;
            if (!gan_on) {
                applied.gan = 0.0;
            }
            terms.total = similarity_total(st, applied) + reg;

            if (!std::isfinite(terms.total)) {
                if (!dump_dir.empty()) {
                    Json d;
                    d["epoch"] = epoch;
                    d["step"] = step;
                    Json ids = Json::array();
                    for (std::size_t i : batch) {
                        ids.push_back(corpus.samples[i].id);
                    }
                    d["samples"] = ids;
                    Json t = Json::object();
                    for (const auto& [k, v] : terms.terms) {
                        t[k] = std::isfinite(v) ? Json(v) : Json(std::to_string(v));
                    }
                    d["terms"] = t;
                    write_text_file(dump_dir / "nonfinite_batch.json", to_text(d));
                }
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(step));
            }

            auto g_pred = m.pred.backward(cache_pred, d_pred);
            add_into(g_pred, loop_grads);
            if (!adam_step(adam_pred, m.pred.params(), g_pred)) {
                throw NumericalError("train: non-finite predictor gradient at step " + std::to_string(step));
            }
            if (ref_used) {
                const auto g_ref = m.ref.backward(cache_ref, d_ref);
                if (!adam_step(adam_ref, m.ref.params(), g_ref)) {
                    throw NumericalError("train: non-finite reference gradient at step " + std::to_string(step));
                }
            }

            Json rec;
            rec["type"] = "step";
            rec["epoch"] = epoch;
            rec["step"] = step;
            rec["loss"] = terms.to_json();
            for (auto it = step_rec.begin(); it != step_rec.end(); ++it) {
                rec[it.key()] = it.value();
            }
            if (config.verify_alternation) {
                mark("disc_after_p", sum_disc());
                rec["alternation"] = alternation;
            }
            emit(rec);
            for (const auto& [k, v] : terms.terms) {
                epoch_avg.add(k, v);
            }
            epoch_avg.add("total", terms.total);
        }

        Json rec;
        rec["type"] = "epoch";
        rec["epoch"] = epoch;
        rec["warmup"] = warmup;
        rec["mean"] = epoch_avg.to_json();
        rec["checksum_pred"] = hex(checksum(std::as_const(m.pred).params()));
        rec["checksum_ref"] = hex(checksum(std::as_const(m.ref).params()));
        rec["checksum_disc"] = hex(checksum(std::as_const(m.disc).params()));
        emit(rec);
        if (epoch == config.epochs) {
            result.final_disc_accuracy = epoch_avg.mean("d_accuracy");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Inference and fitting

FacialParams predict(const Translator& pred, const Providers& providers, const Image& image)
{
    return pred.forward_one(providers.features(image));
}

void FitConfig::validate() const
{
    if (steps < 0 || !(lr > 0.0) || !(lr_final > 0.0) || lr_final > lr || !(adam_eps > 0.0)) {
        throw ValidationError("fit config: steps >= 0, 0 < lr_final <= lr and adam_eps > 0 required");
    }
    if (!(pixel_ramp[0] >= 0.0 && pixel_ramp[0] <= pixel_ramp[1] && pixel_ramp[1] <= 1.0)) {
        throw ValidationError("fit config: pixel_ramp must satisfy 0 <= start <= end <= 1");
    }
    if (!(landmark_final_scale >= 0.0 && landmark_final_scale <= 1.0)) {
        throw ValidationError("fit config: landmark_final_scale must lie in [0, 1]");
    }
    if (!use_landmarks && !use_content && !use_pixels) {
        throw ValidationError("fit config: at least one loss term must be active");
    }
}

namespace {

/// Landmark and pixel weight multipliers at one point of the fitting schedule.
struct FitPhase
{
    double lm = 1.0;
    double pixel = 1.0;
};

FitPhase fit_phase(const FitConfig& cfg, int t)
{
    if (cfg.pixel_ramp[1] <= 0.0 || cfg.steps <= 0) {
        return {};
    }
    const double f = static_cast<double>(t) / cfg.steps;
    const double width = cfg.pixel_ramp[1] - cfg.pixel_ramp[0];
    const double r = width > 0.0 ? std::clamp((f - cfg.pixel_ramp[0]) / width, 0.0, 1.0) : (f >= cfg.pixel_ramp[0] ? 1.0 : 0.0);
    return {1.0 - (1.0 - cfg.landmark_final_scale) * r, r};
}

/// Objective under `objective` weights; the gradient follows the `descent` weights.
double fit_loss(const Scene& scene, const FitTarget& target, const FitConfig& cfg, const FacialParams& phi,
                const FitPhase& objective, const FitPhase& descent, ParamGradient& grad)
{
    double loss = 0.0;
    std::vector<double> d_reg(phi.size(), 0.0);
    loss += own_regularizer(phi, cfg.reg, 1.0, d_reg);

    const double lm_loss = cfg.loss.lm * objective.lm;
    const double lm_grad = cfg.loss.lm * descent.lm;
    const bool raster = cfg.use_content || cfg.use_pixels;
    if (!raster) {
        const auto lm = project_landmarks(scene.rig, phi, scene.camera);
        std::vector<std::array<double, 2>> d_lm;
        loss += lm_loss * landmark_loss(target.landmarks, lm, &d_lm);
        for (auto& p : d_lm) {
            p[0] *= lm_grad;
            p[1] *= lm_grad;
        }
        grad = vjp_landmarks(scene.rig, phi, scene.camera, d_lm);
    } else {
        const RenderResult r = render(scene.rig, phi, scene.camera, scene.shading);
        RenderAdjoint adj;
        if (cfg.use_landmarks) {
            loss += lm_loss * landmark_loss(target.landmarks, r.landmarks, &adj.d_landmarks);
            for (auto& p : adj.d_landmarks) {
                p[0] *= lm_grad;
                p[1] *= lm_grad;
            }
        }
        if (cfg.use_content && target.content) {
            std::vector<double> dc;
            loss += cfg.loss.ctt * content_loss(*target.content, content_features(r.masks), &dc);
            for (double& v : dc) {
                v *= cfg.loss.ctt;
            }
            adj.d_masks = content_features_vjp(scene.camera.width, scene.camera.height, dc);
        }
        if (cfg.use_pixels) {
            const double g = cfg.pixel_weight * descent.pixel;
            adj.d_image.assign(r.image.data.size(), 0.0);
            const double bg = to_byte(scene.shading.background) / 255.0;
            double l1 = 0.0;
            for (std::size_t px = 0; px < r.fragments.pixels.size(); ++px) {
                const double* t = &target.image.data[3 * px];
                const bool target_empty = t[0] == bg && t[1] == bg && t[2] == bg;
                for (std::size_t i = 3 * px; i < 3 * px + 3; ++i) {
                    const double d = r.image.data[i] - target.image.data[i];
                    l1 += std::abs(d);
                    if (!(cfg.mask_silhouette && target_empty)) {
                        adj.d_image[i] = g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
                    }
                }
            }
            loss += cfg.pixel_weight * objective.pixel * l1;
        }
        grad = vjp_render(scene.rig, phi, scene.camera, scene.shading, r, adj);
    }
    std::size_t k = 0;
    for (double& v : grad.d_idt) {
        v += d_reg[k++];
    }
    for (double& v : grad.d_exp) {
        v += d_reg[k++];
    }
    for (double& v : grad.d_pose) {
        v += d_reg[k++];
    }
    return loss;
}

} // namespace

FitResult fit_single(const Scene& scene, const FitTarget& target, const FitConfig& config)
{
    config.validate();
    target.landmarks.validate();
    if (target.image.width != scene.camera.width || target.image.height != scene.camera.height) {
        throw ValidationError("fit: target image size does not match the camera");
    }
    if (config.use_content && target.content && target.content->size() != content_dim) {
        throw ValidationError("fit: content target must have " + std::to_string(content_dim) + " values");
    }

    FacialParams phi = scene.rig.neutral_params();
    const auto banned = banned_mask(scene.rig);
    Matrix theta = column(phi.flatten());
    AdamState adam;
    adam.lr = config.lr;
    adam.eps = config.adam_eps;
    const std::vector<ParamRef> refs{{"params", &theta}};

    const FitPhase final_phase = fit_phase(config, config.steps);
    FitResult res;
    res.params = phi;
    double initial = 0.0;
    for (int t = 0; t <= config.steps; ++t) {
        phi.assign(to_vector(theta));
        ParamGradient g;
        const double loss = fit_loss(scene, target, config, phi, final_phase, fit_phase(config, t), g);
        if (!std::isfinite(loss)) {
            res.diverged = true;
            break;
        }
        if (t == 0) {
            initial = loss;
        }
        res.loss_trace.push_back(loss);
        if (t == 0 || loss < res.best_loss) {
            res.best_loss = loss;
            res.best_step = t;
            res.params = phi;
        }
        res.best_trace.push_back(res.best_loss);
        if (loss > 10.0 * initial && initial > 0.0) {
            res.diverged = true;
            break;
        }
        if (t == config.steps) {
            break;
        }
        const double frac = config.steps > 0 ? static_cast<double>(t) / config.steps : 0.0;
        adam.lr = config.lr_final + 0.5 * (config.lr - config.lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
        if (!adam_step(adam, refs, {column(g.flatten())})) {
            res.diverged = true;
            break;
        }
        ++res.steps_run;
        FacialParams next = phi;
        next.assign(to_vector(theta));
        next.clamp_to_ranges();
        for (std::size_t i = 0; i < banned.size(); ++i) {
            if (banned[i]) {
                next.idt[i] = 0.5;
            }
        }
        theta = column(next.flatten());
    }
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation

double identity_mae(const FaceRig& rig, const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != rig.identity_size() || b.size() != rig.identity_size()) {
        throw ValidationError("identity_mae: identity vectors must match the rig");
    }
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!rig.schema.controllers[i].banned) {
            s += std::abs(a[i] - b[i]);
            ++n;
        }
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

Json DisentanglementMetrics::to_json() const
{
    Json j;
    j["idt_mae"] = idt_mae;
    j["exp_mae"] = exp_mae;
    j["leakage"] = leakage;
    j["disc_accuracy"] = disc_accuracy;
    return j;
}

DisentanglementMetrics evaluate_disentanglement(const Scene& scene, const SyntheticCorpus& test,
                                                const TrainedModels& models)
{
    if (test.samples.empty()) {
        throw ValidationError("eval: empty test set");
    }
    test.validate();
    DisentanglementMetrics out;
    std::vector<std::vector<double>> feats(test.samples.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        feats[i] = scene.providers.features(test.samples[i].image);
    }
    std::vector<std::size_t> all(feats.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    const Translator::Outputs pred = models.pred.forward(gather(feats, all));
    const auto phi = models.pred.to_params(pred);

    std::size_t n_expr = 0;
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
        const SyntheticSample& s = test.samples[i];
        if (s.poker_face) {
            continue;
        }
        ++n_expr;
        out.idt_mae += identity_mae(scene.rig, phi[i].idt, s.truth.idt);
        double e = 0.0;
        for (std::size_t k = 0; k < s.truth.exp.size(); ++k) {
            e += std::abs(phi[i].exp[k] - s.truth.exp[k]);
        }
        out.exp_mae += s.truth.exp.empty() ? 0.0 : e / static_cast<double>(s.truth.exp.size());

        FacialParams twin = s.truth;
        std::fill(twin.exp.begin(), twin.exp.end(), 0.0);
        const FacialParams neutral_pred = predict(models.pred, scene.providers, render_quantized(scene, twin));
        out.leakage += identity_mae(scene.rig, phi[i].idt, neutral_pred.idt);
    }
    out.idt_mae /= static_cast<double>(n_expr);
    out.exp_mae /= static_cast<double>(n_expr);
    out.leakage /= static_cast<double>(n_expr);

    const auto pool = test.pool_indices();
    const Matrix d_ref = models.disc.forward(models.ref.forward(gather(feats, pool)).idt);
    const Matrix d_pred = models.disc.forward(pred.idt);
    double ref_ok = 0.0, pred_ok = 0.0;
    for (Eigen::Index c = 0; c < d_ref.cols(); ++c) {
        ref_ok += d_ref(0, c) > 0.5 ? 1.0 : 0.0;
    }
    for (Eigen::Index c = 0; c < d_pred.cols(); ++c) {
        pred_ok += d_pred(0, c) < 0.5 ? 1.0 : 0.0;
    }
    out.disc_accuracy = 0.5 * (ref_ok / static_cast<double>(d_ref.cols()) + pred_ok / static_cast<double>(d_pred.cols()));
    return out;
}

} // namespace rigdiff
