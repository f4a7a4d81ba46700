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
#include "rigdiff/objectives.hpp"

#include "rigdiff/error.hpp"

#include <algorithm>
#include <cmath>

namespace rigdiff {

namespace {

constexpr double gray_r = 0.299;
constexpr double gray_g = 0.587;
constexpr double gray_b = 0.114;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

void require_same_size(std::size_t a, std::size_t b, const char* what)
{
    if (a != b) {
        throw ValidationError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                              std::to_string(b) + ")");
    }
}

} // namespace

PooledCropProvider::PooledCropProvider(CropBox box, int grid) : box_(box), grid_(grid)
{
    if (grid_ < 1 || static_cast<std::size_t>(grid_ * grid_) > embedding_dim) {
        throw ValidationError("PooledCropProvider: grid must satisfy 1 <= grid^2 <= 256");
    }
    if (box_.width() < grid_ || box_.height() < grid_ || box_.x0 < 0 || box_.y0 < 0) {
        throw ValidationError("PooledCropProvider: crop box smaller than the pooling grid");
    }
    counts_.assign(static_cast<std::size_t>(grid_ * grid_), 0);
    for (int y = box_.y0; y < box_.y1; ++y) {
        for (int x = box_.x0; x < box_.x1; ++x) {
            ++counts_[cell_of(x, y)];
        }
    }
}

int PooledCropProvider::cell_of(int x, int y) const
{
    const int cx = (x - box_.x0) * grid_ / box_.width();
    const int cy = (y - box_.y0) * grid_ / box_.height();
    return cy * grid_ + cx;
}

std::vector<double> PooledCropProvider::pooled(const Image& image) const
{
    if (image.width < box_.x1 || image.height < box_.y1) {
        throw ValidationError("PooledCropProvider: image smaller than the crop box");
    }
    std::vector<double> g(static_cast<std::size_t>(grid_ * grid_), 0.0);
    for (int y = box_.y0; y < box_.y1; ++y) {
        for (int x = box_.x0; x < box_.x1; ++x) {
            g[cell_of(x, y)] += gray_r * image.at(x, y, 0) + gray_g * image.at(x, y, 1) + gray_b * image.at(x, y, 2);
        }
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] /= counts_[i];
    }
    return g;
}

std::vector<double> PooledCropProvider::embed(const Image& image) const
{
    const std::vector<double> g = pooled(image);
    const double len = std::sqrt(dot(g, g));
    if (!(len > 0.0) || !std::isfinite(len)) {
        throw NumericalError("feature provider: zero-norm embedding");
    }
    std::vector<double> e(embedding_dim, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        e[i] = g[i] / len;
    }
    return e;
}

std::vector<double> PooledCropProvider::embed_vjp(const Image& image, const std::vector<double>& d_embed) const
{
    require_same_size(d_embed.size(), embedding_dim, "PooledCropProvider::embed_vjp");
    const std::vector<double> g = pooled(image);
    const double len = std::sqrt(dot(g, g));
    if (!(len > 0.0)) {
        throw NumericalError("feature provider: zero-norm embedding");
    }
    double ede = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        ede += (g[i] / len) * d_embed[i];
    }
    std::vector<double> dg(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        dg[i] = (d_embed[i] - (g[i] / len) * ede) / len / counts_[i];
    }
    std::vector<double> d_image(static_cast<std::size_t>(image.width) * image.height * 3, 0.0);
    for (int y = box_.y0; y < box_.y1; ++y) {
        for (int x = box_.x0; x < box_.x1; ++x) {
            const double d = dg[cell_of(x, y)];
            double* px = &d_image[(static_cast<std::size_t>(y) * image.width + x) * 3];
            px[0] = gray_r * d;
            px[1] = gray_g * d;
            px[2] = gray_b * d;
        }
    }
    return d_image;
}

CropBox face_crop_box(const FaceRig& rig, const Camera& camera)
{
    const auto pts = project_landmarks(rig, rig.neutral_params(), camera);
    double umin = pts[0][0], umax = pts[0][0], vmin = pts[0][1], vmax = pts[0][1];
    for (const auto& p : pts) {
        umin = std::min(umin, p[0]);
        umax = std::max(umax, p[0]);
        vmin = std::min(vmin, p[1]);
        vmax = std::max(vmax, p[1]);
    }
    const double mu = 0.15 * (umax - umin);
    const double mv = 0.15 * (vmax - vmin);
    CropBox b;
    b.x0 = std::clamp(static_cast<int>(std::floor(umin - mu)), 0, camera.width - 1);
    b.x1 = std::clamp(static_cast<int>(std::ceil(umax + mu)), b.x0 + 1, camera.width);
    b.y0 = std::clamp(static_cast<int>(std::floor(vmin - mv)), 0, camera.height - 1);
    b.y1 = std::clamp(static_cast<int>(std::ceil(vmax + mv)), b.y0 + 1, camera.height);
    return b;
}

CropBox zoom_box(const CropBox& box)
{
    const int w = std::max(1, box.width() / 2);
    const int h = std::max(1, box.height() / 2);
    CropBox z;
    z.x0 = box.x0 + (box.width() - w) / 2;
    z.y0 = box.y0 + (box.height() - h) / 2;
    z.x1 = z.x0 + w;
    z.y1 = z.y0 + h;
    return z;
}

Providers Providers::standard(const FaceRig& rig, const Camera& camera)
{
    const CropBox box = face_crop_box(rig, camera);
    Providers p;
    p.recg = std::make_shared<PooledCropProvider>(box, 16);
    p.aux = std::make_shared<PooledCropProvider>(zoom_box(box), 8);
    p.width = camera.width;
    p.height = camera.height;
    return p;
}

std::vector<double> Providers::features(const Image& image) const
{
    if (image.width != width || image.height != height) {
        throw ValidationError("features: expected a " + std::to_string(width) + "x" + std::to_string(height) +
                              " image, got " + std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    std::vector<double> f = recg->embed(image);
    const std::vector<double> a = aux->embed(image);
    f.insert(f.end(), a.begin(), a.end());
    return f;
}

std::vector<double> Providers::features_vjp(const Image& image, const std::vector<double>& d_features) const
{
    require_same_size(d_features.size(), recg->dim() + aux->dim(), "features_vjp");
    const auto mid = d_features.begin() + static_cast<std::ptrdiff_t>(recg->dim());
    std::vector<double> d = recg->embed_vjp(image, std::vector<double>(d_features.begin(), mid));
    const std::vector<double> da = aux->embed_vjp(image, std::vector<double>(mid, d_features.end()));
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += da[i];
    }
    return d;
}

std::vector<double> content_features(const PartMasks& masks)
{
    std::vector<double> f(content_dim, 0.0);
    std::vector<int> counts(content_grid * content_grid, 0);
    for (int y = 0; y < masks.height; ++y) {
        for (int x = 0; x < masks.width; ++x) {
            ++counts[(y * content_grid / masks.height) * content_grid + x * content_grid / masks.width];
        }
    }
    const std::size_t plane = content_grid * content_grid;
    for (std::size_t p = 0; p < part_count; ++p) {
        for (int y = 0; y < masks.height; ++y) {
            const int cy = y * content_grid / masks.height;
            for (int x = 0; x < masks.width; ++x) {
                f[p * plane + cy * content_grid + x * content_grid / masks.width] += masks.at(p, x, y);
            }
        }
        for (std::size_t c = 0; c < plane; ++c) {
            f[p * plane + c] /= counts[c];
        }
    }
    return f;
}

std::vector<double> content_features_vjp(int width, int height, const std::vector<double>& d_features)
{
    require_same_size(d_features.size(), content_dim, "content_features_vjp");
    std::vector<int> counts(content_grid * content_grid, 0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            ++counts[(y * content_grid / height) * content_grid + x * content_grid / width];
        }
    }
    const std::size_t plane = content_grid * content_grid;
    std::vector<double> d(part_count * static_cast<std::size_t>(width) * height, 0.0);
    for (std::size_t p = 0; p < part_count; ++p) {
        for (int y = 0; y < height; ++y) {
            const int cy = y * content_grid / height;
            for (int x = 0; x < width; ++x) {
                const std::size_t c = cy * content_grid + x * content_grid / width;
                d[(p * height + y) * width + x] = d_features[p * plane + c] / counts[c];
            }
        }
    }
    return d;
}

std::vector<double> LandmarkSet::default_weights()
{
    std::vector<double> w(landmark_count, landmark_weight_minor);
    for (std::size_t i = 27; i < landmark_count; ++i) {
        w[i] = landmark_weight_major;
    }
    return w;
}

LandmarkSet LandmarkSet::with_default_weights(std::vector<std::array<double, 2>> points)
{
    LandmarkSet s{std::move(points), default_weights()};
    s.validate();
    return s;
}

void LandmarkSet::validate() const
{
    if (points.size() != landmark_count || weights.size() != landmark_count) {
        throw ValidationError("landmarks: expected 68 points and 68 weights");
    }
    for (double w : weights) {
        if (!(w > 0.0)) {
            throw ValidationError("landmarks: weights must be positive");
        }
    }
}

double identity_loss(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>* d_b)
{
    require_same_size(a.size(), b.size(), "identity_loss");
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    if (!(na > 0.0) || !(nb > 0.0)) {
        throw NumericalError("identity_loss: zero-norm embedding");
    }
    const double ab = dot(a, b);
    const double c = ab / (na * nb);
    if (d_b != nullptr) {
        d_b->resize(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) {
            (*d_b)[i] = -(a[i] / (na * nb) - c * b[i] / (nb * nb));
        }
    }
    return 1.0 - c;
}

double identity_loss(const Image& image, const Image& rendered, const FeatureProvider& provider)
{
    if (image.width != rendered.width || image.height != rendered.height) {
        throw ValidationError("identity_loss: images differ in shape");
    }
    return identity_loss(provider.embed(image), provider.embed(rendered));
}

double content_loss(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>* d_b)
{
    require_same_size(a.size(), b.size(), "content_loss");
    double s = 0.0;
    if (d_b != nullptr) {
        d_b->resize(b.size());
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += std::abs(a[i] - b[i]);
        if (d_b != nullptr) {
            (*d_b)[i] = sign(b[i] - a[i]);
        }
    }
    return s;
}

double landmark_loss(const LandmarkSet& target, const std::vector<std::array<double, 2>>& predicted,
                     std::vector<std::array<double, 2>>* d_predicted)
{
    target.validate();
    require_same_size(predicted.size(), target.points.size(), "landmark_loss");
    double s = 0.0;
    if (d_predicted != nullptr) {
        d_predicted->assign(predicted.size(), {0.0, 0.0});
    }
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double dx = predicted[i][0] - target.points[i][0];
        const double dy = predicted[i][1] - target.points[i][1];
        s += target.weights[i] * (std::abs(dx) + std::abs(dy));
        if (d_predicted != nullptr) {
            (*d_predicted)[i] = {target.weights[i] * sign(dx), target.weights[i] * sign(dy)};
        }
    }
    return s;
}

double loopback_loss(const std::vector<double>& a, const std::vector<double>& b, std::vector<double>* d_b)
{
    require_same_size(a.size(), b.size(), "loopback_loss");
    return content_loss(a, b, d_b);
}

double loopback_loss(const FacialParams& a, const FacialParams& b)
{
    if (a.idt.size() != b.idt.size() || a.exp.size() != b.exp.size() || a.pose.size() != b.pose.size()) {
        throw ValidationError("loopback_loss: parameter group shapes differ");
    }
    return loopback_loss(a.flatten(), b.flatten());
}

double gan_loss(const std::vector<double>& d_ref, const std::vector<double>& d_pred, std::vector<double>* grad_ref,
                std::vector<double>* grad_pred)
{
    if (d_ref.empty() || d_pred.empty()) {
        throw ValidationError("gan_loss: batches must be nonempty");
    }
    const double lo = gan_clamp;
    const double hi = 1.0 - gan_clamp;
    double sr = 0.0;
    if (grad_ref != nullptr) {
        grad_ref->assign(d_ref.size(), 0.0);
    }
    for (std::size_t i = 0; i < d_ref.size(); ++i) {
        const double v = std::clamp(d_ref[i], lo, hi);
        sr += std::log(v);
        if (grad_ref != nullptr && d_ref[i] > lo && d_ref[i] < hi) {
            (*grad_ref)[i] = 1.0 / (v * static_cast<double>(d_ref.size()));
        }
    }
    double sp = 0.0;
    if (grad_pred != nullptr) {
        grad_pred->assign(d_pred.size(), 0.0);
    }
    for (std::size_t i = 0; i < d_pred.size(); ++i) {
        const double v = std::clamp(d_pred[i], lo, hi);
        sp += std::log(1.0 - v);
        if (grad_pred != nullptr && d_pred[i] > lo && d_pred[i] < hi) {
            (*grad_pred)[i] = -1.0 / ((1.0 - v) * static_cast<double>(d_pred.size()));
        }
    }
    return sr / static_cast<double>(d_ref.size()) + sp / static_cast<double>(d_pred.size());
}

double similarity_total(const SimilarityTerms& t, const LossWeights& w)
{
    return w.idt * (t.idt_pred + t.idt_ref) + w.ctt * (t.ctt_pred + t.ctt_ref) + w.lm * (t.lm_pred + t.lm_ref) +
           w.loop * (t.loop_pred + t.loop_ref) + w.gan * t.gan;
}

double regularizer(const FacialParams& pred, const FacialParams& ref, const Image* image_pred,
                   const Image* image_ref, const RegWeights& w, RegularizerGrad* grad)
{
    require_same_size(pred.idt.size(), ref.idt.size(), "regularizer idt");
    require_same_size(pred.pose.size(), ref.pose.size(), "regularizer pose");
    auto sq = [](const std::vector<double>& v) { return dot(v, v); };
    double r = w.idt * (sq(pred.idt) + sq(ref.idt)) + w.exp * sq(pred.exp) + w.pose * (sq(pred.pose) + sq(ref.pose));
    double ref_l1 = 0.0;
    for (std::size_t i = 0; i < pred.idt.size(); ++i) {
        ref_l1 += std::abs(pred.idt[i] - ref.idt[i]);
    }
    r += w.ref * ref_l1;
    if (grad != nullptr) {
        grad->d_idt.resize(pred.idt.size());
        grad->d_idt_ref.resize(ref.idt.size());
        for (std::size_t i = 0; i < pred.idt.size(); ++i) {
            const double s = sign(pred.idt[i] - ref.idt[i]);
            grad->d_idt[i] = 2.0 * w.idt * pred.idt[i] + w.ref * s;
            grad->d_idt_ref[i] = 2.0 * w.idt * ref.idt[i] - w.ref * s;
        }
        grad->d_exp.resize(pred.exp.size());
        for (std::size_t i = 0; i < pred.exp.size(); ++i) {
            grad->d_exp[i] = 2.0 * w.exp * pred.exp[i];
        }
        grad->d_pose.resize(pred.pose.size());
        grad->d_pose_ref.resize(ref.pose.size());
        for (std::size_t i = 0; i < pred.pose.size(); ++i) {
            grad->d_pose[i] = 2.0 * w.pose * pred.pose[i];
            grad->d_pose_ref[i] = 2.0 * w.pose * ref.pose[i];
        }
        grad->d_image_pred.clear();
        grad->d_image_ref.clear();
    }
    if (image_pred != nullptr && image_ref != nullptr) {
        require_same_size(image_pred->data.size(), image_ref->data.size(), "regularizer images");
        double l1 = 0.0;
        if (grad != nullptr) {
            grad->d_image_pred.resize(image_pred->data.size());
            grad->d_image_ref.resize(image_ref->data.size());
        }
        for (std::size_t i = 0; i < image_pred->data.size(); ++i) {
            const double d = image_pred->data[i] - image_ref->data[i];
            l1 += std::abs(d);
            if (grad != nullptr) {
                grad->d_image_pred[i] = w.image * sign(d);
                grad->d_image_ref[i] = -w.image * sign(d);
            }
        }
        r += w.image * l1;
    }
    return r;
}

bool LossBreakdown::has(const std::string& name) const
{
    return std::any_of(terms.begin(), terms.end(), [&](const auto& t) { return t.first == name; });
}

Json LossBreakdown::to_json() const
{
    Json j = Json::object();
    for (const auto& [name, value] : terms) {
        j[name] = value;
    }
    j["total"] = total;
    return j;
}

} // namespace rigdiff
