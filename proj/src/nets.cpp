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
#include "rigdiff/nets.hpp"

#include "rigdiff/error.hpp"
#include "rigdiff/io.hpp"
#include "rigdiff/rng.hpp"

#include <cmath>
#include <cstring>

namespace rigdiff {

DenseLayer::DenseLayer(int in, int out, Activation act)
    : weight(Matrix::Zero(out, in)), bias(Matrix::Zero(out, 1)), activation(act)
{
}

Matrix activate(const Matrix& z, Activation act)
{
    switch (act) {
    case Activation::none:
        return z;
    case Activation::relu:
        return z.cwiseMax(0.0);
    case Activation::sigmoid:
        return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    case Activation::tanh:
        return z.unaryExpr([](double v) { return std::tanh(v); });
    case Activation::softmax: {
        Matrix y(z.rows(), z.cols());
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
            const double m = z.col(c).maxCoeff();
            y.col(c) = (z.col(c).array() - m).exp().matrix();
            y.col(c) /= y.col(c).sum();
        }
        return y;
    }
    }
    return z;
}

Matrix activate_vjp(const Matrix& y, const Matrix& dy, Activation act)
{
    switch (act) {
    case Activation::none:
        return dy;
    case Activation::relu:
        return (y.array() > 0.0).select(dy, 0.0);
    case Activation::sigmoid:
        return (dy.array() * y.array() * (1.0 - y.array())).matrix();
    case Activation::tanh:
        return (dy.array() * (1.0 - y.array().square())).matrix();
    case Activation::softmax: {
        Matrix dz(y.rows(), y.cols());
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            const double s = y.col(c).dot(dy.col(c));
            dz.col(c) = (y.col(c).array() * (dy.col(c).array() - s)).matrix();
        }
        return dz;
    }
    }
    return dy;
}

Matrix DenseLayer::forward(const Matrix& x) const
{
    Matrix z = weight * x;
    z.colwise() += bias.col(0);
    return activate(z, activation);
}

void init_layer(DenseLayer& layer, std::uint64_t seed)
{
    Rng rng(seed);
    const double a = std::sqrt(3.0 / std::max(1, layer.in()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            layer.weight(r, c) = rng.uniform(-a, a);
        }
    }
    layer.bias.setZero();
}

namespace {

// Parameter gradients of one dense layer from its pre-activation adjoint.
void dense_grads(const Matrix& x, const Matrix& dz, std::vector<Matrix>& out)
{
    out.push_back(dz * x.transpose());
    out.push_back(dz.rowwise().sum());
}

} // namespace

Translator::Translator(std::string name, std::size_t n_idt, std::size_t n_exp, std::vector<bool> banned,
                       std::uint64_t seed)
    : name_(std::move(name)),
      l1_(translator_width, translator_width, Activation::relu),
      l2_(translator_width, translator_width, Activation::relu),
      gate_(translator_width, translator_gate_groups, Activation::softmax),
      idt_(translator_width, static_cast<int>(n_idt), Activation::sigmoid),
      exp_(translator_width, static_cast<int>(n_exp), Activation::sigmoid),
      pose_(translator_width, static_cast<int>(pose_dim), Activation::tanh),
      banned_(std::move(banned))
{
    if (banned_.size() != n_idt) {
        throw ValidationError("Translator: banned mask must have one entry per identity slot");
    }
    Rng rng(seed);
    for (DenseLayer* l : {&l1_, &l2_, &gate_, &idt_, &exp_, &pose_}) {
        init_layer(*l, rng.next());
    }
}

Translator::Outputs Translator::forward(const Matrix& features, Cache* cache) const
{
    if (features.rows() != translator_width) {
        throw ValidationError("Translator: expected 512 features, got " + std::to_string(features.rows()));
    }
    const int seg = translator_width / translator_gate_groups;
    Matrix h1 = l1_.forward(features);
    Matrix h2 = l2_.forward(h1);
    Matrix gate = gate_.forward(h2);
    Matrix gated(h2.rows(), h2.cols());
    for (int s = 0; s < translator_gate_groups; ++s) {
        for (Eigen::Index c = 0; c < h2.cols(); ++c) {
            gated.block(s * seg, c, seg, 1) = h2.block(s * seg, c, seg, 1) * (translator_gate_groups * gate(s, c));
        }
    }
    Outputs out;
    out.idt = idt_.forward(gated);
    for (std::size_t i = 0; i < banned_.size(); ++i) {
        if (banned_[i]) {
            out.idt.row(static_cast<Eigen::Index>(i)).setConstant(0.5);
        }
    }
    out.exp = has_expression() ? exp_.forward(gated) : Matrix(0, features.cols());
    Matrix unit = pose_.forward(gated);
    out.pose = unit;
    for (std::size_t i = 0; i < pose_dim; ++i) {
        out.pose.row(static_cast<Eigen::Index>(i)) *= pose_limit(i);
    }
    if (cache != nullptr) {
        cache->x = features;
        cache->h1 = std::move(h1);
        cache->h2 = std::move(h2);
        cache->gate = std::move(gate);
        cache->gated = std::move(gated);
        cache->idt = out.idt;
        cache->exp = out.exp;
        cache->pose_unit = std::move(unit);
    }
    return out;
}

FacialParams Translator::forward_one(const std::vector<double>& features) const
{
    const Matrix x = Eigen::Map<const Matrix>(features.data(), static_cast<Eigen::Index>(features.size()), 1);
    return to_params(forward(x)).front();
}

std::vector<FacialParams> Translator::to_params(const Outputs& out) const
{
    std::vector<FacialParams> ps(static_cast<std::size_t>(out.idt.cols()));
    for (std::size_t c = 0; c < ps.size(); ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        ps[c].idt.resize(static_cast<std::size_t>(out.idt.rows()));
        for (Eigen::Index r = 0; r < out.idt.rows(); ++r) {
            ps[c].idt[r] = out.idt(r, col);
        }
        ps[c].exp.resize(static_cast<std::size_t>(out.exp.rows()));
        for (Eigen::Index r = 0; r < out.exp.rows(); ++r) {
            ps[c].exp[r] = out.exp(r, col);
        }
        ps[c].pose.resize(pose_dim);
        for (Eigen::Index r = 0; r < out.pose.rows(); ++r) {
            ps[c].pose[r] = out.pose(r, col);
        }
    }
    return ps;
}

std::vector<Matrix> Translator::backward(const Cache& cache, const Outputs& d_out, Matrix* d_features) const
{
    const int seg = translator_width / translator_gate_groups;
    const Eigen::Index batch = cache.x.cols();
    std::vector<Matrix> head_grads;

    Matrix d_idt = d_out.idt;
    for (std::size_t i = 0; i < banned_.size(); ++i) {
        if (banned_[i]) {
            d_idt.row(static_cast<Eigen::Index>(i)).setZero();
        }
    }
    const Matrix dz_idt = activate_vjp(cache.idt, d_idt, Activation::sigmoid);
    Matrix d_gated = idt_.weight.transpose() * dz_idt;
    dense_grads(cache.gated, dz_idt, head_grads);

    if (has_expression()) {
        const Matrix dz_exp = activate_vjp(cache.exp, d_out.exp, Activation::sigmoid);
        d_gated += exp_.weight.transpose() * dz_exp;
        dense_grads(cache.gated, dz_exp, head_grads);
    }

    Matrix d_unit = d_out.pose;
    for (std::size_t i = 0; i < pose_dim; ++i) {
        d_unit.row(static_cast<Eigen::Index>(i)) *= pose_limit(i);
    }
    const Matrix dz_pose = activate_vjp(cache.pose_unit, d_unit, Activation::tanh);
    d_gated += pose_.weight.transpose() * dz_pose;
    dense_grads(cache.gated, dz_pose, head_grads);

    Matrix d_h2(cache.h2.rows(), batch);
    Matrix d_gate(translator_gate_groups, batch);
    for (int s = 0; s < translator_gate_groups; ++s) {
        for (Eigen::Index c = 0; c < batch; ++c) {
            const auto dg = d_gated.col(c).segment(s * seg, seg);
            d_h2.col(c).segment(s * seg, seg) = dg * (translator_gate_groups * cache.gate(s, c));
            d_gate(s, c) = translator_gate_groups * dg.dot(cache.h2.col(c).segment(s * seg, seg));
        }
    }
    const Matrix dz_gate = activate_vjp(cache.gate, d_gate, Activation::softmax);
    d_h2 += gate_.weight.transpose() * dz_gate;

    const Matrix dz2 = activate_vjp(cache.h2, d_h2, Activation::relu);
    const Matrix d_h1 = l2_.weight.transpose() * dz2;
    const Matrix dz1 = activate_vjp(cache.h1, d_h1, Activation::relu);
    if (d_features != nullptr) {
        *d_features = l1_.weight.transpose() * dz1;
    }

    std::vector<Matrix> grads;
    dense_grads(cache.x, dz1, grads);
    dense_grads(cache.h1, dz2, grads);
    dense_grads(cache.h2, dz_gate, grads);
    for (auto& g : head_grads) {
        grads.push_back(std::move(g));
    }
    return grads;
}

std::vector<ParamRef> Translator::params()
{
    std::vector<ParamRef> out;
    auto add = [&](const char* layer, DenseLayer& l) {
        out.push_back({name_ + "." + layer + ".weight", &l.weight});
        out.push_back({name_ + "." + layer + ".bias", &l.bias});
    };
    add("trunk1", l1_);
    add("trunk2", l2_);
    add("gate", gate_);
    add("idt", idt_);
    if (has_expression()) {
        add("exp", exp_);
    }
    add("pose", pose_);
    return out;
}

std::vector<const Matrix*> Translator::params() const
{
    std::vector<const Matrix*> out;
    for (const auto& p : const_cast<Translator*>(this)->params()) {
        out.push_back(p.value);
    }
    return out;
}

Discriminator::Discriminator(std::size_t n_idt, std::uint64_t seed)
{
    const int in = static_cast<int>(n_idt);
    layers_.emplace_back(in, 256, Activation::relu);
    layers_.emplace_back(256, 128, Activation::relu);
    layers_.emplace_back(128, 64, Activation::relu);
    layers_.emplace_back(64, 1, Activation::sigmoid);
    Rng rng(seed);
    for (auto& l : layers_) {
        init_layer(l, rng.next());
    }
}

Matrix Discriminator::forward(const Matrix& idt, Cache* cache) const
{
    if (idt.rows() != layers_.front().in()) {
        throw ValidationError("Discriminator: input size mismatch");
    }
    Matrix a = idt;
    if (cache != nullptr) {
        cache->activations.clear();
        cache->activations.push_back(a);
    }
    for (const auto& l : layers_) {
        a = l.forward(a);
        if (cache != nullptr) {
            cache->activations.push_back(a);
        }
    }
    return a;
}

double Discriminator::forward_one(const std::vector<double>& idt) const
{
    const Matrix x = Eigen::Map<const Matrix>(idt.data(), static_cast<Eigen::Index>(idt.size()), 1);
    return forward(x)(0, 0);
}

std::vector<Matrix> Discriminator::backward(const Cache& cache, const Matrix& d_out, Matrix* d_input) const
{
    std::vector<Matrix> grads(2 * layers_.size());
    Matrix d = d_out;
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const Matrix dz = activate_vjp(cache.activations[k + 1], d, layers_[k].activation);
        grads[2 * k] = dz * cache.activations[k].transpose();
        grads[2 * k + 1] = dz.rowwise().sum();
        d = layers_[k].weight.transpose() * dz;
    }
    if (d_input != nullptr) {
        *d_input = std::move(d);
    }
    return grads;
}

std::vector<ParamRef> Discriminator::params()
{
    std::vector<ParamRef> out;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        out.push_back({"disc.layer" + std::to_string(k) + ".weight", &layers_[k].weight});
        out.push_back({"disc.layer" + std::to_string(k) + ".bias", &layers_[k].bias});
    }
    return out;
}

std::vector<const Matrix*> Discriminator::params() const
{
    std::vector<const Matrix*> out;
    for (const auto& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

bool adam_step(AdamState& state, const std::vector<ParamRef>& params, const std::vector<Matrix>& grads)
{
    if (grads.size() != params.size()) {
        throw ValidationError("adam_step: gradient count does not match parameter count");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].rows() != params[i].value->rows() || grads[i].cols() != params[i].value->cols()) {
            throw ValidationError("adam_step: gradient shape mismatch for " + params[i].name);
        }
        if (!grads[i].allFinite()) {
            return false;
        }
    }
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto& p : params) {
            state.m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
            state.v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i].cwiseProduct(grads[i]);
        const auto mh = state.m[i].array() / c1;
        const auto vh = state.v[i].array() / c2;
        params[i].value->array() -= state.lr * mh / (vh.sqrt() + state.eps);
    }
    return true;
}

std::uint64_t checksum(const std::vector<const Matrix*>& params)
{
    std::uint64_t h = 1469598103934665603ull;
    for (const Matrix* m : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(m->data());
        const std::size_t n = static_cast<std::size_t>(m->size()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h = (h ^ bytes[i]) * 1099511628211ull;
        }
    }
    return h;
}

namespace {

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
        throw IoError("checkpoint truncated");
    }
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path)
{
    std::string out = std::string(checkpoint_format_tag) + "\n";
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
        for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
                put<double>(out, t.value(r, c));
            }
        }
    }
    write_text_file(path, out);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path)
{
    const std::string in = read_text_file(path);
    const std::string tag = std::string(checkpoint_format_tag) + "\n";
    if (in.compare(0, tag.size(), tag) != 0) {
        throw IoError("'" + path.string() + "' is not a " + checkpoint_format_tag + " checkpoint");
    }
    std::size_t pos = tag.size();
    const auto count = get<std::uint32_t>(in, pos);
    std::vector<NamedTensor> out;
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor t;
        const auto len = get<std::uint32_t>(in, pos);
        if (pos + len > in.size()) {
            throw IoError("checkpoint truncated");
        }
        t.name = in.substr(pos, len);
        pos += len;
        const auto rows = get<std::uint32_t>(in, pos);
        const auto cols = get<std::uint32_t>(in, pos);
        t.value.resize(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r) {
            for (std::uint32_t c = 0; c < cols; ++c) {
                t.value(r, c) = get<double>(in, pos);
            }
        }
        out.push_back(std::move(t));
    }
    if (pos != in.size()) {
        throw IoError("checkpoint has trailing bytes");
    }
    return out;
}

void restore_params(const std::vector<NamedTensor>& tensors, const std::vector<ParamRef>& params)
{
    for (const auto& p : params) {
        const NamedTensor* found = nullptr;
        for (const auto& t : tensors) {
            if (t.name == p.name) {
                found = &t;
            }
        }
        if (found == nullptr) {
            throw ValidationError("checkpoint lacks tensor '" + p.name + "'");
        }
        if (found->value.rows() != p.value->rows() || found->value.cols() != p.value->cols()) {
            throw ValidationError("checkpoint tensor '" + p.name + "' has the wrong shape");
        }
        *p.value = found->value;
    }
}

std::vector<NamedTensor> snapshot(const std::vector<ParamRef>& params)
{
    std::vector<NamedTensor> out;
    for (const auto& p : params) {
        out.push_back({p.name, *p.value});
    }
    return out;
}

} // namespace rigdiff
