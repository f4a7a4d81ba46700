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
#include "rigdiff/params.hpp"

#include "rigdiff/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rigdiff {

std::vector<double> FacialParams::flatten() const
{
    std::vector<double> out;
    out.reserve(size());
    out.insert(out.end(), idt.begin(), idt.end());
    out.insert(out.end(), exp.begin(), exp.end());
    out.insert(out.end(), pose.begin(), pose.end());
    return out;
}

void FacialParams::assign(const std::vector<double>& flat)
{
    if (flat.size() != size()) {
        throw ValidationError("FacialParams::assign: expected " + std::to_string(size()) + " values, got " +
                              std::to_string(flat.size()));
    }
    auto it = flat.begin();
    std::copy(it, it + idt.size(), idt.begin());
    it += idt.size();
    std::copy(it, it + exp.size(), exp.begin());
    it += exp.size();
    std::copy(it, it + pose.size(), pose.begin());
}

void FacialParams::validate(std::size_t n_idt, std::size_t n_exp) const
{
    auto fail = [](const std::string& group, std::size_t i, double v, const std::string& why) {
        throw ValidationError("params." + group + "[" + std::to_string(i) + "] = " + std::to_string(v) + ": " + why);
    };
    if (idt.size() != n_idt || exp.size() != n_exp || pose.size() != pose_dim) {
        throw ValidationError("params: group sizes (" + std::to_string(idt.size()) + ", " +
                              std::to_string(exp.size()) + ", " + std::to_string(pose.size()) + ") != (" +
                              std::to_string(n_idt) + ", " + std::to_string(n_exp) + ", 6)");
    }
    for (std::size_t i = 0; i < idt.size(); ++i) {
        if (!std::isfinite(idt[i]) || idt[i] < 0.0 || idt[i] > 1.0) {
            fail("idt", i, idt[i], "outside [0, 1]");
        }
    }
    for (std::size_t i = 0; i < exp.size(); ++i) {
        if (!std::isfinite(exp[i]) || exp[i] < 0.0 || exp[i] > 1.0) {
            fail("exp", i, exp[i], "outside [0, 1]");
        }
    }
    for (std::size_t i = 0; i < pose.size(); ++i) {
        if (!std::isfinite(pose[i]) || std::abs(pose[i]) > pose_limit(i)) {
            fail("pose", i, pose[i], "outside pose range");
        }
    }
}

void FacialParams::clamp_to_ranges()
{
    for (auto& v : idt) {
        v = std::clamp(v, 0.0, 1.0);
    }
    for (auto& v : exp) {
        v = std::clamp(v, 0.0, 1.0);
    }
    for (std::size_t i = 0; i < pose.size(); ++i) {
        pose[i] = std::clamp(pose[i], -pose_limit(i), pose_limit(i));
    }
}

std::vector<double> ParamGradient::flatten() const
{
    std::vector<double> out;
    out.reserve(d_idt.size() + d_exp.size() + d_pose.size());
    out.insert(out.end(), d_idt.begin(), d_idt.end());
    out.insert(out.end(), d_exp.begin(), d_exp.end());
    out.insert(out.end(), d_pose.begin(), d_pose.end());
    return out;
}

ParamGradient& ParamGradient::operator+=(const ParamGradient& o)
{
    if (o.d_idt.size() != d_idt.size() || o.d_exp.size() != d_exp.size() || o.d_pose.size() != d_pose.size()) {
        throw ValidationError("ParamGradient: shape mismatch");
    }
    for (std::size_t i = 0; i < d_idt.size(); ++i) {
        d_idt[i] += o.d_idt[i];
    }
    for (std::size_t i = 0; i < d_exp.size(); ++i) {
        d_exp[i] += o.d_exp[i];
    }
    for (std::size_t i = 0; i < d_pose.size(); ++i) {
        d_pose[i] += o.d_pose[i];
    }
    return *this;
}

ParamGradient& ParamGradient::operator*=(double s)
{
    for (auto& v : d_idt) {
        v *= s;
    }
    for (auto& v : d_exp) {
        v *= s;
    }
    for (auto& v : d_pose) {
        v *= s;
    }
    return *this;
}

bool ParamGradient::all_finite() const
{
    auto finite = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return finite(d_idt) && finite(d_exp) && finite(d_pose);
}

} // namespace rigdiff
