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

#ifndef RIGDIFF_PARALLEL_HPP
#define RIGDIFF_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace rigdiff {

/// Caps the number of worker threads (0 selects the hardware concurrency).
void set_thread_count(unsigned n);
unsigned thread_count();

/**
 * Runs fn(i) for every i in [0, n). Work is split into contiguous ranges,
 * one per worker. Callers only write to outputs owned by index i, so
 * results never depend on the worker count.
 */
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace rigdiff

#endif // RIGDIFF_PARALLEL_HPP
