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

#ifndef RIGDIFF_ERROR_HPP
#define RIGDIFF_ERROR_HPP

#include <stdexcept>
#include <string>

namespace rigdiff {

/**
 * Process exit codes used by the command line tool. Each exception class
 * below maps onto one of them.
 */
enum class ExitCode : int { success = 0, validation = 1, numerical = 2, io = 3 };

class Error : public std::runtime_error
{
public:
    Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Bad input data: malformed files, out-of-range values, broken invariants.
class ValidationError : public Error
{
public:
    explicit ValidationError(const std::string& what) : Error(what, ExitCode::validation) {}
};

/// Non-finite values, degenerate transforms, diverging optimisation.
class NumericalError : public Error
{
public:
    explicit NumericalError(const std::string& what) : Error(what, ExitCode::numerical) {}
};

class IoError : public Error
{
public:
    explicit IoError(const std::string& what) : Error(what, ExitCode::io) {}
};

/// A caller broke an API precondition (e.g. asked for a VJP without a forward pass).
class ContractViolation : public Error
{
public:
    explicit ContractViolation(const std::string& what) : Error(what, ExitCode::validation) {}
};

} // namespace rigdiff

#endif // RIGDIFF_ERROR_HPP
