/*
 * Copyright 2026 The snle-evidence Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace snle {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A function was evaluated outside its domain (log of a non-positive value, exp overflow).
class DomainError : public Error {
public:
    using Error::Error;
};

/// The API was called in a way its contract forbids.
class UsageError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared where a finite one is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

class TrainingDivergence : public Error {
public:
    using Error::Error;
};

/// Slice sampler could not bracket or shrink onto a point of the slice.
class SamplerStuck : public Error {
public:
    using Error::Error;
};

/// No starting point with finite log-target could be found.
class InitError : public Error {
public:
    using Error::Error;
};

class SimulationError : public Error {
public:
    using Error::Error;
};

/// Every importance-sampling proposal fell outside the prior support.
class DegenerateProposal : public Error {
public:
    using Error::Error;
};

/// Missing or malformed file.
class FileError : public Error {
public:
    using Error::Error;
};

}  // namespace snle
