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

// Axis-aligned slice sampling (stepping-out bracket, shrinkage) with
// independent parallel chains pooled round-robin.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "snle/adcore.hpp"
#include "snle/rng.hpp"

namespace snle::mcmc {

using ad::Matrix;

/// Unnormalized log-density; -infinity outside the support.
struct LogTarget {
    std::string name;
    std::function<double(std::span<const double>)> log_density;

    double operator()(std::span<const double> x) const { return log_density(x); }
};

struct SliceConfig {
    /// Initial bracket width per coordinate (a single entry is broadcast).
    std::vector<double> widths{1.0};
    /// Maximum number of bracket expansions per side.
    std::size_t max_doublings = 10;
    /// Maximum shrinkage proposals before giving up.
    std::size_t max_shrinks = 200;
};

struct ChainSpec {
    std::size_t n_chains = 20;
    std::size_t draws_per_chain = 50;
    std::size_t burn_in = 200;
    std::size_t thin = 1;
    std::uint64_t seed = 0;
    /// Worker threads; results do not depend on this value.
    std::size_t threads = 1;
};

struct ChainResult {
    /// Pooled draws: row j * n_chains + c is the j-th retained draw of chain c.
    Matrix draws;
    std::vector<double> log_density;
    std::size_t evaluations = 0;
    /// Bracket expansions and shrinkage rejections, summed over chains.
    std::size_t expansions = 0;
    std::size_t shrinks = 0;
};

/// Counters filled by slice_sweep.
struct SweepStats {
    std::size_t evaluations = 0;
    std::size_t expansions = 0;
    std::size_t shrinks = 0;
};

/// One full sweep: every coordinate updated in turn by univariate slice
/// sampling. `log_fx` holds target(x) on entry and is updated on exit.
void slice_sweep(const LogTarget& target, std::vector<double>& x, double& log_fx, Rng& rng, const SliceConfig& config,
                 SweepStats* stats = nullptr);

/// Convenience form of slice_sweep returning the new state.
std::vector<double> slice_step(const LogTarget& target, std::span<const double> x, Rng& rng,
                               const SliceConfig& config);

/// Draws a candidate starting state.
using InitSampler = std::function<std::vector<double>(Rng&)>;

/// Runs spec.n_chains independent chains. Each chain starts from the first
/// draw of `init` with finite log-target (at most 1000 attempts), discards
/// burn_in sweeps and keeps every thin-th state afterwards.
ChainResult run_chains(const LogTarget& target, const ChainSpec& spec, const SliceConfig& config,
                       const InitSampler& init);

/// Same, with explicit starting states (one row per chain).
ChainResult run_chains(const LogTarget& target, const ChainSpec& spec, const SliceConfig& config,
                       const Matrix& init_states);

/// Chain layout for a pooled sample of n draws: ceil(n / n_chains) per chain.
std::size_t draws_per_chain_for(std::size_t total, std::size_t n_chains);

}  // namespace snle::mcmc
