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

// Sequential neural likelihood estimation. Each round draws parameters from
// the current posterior approximation (the prior in round one), simulates,
// appends to the dataset and retrains the surrogate likelihood on all of it.
// Every round's flow and proposal draws are kept for the evidence estimators.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "snle/adcore.hpp"
#include "snle/flows.hpp"
#include "snle/mcmc.hpp"
#include "snle/rng.hpp"
#include "snle/trainer.hpp"

namespace snle {

using ad::Matrix;

/// Uniform prior on an axis-aligned box.
class PriorBox {
public:
    PriorBox(std::vector<double> lower, std::vector<double> upper);
    static PriorBox cube(std::size_t d, double lo, double hi);

    std::size_t dim() const noexcept { return lower_.size(); }
    const std::vector<double>& lower() const noexcept { return lower_; }
    const std::vector<double>& upper() const noexcept { return upper_; }

    bool contains(std::span<const double> theta) const;
    /// -sum(log(upper - lower)) inside, -infinity outside.
    double log_prob(std::span<const double> theta) const;
    std::vector<double> sample(Rng& rng) const;
    Matrix sample(std::size_t n, Rng& rng) const;

    std::vector<double> center() const;
    std::vector<double> half_width() const;

private:
    std::vector<double> lower_;
    std::vector<double> upper_;
    double log_volume_ = 0.0;
};

/// Forward model: draws x ~ f(. | theta).
struct Simulator {
    std::size_t data_dim = 0;
    std::function<std::vector<double>(std::span<const double>, Rng&)> simulate;
};

/// MCMC layout shared by every posterior-sampling step.
struct McmcConfig {
    std::size_t n_chains = 20;
    std::size_t burn_in = 200;
    std::size_t thin = 1;
    std::size_t max_doublings = 10;
    std::size_t threads = 1;
};

struct SnleConfig {
    std::size_t rounds = 5;
    std::size_t sims_per_round = 1000;
    /// Surrogate likelihood architecture; dim and context_dim are filled in by run_snle.
    flows::FlowConfig flow{flows::Architecture::MAF, 1, 1, 5, {64, 64}};
    train::TrainConfig train;
    McmcConfig mcmc;
    /// Start each round from the previous round's parameters instead of a fresh init.
    bool warm_start = false;
};

struct RoundArtifact {
    flows::Flow flow;
    /// Proposal draws of this round (from the previous round's posterior).
    Matrix theta;
    Matrix x;
    train::TrainReport report;
    /// Base seed of the per-draw simulator streams: draw i used derive_seed(sim_seed, {i}).
    std::uint64_t sim_seed = 0;
    double train_seconds = 0.0;
    double sample_seconds = 0.0;
};

struct SnleRounds {
    PriorBox prior;
    std::vector<double> x_star;
    SnleConfig config;
    std::uint64_t seed = 0;
    /// rounds[0] holds round 1.
    std::vector<RoundArtifact> rounds;

    std::size_t completed() const noexcept { return rounds.size(); }
    /// Accumulated (theta, x) records of the first `through_round` rounds.
    train::Dataset dataset(std::size_t through_round) const;
    const flows::Flow& flow(std::size_t round) const;
};

SnleRounds run_snle(const Simulator& sim, const PriorBox& prior, std::span<const double> x_star,
                    const SnleConfig& config, std::uint64_t seed);

/// log pi(theta) for round 0, else log q^(round)(x* | theta) + log pi(theta).
double posterior_log_density(const SnleRounds& rounds, std::size_t round, std::span<const double> theta);

mcmc::LogTarget posterior_target(const SnleRounds& rounds, std::size_t round);

/// Pooled slice-sampling draws from the posterior approximation of `round`.
/// Chains start from prior draws; bracket widths are the prior half-widths.
Matrix sample_posterior(const SnleRounds& rounds, std::size_t round, std::size_t n, const McmcConfig& mcmc,
                        std::uint64_t seed);

Matrix sample_final_posterior(const SnleRounds& rounds, std::size_t n, const McmcConfig& mcmc, std::uint64_t seed);

/// Writes round_<l>_flow.json files, draws.csv and snle.json into `dir`.
void save_rounds(const SnleRounds& rounds, const std::filesystem::path& dir);
SnleRounds load_rounds(const std::filesystem::path& dir);

}  // namespace snle
