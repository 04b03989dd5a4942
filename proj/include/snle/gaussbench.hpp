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

// Gaussian benchmark with closed-form evidence, x | theta ~ N(theta, I_d),
// theta ~ U[-2, 2]^d, x* = 0, and the replication runner around it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snle/evidence.hpp"
#include "snle/snle.hpp"

namespace snle::bench {

/// Number of gaussian_simulate calls made by this process.
std::uint64_t simulation_count() noexcept;

std::vector<double> gaussian_simulate(std::span<const double> theta, Rng& rng);
Simulator gaussian_simulator(std::size_t d);
PriorBox gaussian_prior(std::size_t d);
std::vector<double> gaussian_observation(std::size_t d);

/// log N(x | theta, I).
double gaussian_log_likelihood(std::span<const double> x, std::span<const double> theta);

/// d * (log erf(sqrt 2) - log 4).
double true_log_evidence(std::size_t d);

struct ExperimentConfig {
    std::string profile = "full";
    std::vector<std::size_t> dims{1, 2, 5, 10};
    std::vector<evidence::Method> methods{evidence::Method::HM, evidence::Method::IS, evidence::Method::SIS};
    std::vector<double> is_temperatures{1.0, 1.25, 1.5, 2.0};
    std::vector<double> hm_temperatures{0.5, 0.65, 0.8, 1.0};
    std::size_t replications = 25;
    SnleConfig snle;
    evidence::IsConfig is;
    evidence::HmConfig hm;
    std::size_t is_posterior_samples = 1000;
    std::size_t hm_posterior_samples = 2000;
    std::size_t hm_learn = 1000;
    /// SIS ratios from fresh MCMC draws instead of the SNLE proposals.
    bool sis_fresh_draws = false;
    std::uint64_t seed = 2025;
    /// Replications run concurrently; results do not depend on this.
    std::size_t jobs = 1;

    void validate() const;
};

/// Full protocol: L=5, N=1000, MAF 5x[64,64], IS MAF 3x[32,32], 25 replications.
ExperimentConfig full_profile();
/// Reduced run for CI: L=3, N=500, R=5, d in {1, 2}, default temperatures only.
ExperimentConfig ci_profile();
/// CI settings at d=5 with the temperature grids {1, 1.25, 2} and {0.5, 0.8, 1}.
ExperimentConfig ci_extended_profile();
ExperimentConfig profile_by_name(const std::string& name);

struct ResultRow {
    std::string run_id;
    std::size_t d = 0;
    std::size_t replication = 0;
    evidence::Method method = evidence::Method::IS;
    double temperature = 1.0;
    double log_c = 0.0;
    double true_log_c = 0.0;
    double ess = 0.0;
    double wallclock_s = 0.0;
    std::uint64_t seed = 0;
    double log_se = 0.0;
    std::vector<double> log_ratios;
};

/// Everything one replication produced, for persistence by the caller.
struct ReplicationArtifacts {
    std::size_t d = 0;
    std::size_t replication = 0;
    std::uint64_t seed = 0;
    SnleRounds rounds;
    Matrix is_posterior{};
    Matrix hm_posterior{};
    std::optional<flows::Flow> is_proposal{};
    std::optional<flows::Flow> hm_psi{};
};

struct ReplicationRecord {
    std::size_t d = 0;
    std::size_t replication = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double seconds = 0.0;
    /// Final-posterior draws used for IS (empty when IS was not requested).
    Matrix posterior;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<ReplicationRecord> replications;
    std::size_t failures = 0;
};

struct ExperimentHooks {
    /// Called once per successful replication, serialized across jobs.
    std::function<void(const ReplicationArtifacts&)> on_replication;
    std::function<void(const std::string&)> log;
};

std::uint64_t replication_seed(std::uint64_t master, std::size_t d, std::size_t replication);
/// Seed of the IS proposal draws at temperature t.
std::uint64_t is_sample_seed(std::uint64_t replication_seed, double t);

std::string run_id(std::size_t d, std::size_t replication);

/// One SNLE run per (d, replication); every requested (method, T) estimate is
/// computed from that run. Failed replications are recorded and skipped.
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks = {});

struct SummaryRow {
    evidence::Method method = evidence::Method::IS;
    std::size_t d = 0;
    double temperature = 1.0;
    std::size_t n = 0;
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    double iqr = 0.0;
    double true_log_c = 0.0;
    /// median - true_log_c
    double bias = 0.0;
};

/// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> values, double p);

/// Per-(method, d, T) order statistics, sorted by d, method and T. Non-finite
/// estimates are dropped; a group left empty is omitted and reported to `warn`.
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows,
                                  const std::function<void(const std::string&)>& warn = {});

extern const std::vector<std::string> kResultsHeader;

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);
/// Evidence-estimate records: run_id, method, d, temperature, seed, log_C, ess, log_ratios.
void write_estimates_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_estimates_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);

}  // namespace snle::bench
