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

// Marginal-likelihood estimators built on SNLE output, all computed in log
// space:
//   SIS - telescoping product of round-to-round evidence ratios,
//   IS  - importance sampling from a flow fitted to the final posterior
//         sample and dilated with a temperature T >= 1,
//   HM  - retargeted harmonic mean with a flow fitted to half of a posterior
//         sample and concentrated with 0 < T <= 1.
//
// Every estimator also has a form taking analytic densities in place of
// flows, so it can be checked against closed-form answers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "snle/adcore.hpp"
#include "snle/flows.hpp"
#include "snle/rng.hpp"
#include "snle/snle.hpp"
#include "snle/trainer.hpp"

namespace snle::evidence {

using ad::Matrix;

enum class Method { SIS, IS, HM };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct EvidenceEstimate {
    Method method = Method::IS;
    double log_c = 0.0;
    /// Delta-method standard error of log_c.
    double log_se = 0.0;
    /// log R_l for l = 1..L (SIS only).
    std::vector<double> log_ratios;
    /// (sum w)^2 / sum w^2 of the importance or harmonic-mean weights (IS/HM).
    double ess = 0.0;
    double temperature = 1.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

/// log((1/n) sum exp(v_i)) with a max shift; -infinity iff every entry is.
double log_mean_exp(std::span<const double> values);

struct WeightSummary {
    double log_mean = 0.0;
    double ess = 0.0;
    double log_se = 0.0;
};

/// Mean, effective sample size and delta-method standard error of
/// log(mean(w)) for log-weights v.
WeightSummary summarize_log_weights(std::span<const double> log_weights);

/// Batched log-density over rows of theta.
using BatchLogDensity = std::function<std::vector<double>(const Matrix&)>;

/// A normalized density with sampling.
struct Density {
    std::string name;
    BatchLogDensity log_prob;
    std::function<Matrix(std::size_t, Rng&)> sample;
};

/// Lifts a pointwise log-density to the batched form.
BatchLogDensity pointwise(std::function<double(std::span<const double>)> f);

/// theta -> log q(x* | theta) for a conditional flow.
BatchLogDensity surrogate_likelihood(const flows::Flow& q, std::span<const double> x_star);

/// Unconditional flow as a Density. The flow is copied.
Density flow_density(const flows::Flow& flow);

Density prior_density(const PriorBox& prior);

// --- SIS -------------------------------------------------------------------

/// Analytic-density form. per_round[l] is log q^(l+1)(x* | .), and
/// proposals[l] holds the draws from the round-l posterior used at round l+1.
EvidenceEstimate sis_estimate(std::span<const BatchLogDensity> per_round, std::span<const Matrix> proposals);

struct SisOptions {
    /// Draw fresh MCMC samples for each ratio instead of reusing the SNLE proposals.
    bool fresh_draws = false;
    McmcConfig mcmc;
    std::uint64_t seed = 0;
};

EvidenceEstimate sis_estimate(const SnleRounds& rounds, const SisOptions& options = {});

// --- IS --------------------------------------------------------------------

struct IsConfig {
    flows::FlowConfig proposal{flows::Architecture::MAF, 1, 0, 3, {32, 32}};
    train::TrainConfig train;
    double temperature = 1.25;
    std::size_t n_samples = 1000;
};

struct FittedDensity {
    flows::Flow flow;
    train::TrainReport report;
};

/// Fits an unconditional flow to the rows of `draws`.
FittedDensity fit_density(const Matrix& draws, flows::FlowConfig config, const train::TrainConfig& train,
                          std::uint64_t seed);

/// log C = log mean over proposal draws of log_lik + log prior - log proposal.
/// Draws outside the prior box get log-weight -infinity.
EvidenceEstimate is_estimate_with_proposal(const BatchLogDensity& log_lik, const PriorBox& prior,
                                           const Density& proposal, std::size_t n_samples, std::uint64_t seed,
                                           double temperature = 1.0);

/// Fits h to posterior_draws, tempers it to config.temperature and samples from it.
EvidenceEstimate is_estimate(const BatchLogDensity& log_lik, const PriorBox& prior, const Matrix& posterior_draws,
                             const IsConfig& config, std::uint64_t seed);

/// Tempered IS from an already fitted proposal flow.
EvidenceEstimate is_estimate_tempered(const BatchLogDensity& log_lik, const PriorBox& prior,
                                      const flows::Flow& fitted, double temperature, std::size_t n_samples,
                                      std::uint64_t seed);

// --- HM --------------------------------------------------------------------

/// Evaluating set = rows [0, n_eval), learning set = rows [n_eval, n).
struct HmSplit {
    std::size_t n_learn = 0;
    std::size_t n_eval = 0;

    static HmSplit make(std::size_t n_total, std::size_t n_learn);
    Matrix learning_set(const Matrix& draws) const;
    Matrix evaluating_set(const Matrix& draws) const;
};

struct HmConfig {
    flows::FlowConfig psi{flows::Architecture::RealNVP, 1, 0, 4, {32, 32}};
    train::TrainConfig train;
    double temperature = 0.8;
};

/// log(1/C) = log mean over eval draws of log psi - log_lik - log prior; returns log C.
EvidenceEstimate hm_estimate_with_density(const BatchLogDensity& log_lik, const PriorBox& prior,
                                          const Matrix& eval_draws, const BatchLogDensity& log_psi,
                                          double temperature = 1.0);

EvidenceEstimate hm_estimate(const BatchLogDensity& log_lik, const PriorBox& prior, const Matrix& posterior_draws,
                             const HmSplit& split, const HmConfig& config, std::uint64_t seed);

/// HM from an already fitted psi flow.
EvidenceEstimate hm_estimate_tempered(const BatchLogDensity& log_lik, const PriorBox& prior,
                                      const Matrix& eval_draws, const flows::Flow& fitted, double temperature);

}  // namespace snle::evidence
