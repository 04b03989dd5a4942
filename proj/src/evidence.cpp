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

#include "snle/evidence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "snle/errors.hpp"

namespace snle::evidence {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v)
{
    double m = kNegInf;
    for (double x : v) {
        if (std::isnan(x)) {
            throw NumericError("log-weight is NaN");
        }
        m = std::max(m, x);
    }
    if (m == kNegInf) {
        return kNegInf;
    }
    if (std::isinf(m)) {
        throw NumericError("log-weight is +infinity");
    }
    double s = 0.0;
    for (double x : v) {
        s += std::exp(x - m);
    }
    return m + std::log(s);
}

Matrix repeat_row(std::span<const double> row, std::size_t n)
{
    Matrix m(n, row.size());
    for (std::size_t r = 0; r < n; ++r) {
        std::copy(row.begin(), row.end(), m.row_span(r).begin());
    }
    return m;
}

Matrix rows_range(const Matrix& m, std::size_t begin, std::size_t end)
{
    Matrix out(end - begin, m.cols());
    std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
              m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()), out.data().begin());
    return out;
}

void check_temperature_is(double t)
{
    if (!(t >= 1.0) || !std::isfinite(t)) {
        throw ConfigError("IS temperature must be >= 1, got " + std::to_string(t));
    }
}

void check_temperature_hm(double t)
{
    if (!(t > 0.0 && t <= 1.0)) {
        throw ConfigError("HM temperature must lie in (0, 1], got " + std::to_string(t));
    }
}

}  // namespace

std::string to_string(Method m)
{
    switch (m) {
    case Method::SIS: return "SIS";
    case Method::IS: return "IS";
    case Method::HM: return "HM";
    }
    return "?";
}

Method method_from_string(const std::string& s)
{
    if (s == "SIS" || s == "sis") {
        return Method::SIS;
    }
    if (s == "IS" || s == "is") {
        return Method::IS;
    }
    if (s == "HM" || s == "hm") {
        return Method::HM;
    }
    throw ConfigError("unknown estimator '" + s + "' (expected SIS, IS or HM)");
}

double log_mean_exp(std::span<const double> values)
{
    if (values.empty()) {
        throw UsageError("log_mean_exp of an empty vector");
    }
    const double lse = log_sum_exp(values);
    if (lse == kNegInf) {
        return kNegInf;
    }
    return lse - std::log(static_cast<double>(values.size()));
}

WeightSummary summarize_log_weights(std::span<const double> log_weights)
{
    WeightSummary s;
    s.log_mean = log_mean_exp(log_weights);
    if (s.log_mean == kNegInf) {
        return s;
    }
    // Weights relative to the mean are O(1); a two-pass variance keeps the
    // standard error exact when all weights coincide.
    const auto n = static_cast<double>(log_weights.size());
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double v : log_weights) {
        const double w = std::exp(v - s.log_mean);
        sum += w;
        sum_sq += w * w;
    }
    s.ess = sum * sum / sum_sq;
    if (n > 1.0) {
        const double mu = sum / n;
        double ss = 0.0;
        for (double v : log_weights) {
            const double dev = std::exp(v - s.log_mean) - mu;
            ss += dev * dev;
        }
        s.log_se = std::sqrt(ss / (n - 1.0) / n) / mu;
    }
    return s;
}

BatchLogDensity pointwise(std::function<double(std::span<const double>)> f)
{
    return [f = std::move(f)](const Matrix& theta) {
        std::vector<double> out(theta.rows());
        for (std::size_t r = 0; r < theta.rows(); ++r) {
            out[r] = f(theta.row_span(r));
        }
        return out;
    };
}

BatchLogDensity surrogate_likelihood(const flows::Flow& q, std::span<const double> x_star)
{
    if (!q.conditional()) {
        throw UsageError("surrogate_likelihood: flow must be conditional");
    }
    if (x_star.size() != q.dim()) {
        throw DimensionError("surrogate_likelihood: observation has wrong dimension");
    }
    auto flow = std::make_shared<const flows::Flow>(q);
    std::vector<double> x(x_star.begin(), x_star.end());
    return [flow, x](const Matrix& theta) { return flow->log_prob(repeat_row(x, theta.rows()), &theta); };
}

Density flow_density(const flows::Flow& flow)
{
    if (flow.conditional()) {
        throw UsageError("flow_density: flow must be unconditional");
    }
    auto f = std::make_shared<const flows::Flow>(flow);
    return Density{"flow",
                   [f](const Matrix& theta) { return f->log_prob(theta, nullptr); },
                   [f](std::size_t n, Rng& rng) { return f->sample(n, rng); }};
}

Density prior_density(const PriorBox& prior)
{
    return Density{"prior", pointwise([prior](std::span<const double> th) { return prior.log_prob(th); }),
                   [prior](std::size_t n, Rng& rng) { return prior.sample(n, rng); }};
}

EvidenceEstimate sis_estimate(std::span<const BatchLogDensity> per_round, std::span<const Matrix> proposals)
{
    if (per_round.empty() || per_round.size() != proposals.size()) {
        throw UsageError("sis_estimate: need one likelihood and one proposal sample per round");
    }
    EvidenceEstimate est;
    est.method = Method::SIS;
    double var = 0.0;
    std::vector<double> prev_on_cur;
    for (std::size_t l = 0; l < per_round.size(); ++l) {
        const Matrix& theta = proposals[l];
        if (theta.rows() == 0) {
            throw UsageError("sis_estimate: round " + std::to_string(l + 1) + " has no proposal draws");
        }
        std::vector<double> cur = per_round[l](theta);
        std::vector<double> terms(cur.size());
        if (l == 0) {
            terms = cur;
        } else {
            const std::vector<double> prev = per_round[l - 1](theta);
            for (std::size_t i = 0; i < cur.size(); ++i) {
                terms[i] = cur[i] - prev[i];
            }
        }
        const WeightSummary ws = summarize_log_weights(terms);
        est.log_ratios.push_back(ws.log_mean);
        est.log_c += ws.log_mean;
        var += ws.log_se * ws.log_se;
        est.n_samples += theta.rows();
    }
    est.log_se = std::sqrt(var);
    return est;
}

EvidenceEstimate sis_estimate(const SnleRounds& rounds, const SisOptions& options)
{
    const std::size_t L = rounds.completed();
    if (L == 0) {
        throw UsageError("sis_estimate: no completed rounds");
    }
    std::vector<BatchLogDensity> lik;
    std::vector<Matrix> proposals;
    for (std::size_t l = 1; l <= L; ++l) {
        const auto& art = rounds.rounds[l - 1];
        if (art.theta.rows() == 0) {
            throw UsageError("sis_estimate: missing proposal draws for round " + std::to_string(l));
        }
        lik.push_back(surrogate_likelihood(art.flow, rounds.x_star));
        if (!options.fresh_draws) {
            proposals.push_back(art.theta);
        } else if (l == 1) {
            Rng rng(derive_seed(options.seed, {l}));
            proposals.push_back(rounds.prior.sample(art.theta.rows(), rng));
        } else {
            proposals.push_back(
                sample_posterior(rounds, l - 1, art.theta.rows(), options.mcmc, derive_seed(options.seed, {l})));
        }
    }
    EvidenceEstimate est = sis_estimate(lik, proposals);
    est.seed = options.seed;
    return est;
}

FittedDensity fit_density(const Matrix& draws, flows::FlowConfig config, const train::TrainConfig& train,
                          std::uint64_t seed)
{
    if (draws.rows() == 0) {
        throw UsageError("fit_density: no draws");
    }
    config.dim = draws.cols();
    config.context_dim = 0;
    FittedDensity out{flows::Flow(config, derive_seed(seed, {tag("init")})), {}};
    Rng rng(derive_seed(seed, {tag("train")}));
    out.report = train::fit_mle(out.flow, train::Dataset::unconditional(draws), train, rng);
    return out;
}

EvidenceEstimate is_estimate_with_proposal(const BatchLogDensity& log_lik, const PriorBox& prior,
                                           const Density& proposal, std::size_t n_samples, std::uint64_t seed,
                                           double temperature)
{
    if (n_samples == 0) {
        throw UsageError("is_estimate: n_samples must be positive");
    }
    Rng rng(seed);
    const Matrix theta = proposal.sample(n_samples, rng);
    if (theta.rows() != n_samples || theta.cols() != prior.dim()) {
        throw DimensionError("is_estimate: proposal returned wrong shape");
    }

    std::vector<std::size_t> inside;
    for (std::size_t r = 0; r < theta.rows(); ++r) {
        if (prior.contains(theta.row_span(r))) {
            inside.push_back(r);
        }
    }
    if (inside.empty()) {
        throw DegenerateProposal("is_estimate: all " + std::to_string(n_samples) +
                                 " proposals fall outside the prior support");
    }
    Matrix kept(inside.size(), theta.cols());
    for (std::size_t i = 0; i < inside.size(); ++i) {
        const auto src = theta.row_span(inside[i]);
        std::copy(src.begin(), src.end(), kept.row_span(i).begin());
    }
    const std::vector<double> ll = log_lik(kept);
    const std::vector<double> lh = proposal.log_prob(kept);

    std::vector<double> log_w(n_samples, kNegInf);
    for (std::size_t i = 0; i < inside.size(); ++i) {
        log_w[inside[i]] = ll[i] + prior.log_prob(kept.row_span(i)) - lh[i];
    }
    const WeightSummary ws = summarize_log_weights(log_w);
    EvidenceEstimate est;
    est.method = Method::IS;
    est.log_c = ws.log_mean;
    est.log_se = ws.log_se;
    est.ess = ws.ess;
    est.temperature = temperature;
    est.n_samples = n_samples;
    est.seed = seed;
    return est;
}

EvidenceEstimate is_estimate_tempered(const BatchLogDensity& log_lik, const PriorBox& prior,
                                      const flows::Flow& fitted, double temperature, std::size_t n_samples,
                                      std::uint64_t seed)
{
    check_temperature_is(temperature);
    return is_estimate_with_proposal(log_lik, prior, flow_density(fitted.with_temperature(temperature)), n_samples,
                                     seed, temperature);
}

EvidenceEstimate is_estimate(const BatchLogDensity& log_lik, const PriorBox& prior, const Matrix& posterior_draws,
                             const IsConfig& config, std::uint64_t seed)
{
    check_temperature_is(config.temperature);
    if (posterior_draws.rows() == 0) {
        throw UsageError("is_estimate: no posterior draws");
    }
    const FittedDensity h = fit_density(posterior_draws, config.proposal, config.train, derive_seed(seed, {tag("h")}));
    return is_estimate_tempered(log_lik, prior, h.flow, config.temperature, config.n_samples,
                                derive_seed(seed, {tag("sample")}));
}

HmSplit HmSplit::make(std::size_t n_total, std::size_t n_learn)
{
    if (n_learn == 0 || n_learn > n_total) {
        throw UsageError("HmSplit: learning set size must lie in [1, N]");
    }
    if (n_learn == n_total) {
        throw UsageError("HmSplit: evaluating set is empty");
    }
    return HmSplit{n_learn, n_total - n_learn};
}

Matrix HmSplit::evaluating_set(const Matrix& draws) const
{
    if (draws.rows() != n_learn + n_eval) {
        throw DimensionError("HmSplit: sample size does not match the split");
    }
    return rows_range(draws, 0, n_eval);
}

Matrix HmSplit::learning_set(const Matrix& draws) const
{
    if (draws.rows() != n_learn + n_eval) {
        throw DimensionError("HmSplit: sample size does not match the split");
    }
    return rows_range(draws, n_eval, n_eval + n_learn);
}

EvidenceEstimate hm_estimate_with_density(const BatchLogDensity& log_lik, const PriorBox& prior,
                                          const Matrix& eval_draws, const BatchLogDensity& log_psi,
                                          double temperature)
{
    if (eval_draws.rows() == 0) {
        throw UsageError("hm_estimate: evaluating set is empty");
    }
    const std::vector<double> ll = log_lik(eval_draws);
    const std::vector<double> lpsi = log_psi(eval_draws);
    std::vector<double> terms(eval_draws.rows());
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const double lp = prior.log_prob(eval_draws.row_span(i));
        if (!std::isfinite(lp)) {
            throw UsageError("hm_estimate: posterior draw outside the prior support");
        }
        terms[i] = lpsi[i] - ll[i] - lp;
    }
    const WeightSummary ws = summarize_log_weights(terms);
    EvidenceEstimate est;
    est.method = Method::HM;
    est.log_c = -ws.log_mean;
    est.log_se = ws.log_se;
    est.ess = ws.ess;
    est.temperature = temperature;
    est.n_samples = eval_draws.rows();
    return est;
}

EvidenceEstimate hm_estimate_tempered(const BatchLogDensity& log_lik, const PriorBox& prior,
                                      const Matrix& eval_draws, const flows::Flow& fitted, double temperature)
{
    check_temperature_hm(temperature);
    const Density psi = flow_density(fitted.with_temperature(temperature));
    return hm_estimate_with_density(log_lik, prior, eval_draws, psi.log_prob, temperature);
}

EvidenceEstimate hm_estimate(const BatchLogDensity& log_lik, const PriorBox& prior, const Matrix& posterior_draws,
                             const HmSplit& split, const HmConfig& config, std::uint64_t seed)
{
    check_temperature_hm(config.temperature);
    if (split.n_eval == 0) {
        throw UsageError("hm_estimate: evaluating set is empty");
    }
    const FittedDensity psi =
        fit_density(split.learning_set(posterior_draws), config.psi, config.train, derive_seed(seed, {tag("psi")}));
    EvidenceEstimate est =
        hm_estimate_tempered(log_lik, prior, split.evaluating_set(posterior_draws), psi.flow, config.temperature);
    est.seed = seed;
    return est;
}

}  // namespace snle::evidence
