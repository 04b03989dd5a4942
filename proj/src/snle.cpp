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

#include "snle/snle.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "snle/errors.hpp"
#include "snle/io.hpp"

namespace snle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix stack_rows(const std::vector<const Matrix*>& parts, std::size_t cols)
{
    std::size_t n = 0;
    for (const auto* p : parts) {
        n += p->rows();
    }
    Matrix out(n, cols);
    std::size_t r = 0;
    for (const auto* p : parts) {
        for (std::size_t i = 0; i < p->rows(); ++i, ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                out(r, c) = (*p)(i, c);
            }
        }
    }
    return out;
}

}  // namespace

PriorBox::PriorBox(std::vector<double> lower, std::vector<double> upper)
    : lower_(std::move(lower)), upper_(std::move(upper))
{
    if (lower_.empty() || lower_.size() != upper_.size()) {
        throw ConfigError("prior box: bounds must be nonempty and of equal length");
    }
    for (std::size_t i = 0; i < lower_.size(); ++i) {
        if (!(lower_[i] < upper_[i]) || !std::isfinite(lower_[i]) || !std::isfinite(upper_[i])) {
            throw ConfigError("prior box: lower bound must be below upper bound in coordinate " + std::to_string(i));
        }
        log_volume_ += std::log(upper_[i] - lower_[i]);
    }
}

PriorBox PriorBox::cube(std::size_t d, double lo, double hi)
{
    return PriorBox(std::vector<double>(d, lo), std::vector<double>(d, hi));
}

bool PriorBox::contains(std::span<const double> theta) const
{
    if (theta.size() != dim()) {
        throw DimensionError("prior box: parameter has wrong dimension");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (!(theta[i] >= lower_[i] && theta[i] <= upper_[i])) {
            return false;
        }
    }
    return true;
}

double PriorBox::log_prob(std::span<const double> theta) const
{
    return contains(theta) ? -log_volume_ : kNegInf;
}

std::vector<double> PriorBox::sample(Rng& rng) const
{
    std::vector<double> out(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
        out[i] = lower_[i] + (upper_[i] - lower_[i]) * uniform01(rng);
    }
    return out;
}

Matrix PriorBox::sample(std::size_t n, Rng& rng) const
{
    Matrix out(n, dim());
    for (std::size_t r = 0; r < n; ++r) {
        auto s = sample(rng);
        std::copy(s.begin(), s.end(), out.row_span(r).begin());
    }
    return out;
}

std::vector<double> PriorBox::center() const
{
    std::vector<double> c(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
        c[i] = 0.5 * (lower_[i] + upper_[i]);
    }
    return c;
}

std::vector<double> PriorBox::half_width() const
{
    std::vector<double> h(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
        h[i] = 0.5 * (upper_[i] - lower_[i]);
    }
    return h;
}

train::Dataset SnleRounds::dataset(std::size_t through_round) const
{
    if (through_round > rounds.size()) {
        throw UsageError("dataset: round " + std::to_string(through_round) + " not completed");
    }
    std::vector<const Matrix*> th;
    std::vector<const Matrix*> xs;
    for (std::size_t l = 0; l < through_round; ++l) {
        th.push_back(&rounds[l].theta);
        xs.push_back(&rounds[l].x);
    }
    train::Dataset d;
    d.context = stack_rows(th, prior.dim());
    d.data = stack_rows(xs, x_star.size());
    return d;
}

const flows::Flow& SnleRounds::flow(std::size_t round) const
{
    if (round == 0 || round > rounds.size()) {
        throw UsageError("no surrogate for round " + std::to_string(round) + " (completed " +
                         std::to_string(rounds.size()) + ")");
    }
    return rounds[round - 1].flow;
}

double posterior_log_density(const SnleRounds& rounds, std::size_t round, std::span<const double> theta)
{
    if (round > rounds.completed()) {
        throw UsageError("posterior_log_density: round " + std::to_string(round) + " out of range [0, " +
                         std::to_string(rounds.completed()) + "]");
    }
    const double lp = rounds.prior.log_prob(theta);
    if (round == 0 || !std::isfinite(lp)) {
        return lp;
    }
    return lp + rounds.flow(round).log_prob(rounds.x_star, theta);
}

mcmc::LogTarget posterior_target(const SnleRounds& rounds, std::size_t round)
{
    if (round > rounds.completed()) {
        throw UsageError("posterior_target: round out of range");
    }
    return mcmc::LogTarget{"snle posterior round " + std::to_string(round),
                           [&rounds, round](std::span<const double> th) {
                               return posterior_log_density(rounds, round, th);
                           }};
}

Matrix sample_posterior(const SnleRounds& rounds, std::size_t round, std::size_t n, const McmcConfig& mcmc,
                        std::uint64_t seed)
{
    if (n == 0) {
        throw UsageError("sample_posterior: n must be positive");
    }
    mcmc::ChainSpec spec;
    spec.n_chains = mcmc.n_chains;
    spec.draws_per_chain = mcmc::draws_per_chain_for(n, mcmc.n_chains);
    spec.burn_in = mcmc.burn_in;
    spec.thin = mcmc.thin;
    spec.seed = seed;
    spec.threads = mcmc.threads;
    mcmc::SliceConfig slice;
    slice.widths = rounds.prior.half_width();
    slice.max_doublings = mcmc.max_doublings;
    const PriorBox& prior = rounds.prior;
    auto result = mcmc::run_chains(posterior_target(rounds, round), spec, slice,
                                   [&prior](Rng& rng) { return prior.sample(rng); });
    if (result.draws.rows() == n) {
        return std::move(result.draws);
    }
    Matrix out(n, result.draws.cols());
    std::copy_n(result.draws.data().begin(), n * result.draws.cols(), out.data().begin());
    return out;
}

Matrix sample_final_posterior(const SnleRounds& rounds, std::size_t n, const McmcConfig& mcmc, std::uint64_t seed)
{
    if (rounds.completed() == 0) {
        throw UsageError("sample_final_posterior: no completed rounds");
    }
    return sample_posterior(rounds, rounds.completed(), n, mcmc, seed);
}

SnleRounds run_snle(const Simulator& sim, const PriorBox& prior, std::span<const double> x_star,
                    const SnleConfig& config, std::uint64_t seed)
{
    if (config.rounds == 0) {
        throw ConfigError("run_snle: need at least one round");
    }
    if (config.sims_per_round < 10) {
        throw ConfigError("run_snle: need at least 10 simulations per round");
    }
    if (x_star.size() != sim.data_dim) {
        throw DimensionError("run_snle: observation has dimension " + std::to_string(x_star.size()) +
                             ", simulator produces " + std::to_string(sim.data_dim));
    }
    config.train.validate();

    SnleRounds out{prior, std::vector<double>(x_star.begin(), x_star.end()), config, seed, {}};
    out.config.flow.dim = sim.data_dim;
    out.config.flow.context_dim = prior.dim();
    const std::size_t n = config.sims_per_round;

    for (std::size_t l = 1; l <= config.rounds; ++l) {
        const auto t_sample = std::chrono::steady_clock::now();
        Matrix theta;
        const std::uint64_t proposal_seed = derive_seed(seed, {l, tag("proposal")});
        if (l == 1) {
            Rng rng(proposal_seed);
            theta = prior.sample(n, rng);
        } else {
            theta = sample_posterior(out, l - 1, n, config.mcmc, proposal_seed);
        }
        const double sample_seconds = seconds_since(t_sample);

        const std::uint64_t sim_seed = derive_seed(seed, {l, tag("simulate")});
        Matrix x(n, sim.data_dim);
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng(derive_seed(sim_seed, {i}));
            std::vector<double> xi;
            try {
                xi = sim.simulate(theta.row_span(i), rng);
            } catch (const std::exception& e) {
                throw SimulationError("simulator failed in round " + std::to_string(l) + " at draw " +
                                      std::to_string(i) + ": " + e.what());
            }
            if (xi.size() != sim.data_dim) {
                throw SimulationError("simulator returned wrong dimension in round " + std::to_string(l) +
                                      " at draw " + std::to_string(i));
            }
            std::copy(xi.begin(), xi.end(), x.row_span(i).begin());
        }

        RoundArtifact art{config.warm_start && l > 1
                              ? out.rounds.back().flow
                              : flows::Flow(out.config.flow, derive_seed(seed, {l, tag("init")})),
                          std::move(theta), std::move(x), {}, sim_seed, 0.0, sample_seconds};
        art.flow.set_temperature(1.0);
        art.flow.set_context_standardization(prior.center(), prior.half_width());
        out.rounds.push_back(std::move(art));

        RoundArtifact& cur = out.rounds.back();
        const train::Dataset data = out.dataset(l);
        const auto t_train = std::chrono::steady_clock::now();
        Rng train_rng(derive_seed(seed, {l, tag("train")}));
        try {
            cur.report = train::fit_mle(cur.flow, data, config.train, train_rng);
        } catch (const TrainingDivergence& e) {
            throw TrainingDivergence("round " + std::to_string(l) + ": " + e.what());
        }
        cur.train_seconds = seconds_since(t_train);
    }
    return out;
}

void save_rounds(const SnleRounds& rounds, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["format"] = "snle-rounds";
    j["version"] = 1;
    j["seed"] = rounds.seed;
    j["prior_lower"] = rounds.prior.lower();
    j["prior_upper"] = rounds.prior.upper();
    j["x_star"] = rounds.x_star;
    j["config"] = io::to_json(rounds.config);
    nlohmann::json per_round = nlohmann::json::array();
    for (std::size_t l = 0; l < rounds.rounds.size(); ++l) {
        const auto& r = rounds.rounds[l];
        const std::string flow_file = "round_" + std::to_string(l + 1) + "_flow.json";
        const std::string report_file = "round_" + std::to_string(l + 1) + "_train.csv";
        r.flow.save(dir / flow_file);
        io::write_text(dir / report_file, r.report.to_csv());
        per_round.push_back({{"round", l + 1},
                             {"flow", flow_file},
                             {"train_report", report_file},
                             {"sim_seed", r.sim_seed},
                             {"best_epoch", r.report.best_epoch},
                             {"best_val_nll", r.report.best_val_nll},
                             {"epochs", r.report.epochs.size()},
                             {"stopped_early", r.report.stopped_early},
                             {"train_seconds", r.train_seconds},
                             {"sample_seconds", r.sample_seconds}});
    }
    j["rounds"] = per_round;
    io::write_json(dir / "snle.json", j);

    io::CsvTable draws;
    draws.header = {"round", "index"};
    for (std::size_t k = 0; k < rounds.prior.dim(); ++k) {
        draws.header.push_back("theta_" + std::to_string(k));
    }
    for (std::size_t k = 0; k < rounds.x_star.size(); ++k) {
        draws.header.push_back("x_" + std::to_string(k));
    }
    for (std::size_t l = 0; l < rounds.rounds.size(); ++l) {
        const auto& r = rounds.rounds[l];
        for (std::size_t i = 0; i < r.theta.rows(); ++i) {
            std::vector<std::string> row{std::to_string(l + 1), std::to_string(i)};
            for (double v : r.theta.row_span(i)) {
                row.push_back(io::format_double(v));
            }
            for (double v : r.x.row_span(i)) {
                row.push_back(io::format_double(v));
            }
            draws.rows.push_back(std::move(row));
        }
    }
    io::write_csv(dir / "draws.csv", draws);
}

SnleRounds load_rounds(const std::filesystem::path& dir)
{
    for (const char* f : {"snle.json", "draws.csv"}) {
        if (!std::filesystem::exists(dir / f)) {
            throw FileError("missing SNLE artifact " + (dir / f).string());
        }
    }
    const nlohmann::json j = io::read_json(dir / "snle.json");
    try {
        SnleRounds out{PriorBox(j.at("prior_lower").get<std::vector<double>>(),
                                j.at("prior_upper").get<std::vector<double>>()),
                       j.at("x_star").get<std::vector<double>>(), io::snle_config_from_json(j.at("config")),
                       j.at("seed").get<std::uint64_t>(),
                       {}};
        const io::CsvTable draws = io::read_csv(dir / "draws.csv");
        const std::size_t dt = out.prior.dim();
        const std::size_t dx = out.x_star.size();
        if (draws.header.size() != 2 + dt + dx) {
            throw FileError("draws.csv: unexpected column count");
        }
        for (const auto& r : j.at("rounds")) {
            const auto l = r.at("round").get<std::size_t>();
            const auto flow_path = dir / r.at("flow").get<std::string>();
            if (!std::filesystem::exists(flow_path)) {
                throw FileError("missing SNLE artifact " + flow_path.string());
            }
            std::vector<const std::vector<std::string>*> rows;
            for (const auto& row : draws.rows) {
                if (std::stoul(row[0]) == l) {
                    rows.push_back(&row);
                }
            }
            Matrix theta(rows.size(), dt);
            Matrix x(rows.size(), dx);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::size_t k = 0; k < dt; ++k) {
                    theta(i, k) = io::parse_double((*rows[i])[2 + k]);
                }
                for (std::size_t k = 0; k < dx; ++k) {
                    x(i, k) = io::parse_double((*rows[i])[2 + dt + k]);
                }
            }
            RoundArtifact art{flows::Flow::load(flow_path), std::move(theta), std::move(x), {},
                              r.at("sim_seed").get<std::uint64_t>(), r.at("train_seconds").get<double>(),
                              r.at("sample_seconds").get<double>()};
            art.report.best_epoch = r.at("best_epoch").get<std::size_t>();
            art.report.best_val_nll = r.at("best_val_nll").get<double>();
            art.report.stopped_early = r.at("stopped_early").get<bool>();
            out.rounds.push_back(std::move(art));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FileError((dir / "snle.json").string() + ": " + e.what());
    }
}

}  // namespace snle
