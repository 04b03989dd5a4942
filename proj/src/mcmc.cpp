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

#include "snle/mcmc.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "snle/errors.hpp"

namespace snle::mcmc {

namespace {

constexpr std::size_t kMaxInitAttempts = 1000;

double width_for(const SliceConfig& config, std::size_t coord)
{
    if (config.widths.empty()) {
        throw ConfigError("slice sampler: no bracket width given");
    }
    const double w = config.widths.size() == 1 ? config.widths[0] : config.widths.at(coord);
    if (!(w > 0.0) || !std::isfinite(w)) {
        throw ConfigError("slice sampler: bracket width must be positive");
    }
    return w;
}

struct ChainOutput {
    std::vector<std::vector<double>> draws;
    std::vector<double> log_density;
    SweepStats stats;
};

ChainOutput run_one_chain(const LogTarget& target, const ChainSpec& spec, const SliceConfig& config,
                          std::vector<double> state, Rng& rng)
{
    ChainOutput out;
    double lf = target(state);
    ++out.stats.evaluations;
    if (!std::isfinite(lf)) {
        throw InitError("run_chains: starting state has non-finite log-density for target '" + target.name + "'");
    }
    for (std::size_t s = 0; s < spec.burn_in; ++s) {
        slice_sweep(target, state, lf, rng, config, &out.stats);
    }
    for (std::size_t j = 0; j < spec.draws_per_chain; ++j) {
        for (std::size_t t = 0; t < spec.thin; ++t) {
            slice_sweep(target, state, lf, rng, config, &out.stats);
        }
        out.draws.push_back(state);
        out.log_density.push_back(lf);
    }
    return out;
}

template <typename StartFn>
ChainResult run_all(const LogTarget& target, const ChainSpec& spec, const SliceConfig& config, StartFn start)
{
    if (spec.n_chains == 0) {
        throw ConfigError("run_chains: need at least one chain");
    }
    if (spec.thin == 0) {
        throw ConfigError("run_chains: thinning stride must be positive");
    }
    std::vector<ChainOutput> outputs(spec.n_chains);
    std::vector<std::exception_ptr> errors(spec.n_chains);
    auto work = [&](std::size_t c) {
        try {
            Rng rng(derive_seed(spec.seed, {c}));
            std::vector<double> state = start(c, rng);
            outputs[c] = run_one_chain(target, spec, config, std::move(state), rng);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(spec.threads, spec.n_chains));
    if (threads == 1) {
        for (std::size_t c = 0; c < spec.n_chains; ++c) {
            work(c);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t c = next++; c < spec.n_chains; c = next++) {
                    work(c);
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }

    const std::size_t dim = outputs[0].draws.empty() ? 0 : outputs[0].draws[0].size();
    ChainResult result;
    result.draws = Matrix(spec.n_chains * spec.draws_per_chain, dim);
    result.log_density.resize(spec.n_chains * spec.draws_per_chain);
    for (std::size_t c = 0; c < spec.n_chains; ++c) {
        for (std::size_t j = 0; j < spec.draws_per_chain; ++j) {
            const std::size_t row = j * spec.n_chains + c;
            for (std::size_t k = 0; k < dim; ++k) {
                result.draws(row, k) = outputs[c].draws[j][k];
            }
            result.log_density[row] = outputs[c].log_density[j];
        }
        result.evaluations += outputs[c].stats.evaluations;
        result.expansions += outputs[c].stats.expansions;
        result.shrinks += outputs[c].stats.shrinks;
    }
    return result;
}

}  // namespace

void slice_sweep(const LogTarget& target, std::vector<double>& x, double& log_fx, Rng& rng, const SliceConfig& config,
                 SweepStats* stats)
{
    if (!std::isfinite(log_fx)) {
        throw SamplerStuck("slice sampler: current state has non-finite log-density for target '" + target.name +
                           "'");
    }
    SweepStats local;
    std::vector<double> probe = x;
    auto eval_at = [&](std::size_t k, double v) {
        probe[k] = v;
        ++local.evaluations;
        return target(probe);
    };

    for (std::size_t k = 0; k < x.size(); ++k) {
        const double w = width_for(config, k);
        const double x0 = x[k];
        const double level = log_fx - std::exponential_distribution<double>(1.0)(rng);

        double left = x0 - w * uniform01(rng);
        double right = left + w;
        const auto m = config.max_doublings;
        auto j = static_cast<std::size_t>(std::floor(static_cast<double>(m) * uniform01(rng)));
        std::size_t kk = m > 0 ? (m - 1 - std::min(j, m - 1)) : 0;
        while (j > 0 && eval_at(k, left) > level) {
            left -= w;
            --j;
            ++local.expansions;
        }
        while (kk > 0 && eval_at(k, right) > level) {
            right += w;
            --kk;
            ++local.expansions;
        }

        bool accepted = false;
        for (std::size_t s = 0; s < config.max_shrinks; ++s) {
            const double cand = left + (right - left) * uniform01(rng);
            const double lf = eval_at(k, cand);
            if (lf > level) {
                x[k] = cand;
                log_fx = lf;
                accepted = true;
                break;
            }
            ++local.shrinks;
            if (cand < x0) {
                left = cand;
            } else {
                right = cand;
            }
        }
        if (!accepted) {
            std::ostringstream os;
            os << "slice sampler stuck on target '" << target.name << "': coordinate " << k << " at " << x0
               << ", log level " << level << ", bracket [" << left << ", " << right << "] after "
               << config.max_shrinks << " shrinks";
            throw SamplerStuck(os.str());
        }
        probe[k] = x[k];
    }
    if (stats != nullptr) {
        stats->evaluations += local.evaluations;
        stats->expansions += local.expansions;
        stats->shrinks += local.shrinks;
    }
}

std::vector<double> slice_step(const LogTarget& target, std::span<const double> x, Rng& rng,
                               const SliceConfig& config)
{
    std::vector<double> state(x.begin(), x.end());
    double lf = target(state);
    slice_sweep(target, state, lf, rng, config);
    return state;
}

ChainResult run_chains(const LogTarget& target, const ChainSpec& spec, const SliceConfig& config,
                       const InitSampler& init)
{
    return run_all(target, spec, config, [&](std::size_t, Rng& rng) {
        for (std::size_t attempt = 0; attempt < kMaxInitAttempts; ++attempt) {
            std::vector<double> cand = init(rng);
            if (std::isfinite(target(cand))) {
                return cand;
            }
        }
        throw InitError("run_chains: no initial state with finite log-density for target '" + target.name +
                        "' after " + std::to_string(kMaxInitAttempts) + " attempts");
    });
}

ChainResult run_chains(const LogTarget& target, const ChainSpec& spec, const SliceConfig& config,
                       const Matrix& init_states)
{
    if (init_states.rows() != spec.n_chains) {
        throw DimensionError("run_chains: need one initial state per chain");
    }
    return run_all(target, spec, config, [&](std::size_t c, Rng&) {
        const auto row = init_states.row_span(c);
        return std::vector<double>(row.begin(), row.end());
    });
}

std::size_t draws_per_chain_for(std::size_t total, std::size_t n_chains)
{
    if (n_chains == 0) {
        throw ConfigError("draws_per_chain_for: need at least one chain");
    }
    return (total + n_chains - 1) / n_chains;
}

}  // namespace snle::mcmc
