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

#include "snle/gaussbench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>
#include <tuple>

#include "snle/errors.hpp"
#include "snle/io.hpp"

namespace snle::bench {

namespace {

std::atomic<std::uint64_t> g_simulations{0};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t double_bits(double v)
{
    std::uint64_t b = 0;
    std::memcpy(&b, &v, sizeof b);
    return b;
}

std::string join_doubles(const std::vector<double>& v, char sep)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) {
            out += sep;
        }
        out += io::format_double(v[i]);
    }
    return out;
}

std::vector<double> split_doubles(const std::string& s, char sep)
{
    std::vector<double> out;
    if (s.empty()) {
        return out;
    }
    std::istringstream is(s);
    std::string field;
    while (std::getline(is, field, sep)) {
        out.push_back(io::parse_double(field));
    }
    return out;
}

ResultRow make_row(std::size_t d, std::size_t rep, const evidence::EvidenceEstimate& est, double seconds)
{
    ResultRow r;
    r.run_id = run_id(d, rep);
    r.d = d;
    r.replication = rep;
    r.method = est.method;
    r.temperature = est.temperature;
    r.log_c = est.log_c;
    r.true_log_c = true_log_evidence(d);
    r.ess = est.method == evidence::Method::SIS ? std::numeric_limits<double>::quiet_NaN() : est.ess;
    r.wallclock_s = seconds;
    r.seed = est.seed;
    r.log_se = est.log_se;
    r.log_ratios = est.log_ratios;
    return r;
}

struct ReplicationOutput {
    ReplicationRecord record;
    std::vector<ResultRow> rows;
};

ReplicationOutput run_replication(const ExperimentConfig& cfg, std::size_t d, std::size_t rep,
                                  const ExperimentHooks& hooks, std::mutex& hook_mutex)
{
    using evidence::Method;
    ReplicationOutput out;
    out.record.d = d;
    out.record.replication = rep;
    const std::uint64_t rseed = replication_seed(cfg.seed, d, rep);
    out.record.seed = rseed;
    const auto t0 = std::chrono::steady_clock::now();

    try {
        const PriorBox prior = gaussian_prior(d);
        const std::vector<double> x_star = gaussian_observation(d);
        ReplicationArtifacts art{
            .d = d,
            .replication = rep,
            .seed = rseed,
            .rounds = run_snle(gaussian_simulator(d), prior, x_star, cfg.snle, derive_seed(rseed, {tag("snle")})),
        };
        const SnleRounds& rounds = art.rounds;
        const auto log_lik = evidence::surrogate_likelihood(rounds.flow(rounds.completed()), x_star);

        for (Method m : cfg.methods) {
            if (m == Method::SIS) {
                const auto t = std::chrono::steady_clock::now();
                evidence::SisOptions opts;
                opts.fresh_draws = cfg.sis_fresh_draws;
                opts.mcmc = cfg.snle.mcmc;
                opts.seed = derive_seed(rseed, {tag("sis")});
                auto est = evidence::sis_estimate(rounds, opts);
                out.rows.push_back(make_row(d, rep, est, seconds_since(t)));
            } else if (m == Method::IS) {
                const auto t = std::chrono::steady_clock::now();
                art.is_posterior = sample_final_posterior(rounds, cfg.is_posterior_samples, cfg.snle.mcmc,
                                                          derive_seed(rseed, {tag("posterior_is")}));
                auto h = evidence::fit_density(art.is_posterior, cfg.is.proposal, cfg.is.train,
                                               derive_seed(rseed, {tag("is")}));
                const double fit_seconds = seconds_since(t);
                for (double temp : cfg.is_temperatures) {
                    const auto te = std::chrono::steady_clock::now();
                    auto est = evidence::is_estimate_tempered(log_lik, prior, h.flow, temp, cfg.is.n_samples,
                                                              is_sample_seed(rseed, temp));
                    out.rows.push_back(make_row(d, rep, est, fit_seconds + seconds_since(te)));
                }
                out.record.posterior = art.is_posterior;
                art.is_proposal = std::move(h.flow);
            } else {
                const auto t = std::chrono::steady_clock::now();
                art.hm_posterior = sample_final_posterior(rounds, cfg.hm_posterior_samples, cfg.snle.mcmc,
                                                          derive_seed(rseed, {tag("posterior_hm")}));
                const auto split = evidence::HmSplit::make(art.hm_posterior.rows(), cfg.hm_learn);
                auto psi = evidence::fit_density(split.learning_set(art.hm_posterior), cfg.hm.psi, cfg.hm.train,
                                                 derive_seed(rseed, {tag("hm")}));
                const double fit_seconds = seconds_since(t);
                const Matrix eval = split.evaluating_set(art.hm_posterior);
                for (double temp : cfg.hm_temperatures) {
                    const auto te = std::chrono::steady_clock::now();
                    auto est = evidence::hm_estimate_tempered(log_lik, prior, eval, psi.flow, temp);
                    est.seed = derive_seed(rseed, {tag("hm")});
                    out.rows.push_back(make_row(d, rep, est, fit_seconds + seconds_since(te)));
                }
                art.hm_psi = std::move(psi.flow);
            }
        }
        out.record.ok = true;
        out.record.seconds = seconds_since(t0);
        if (hooks.on_replication) {
            std::lock_guard lock(hook_mutex);
            hooks.on_replication(art);
        }
    } catch (const std::exception& e) {
        out.record.ok = false;
        out.record.error = e.what();
        out.record.seconds = seconds_since(t0);
        out.rows.clear();
    }
    return out;
}

}  // namespace

std::uint64_t simulation_count() noexcept { return g_simulations.load(); }

std::vector<double> gaussian_simulate(std::span<const double> theta, Rng& rng)
{
    g_simulations.fetch_add(1, std::memory_order_relaxed);
    std::vector<double> x(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        x[i] = theta[i] + standard_normal(rng);
    }
    return x;
}

Simulator gaussian_simulator(std::size_t d)
{
    return Simulator{d, [](std::span<const double> th, Rng& rng) { return gaussian_simulate(th, rng); }};
}

PriorBox gaussian_prior(std::size_t d) { return PriorBox::cube(d, -2.0, 2.0); }

std::vector<double> gaussian_observation(std::size_t d) { return std::vector<double>(d, 0.0); }

double gaussian_log_likelihood(std::span<const double> x, std::span<const double> theta)
{
    if (x.size() != theta.size()) {
        throw DimensionError("gaussian_log_likelihood: dimension mismatch");
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = x[i] - theta[i];
        ss += e * e;
    }
    return -0.5 * ss - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

double true_log_evidence(std::size_t d)
{
    if (d == 0) {
        throw ConfigError("true_log_evidence: dimension must be at least 1");
    }
    return static_cast<double>(d) * (std::log(std::erf(std::numbers::sqrt2)) - std::log(4.0));
}

void ExperimentConfig::validate() const
{
    if (dims.empty()) {
        throw ConfigError("experiment: no dimensions given");
    }
    for (auto d : dims) {
        if (d == 0) {
            throw ConfigError("experiment: dimension must be at least 1");
        }
    }
    if (methods.empty()) {
        throw ConfigError("experiment: no estimators selected");
    }
    if (replications == 0) {
        throw ConfigError("experiment: replications must be at least 1");
    }
    for (double t : is_temperatures) {
        if (!(t >= 1.0)) {
            throw ConfigError("experiment: IS temperatures must be >= 1");
        }
    }
    for (double t : hm_temperatures) {
        if (!(t > 0.0 && t <= 1.0)) {
            throw ConfigError("experiment: HM temperatures must lie in (0, 1]");
        }
    }
    const bool has_is = std::find(methods.begin(), methods.end(), evidence::Method::IS) != methods.end();
    const bool has_hm = std::find(methods.begin(), methods.end(), evidence::Method::HM) != methods.end();
    if (has_is && is_temperatures.empty()) {
        throw ConfigError("experiment: IS requested without temperatures");
    }
    if (has_hm && hm_temperatures.empty()) {
        throw ConfigError("experiment: HM requested without temperatures");
    }
    if (has_hm && (hm_learn == 0 || hm_learn >= hm_posterior_samples)) {
        throw ConfigError("experiment: HM learning set must be smaller than the posterior sample");
    }
    if (snle.rounds == 0 || snle.sims_per_round < 10) {
        throw ConfigError("experiment: need rounds >= 1 and sims_per_round >= 10");
    }
    snle.train.validate();
    is.train.validate();
    hm.train.validate();
}

ExperimentConfig full_profile()
{
    ExperimentConfig c;
    c.profile = "full";
    return c;
}

ExperimentConfig ci_profile()
{
    ExperimentConfig c;
    c.profile = "ci";
    c.dims = {1, 2};
    c.replications = 5;
    c.snle.rounds = 3;
    c.snle.sims_per_round = 500;
    c.is_temperatures = {1.25};
    c.hm_temperatures = {0.8};
    return c;
}

ExperimentConfig ci_extended_profile()
{
    ExperimentConfig c = ci_profile();
    c.profile = "ci-extended";
    c.dims = {5};
    c.is_temperatures = {1.0, 1.25, 2.0};
    c.hm_temperatures = {0.5, 0.8, 1.0};
    return c;
}

ExperimentConfig profile_by_name(const std::string& name)
{
    if (name == "full") {
        return full_profile();
    }
    if (name == "ci") {
        return ci_profile();
    }
    if (name == "ci-extended") {
        return ci_extended_profile();
    }
    throw ConfigError("unknown profile '" + name + "' (expected full, ci or ci-extended)");
}

std::uint64_t replication_seed(std::uint64_t master, std::size_t d, std::size_t replication)
{
    return derive_seed(master, {tag("replication"), d, replication});
}

std::uint64_t is_sample_seed(std::uint64_t rseed, double t)
{
    return derive_seed(rseed, {tag("is_sample"), double_bits(t)});
}

std::string run_id(std::size_t d, std::size_t replication)
{
    return "d" + std::to_string(d) + "-r" + std::to_string(replication);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks)
{
    config.validate();
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (auto d : config.dims) {
        for (std::size_t r = 0; r < config.replications; ++r) {
            jobs.emplace_back(d, r);
        }
    }
    std::vector<ReplicationOutput> outputs(jobs.size());
    std::mutex hook_mutex;
    std::mutex log_mutex;
    auto log = [&](const std::string& msg) {
        if (hooks.log) {
            std::lock_guard lock(log_mutex);
            hooks.log(msg);
        }
    };
    auto work = [&](std::size_t i) {
        const auto [d, r] = jobs[i];
        log("replication " + run_id(d, r) + " started");
        outputs[i] = run_replication(config, d, r, hooks, hook_mutex);
        const auto& rec = outputs[i].record;
        std::ostringstream os;
        os << "replication " << run_id(d, r) << (rec.ok ? " done" : " FAILED") << " in " << rec.seconds << " s";
        if (!rec.ok) {
            os << ": " << rec.error;
        }
        log(os.str());
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(config.jobs, jobs.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            work(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) {
                    work(i);
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    ExperimentResult result;
    for (auto& o : outputs) {
        if (!o.record.ok) {
            ++result.failures;
        }
        for (auto& row : o.rows) {
            result.rows.push_back(std::move(row));
        }
        result.replications.push_back(std::move(o.record));
    }
    return result;
}

double quantile(std::vector<double> values, double p)
{
    if (values.empty()) {
        throw UsageError("quantile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows,
                                  const std::function<void(const std::string&)>& warn)
{
    if (rows.empty()) {
        throw UsageError("summarize: no result rows");
    }
    using Key = std::tuple<std::size_t, int, double>;
    std::map<Key, std::vector<double>> groups;
    std::map<Key, double> truth;
    for (const auto& r : rows) {
        const Key k{r.d, static_cast<int>(r.method), r.temperature};
        auto& g = groups[k];
        truth[k] = r.true_log_c;
        if (std::isfinite(r.log_c)) {
            g.push_back(r.log_c);
        }
    }
    std::vector<SummaryRow> out;
    for (const auto& [k, values] : groups) {
        const auto& [d, m, t] = k;
        if (values.empty()) {
            if (warn) {
                warn("summarize: no finite estimates for " + evidence::to_string(static_cast<evidence::Method>(m)) +
                     " d=" + std::to_string(d) + " T=" + io::format_double(t) + "; group omitted");
            }
            continue;
        }
        SummaryRow s;
        s.method = static_cast<evidence::Method>(m);
        s.d = d;
        s.temperature = t;
        s.n = values.size();
        s.median = quantile(values, 0.5);
        s.q25 = quantile(values, 0.25);
        s.q75 = quantile(values, 0.75);
        s.iqr = s.q75 - s.q25;
        s.true_log_c = truth.at(k);
        s.bias = s.median - s.true_log_c;
        out.push_back(s);
    }
    return out;
}

const std::vector<std::string> kResultsHeader{"run_id", "d",      "replication", "method",     "temperature",
                                              "log_C",  "true_log_C", "ess",     "wallclock_s"};

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows)
{
    io::CsvTable t;
    t.header = kResultsHeader;
    for (const auto& r : rows) {
        t.rows.push_back({r.run_id, std::to_string(r.d), std::to_string(r.replication), evidence::to_string(r.method),
                          io::format_double(r.temperature), io::format_double(r.log_c),
                          io::format_double(r.true_log_c), io::format_double(r.ess),
                          io::format_double(r.wallclock_s)});
    }
    io::write_csv(path, t);
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path)
{
    const io::CsvTable t = io::read_csv(path);
    if (t.header != kResultsHeader) {
        throw FileError(path.string() + ": unexpected header");
    }
    std::vector<ResultRow> out;
    for (const auto& f : t.rows) {
        ResultRow r;
        r.run_id = f[0];
        r.d = std::stoul(f[1]);
        r.replication = std::stoul(f[2]);
        r.method = evidence::method_from_string(f[3]);
        r.temperature = io::parse_double(f[4]);
        r.log_c = io::parse_double(f[5]);
        r.true_log_c = io::parse_double(f[6]);
        r.ess = io::parse_double(f[7]);
        r.wallclock_s = io::parse_double(f[8]);
        out.push_back(std::move(r));
    }
    return out;
}

void write_estimates_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows)
{
    io::CsvTable t;
    t.header = {"run_id", "method", "d", "temperature", "seed", "log_C", "ess", "log_se", "log_ratios"};
    for (const auto& r : rows) {
        t.rows.push_back({r.run_id, evidence::to_string(r.method), std::to_string(r.d),
                          io::format_double(r.temperature), std::to_string(r.seed), io::format_double(r.log_c),
                          io::format_double(r.ess), io::format_double(r.log_se), join_doubles(r.log_ratios, ';')});
    }
    io::write_csv(path, t);
}

std::vector<ResultRow> read_estimates_csv(const std::filesystem::path& path)
{
    const io::CsvTable t = io::read_csv(path);
    std::vector<ResultRow> out;
    for (const auto& f : t.rows) {
        ResultRow r;
        r.run_id = f[t.column("run_id")];
        r.method = evidence::method_from_string(f[t.column("method")]);
        r.d = std::stoul(f[t.column("d")]);
        r.temperature = io::parse_double(f[t.column("temperature")]);
        r.seed = std::stoull(f[t.column("seed")]);
        r.log_c = io::parse_double(f[t.column("log_C")]);
        r.ess = io::parse_double(f[t.column("ess")]);
        r.log_se = io::parse_double(f[t.column("log_se")]);
        r.log_ratios = split_doubles(f[t.column("log_ratios")], ';');
        out.push_back(std::move(r));
    }
    return out;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows)
{
    io::CsvTable t;
    t.header = {"method", "d", "temperature", "n", "median", "q25", "q75", "iqr", "true_log_C", "bias"};
    for (const auto& s : rows) {
        t.rows.push_back({evidence::to_string(s.method), std::to_string(s.d), io::format_double(s.temperature),
                          std::to_string(s.n), io::format_double(s.median), io::format_double(s.q25),
                          io::format_double(s.q75), io::format_double(s.iqr), io::format_double(s.true_log_c),
                          io::format_double(s.bias)});
    }
    io::write_csv(path, t);
}

}  // namespace snle::bench
