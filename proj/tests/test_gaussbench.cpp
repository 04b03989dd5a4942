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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "snle/errors.hpp"
#include "snle/gaussbench.hpp"

using namespace snle;
using namespace snle::bench;
using snle::evidence::Method;

namespace {

ExperimentConfig tiny_config()
{
    ExperimentConfig c = ci_profile();
    c.dims = {1};
    c.replications = 1;
    c.methods = {Method::IS};
    c.is_temperatures = {1.0, 1.5};
    c.snle.rounds = 1;
    c.snle.sims_per_round = 100;
    c.snle.flow.transforms = 1;
    c.snle.flow.hidden = {8};
    c.snle.train.max_epochs = 10;
    c.snle.mcmc.burn_in = 10;
    c.is.proposal.transforms = 1;
    c.is.proposal.hidden = {8};
    c.is.train.max_epochs = 10;
    c.is.n_samples = 100;
    c.is_posterior_samples = 100;
    return c;
}

ResultRow synthetic_row(std::size_t d, Method m, double t, double log_c)
{
    ResultRow r;
    r.run_id = run_id(d, 0);
    r.d = d;
    r.method = m;
    r.temperature = t;
    r.log_c = log_c;
    r.true_log_c = true_log_evidence(d);
    return r;
}

}  // namespace

TEST_CASE("simulator: moments, dimension and determinism")
{
    const std::vector<double> theta{0.0, 0.0, 0.0};
    Rng rng(1);
    const std::size_t n = 50000;
    std::vector<std::vector<double>> cols(3, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = gaussian_simulate(theta, rng);
        REQUIRE(x.size() == 3);
        for (std::size_t j = 0; j < 3; ++j) {
            cols[j][i] = x[j];
        }
    }
    for (const auto& c : cols) {
        CHECK(std::abs(oracle::mean(c)) < 0.02);
        CHECK(std::abs(oracle::variance(c) - 1.0) < 0.03);
    }
    Rng a(7);
    Rng b(7);
    const std::vector<double> th{0.5, -1.0};
    CHECK(gaussian_simulate(th, a) == gaussian_simulate(th, b));

    const auto before = simulation_count();
    Rng c(3);
    gaussian_simulator(2).simulate(th, c);
    CHECK(simulation_count() == before + 1);
}

TEST_CASE("benchmark model pieces")
{
    const PriorBox p = gaussian_prior(3);
    CHECK(p.lower() == std::vector<double>(3, -2.0));
    CHECK(p.upper() == std::vector<double>(3, 2.0));
    CHECK(gaussian_observation(4) == std::vector<double>(4, 0.0));
    const std::vector<double> x{0.0};
    const std::vector<double> th{1.0};
    CHECK(gaussian_log_likelihood(x, th) == doctest::Approx(std::log(oracle::normal_pdf(0.0, 1.0))));
    CHECK_THROWS_AS(gaussian_log_likelihood(x, std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST_CASE("true log evidence: values, quadrature cross-check and linearity")
{
    CHECK(true_log_evidence(1) == doctest::Approx(-1.432861).epsilon(1e-5));
    CHECK(std::abs(true_log_evidence(1) - -1.432861) < 1e-5);
    CHECK(std::abs(true_log_evidence(5) - -7.164305) < 5e-5);
    CHECK(std::abs(true_log_evidence(1) - oracle::gaussian_log_evidence_1d()) < 1e-6);
    CHECK(std::erf(std::sqrt(2.0)) == doctest::Approx(0.9544997).epsilon(1e-7));
    for (std::size_t d = 1; d <= 20; ++d) {
        CHECK(true_log_evidence(d) == doctest::Approx(static_cast<double>(d) * true_log_evidence(1)).epsilon(1e-14));
        CHECK(true_log_evidence(d + 1) < true_log_evidence(d));
    }
    const double q2 = std::log(oracle::trapezoid2(
        [](double a, double b) { return oracle::normal_pdf(a) * oracle::normal_pdf(b) / 16.0; }, -2.0, 2.0, 2000));
    CHECK(std::abs(true_log_evidence(2) - q2) < 1e-5);
    CHECK_THROWS_AS(true_log_evidence(0), ConfigError);
}

TEST_CASE("profiles resolve and validate")
{
    const ExperimentConfig full = full_profile();
    CHECK(full.dims == std::vector<std::size_t>{1, 2, 5, 10});
    CHECK(full.replications == 25);
    CHECK(full.snle.rounds == 5);
    CHECK(full.snle.sims_per_round == 1000);
    CHECK(full.snle.flow.transforms == 5);
    CHECK(full.snle.flow.hidden == std::vector<std::size_t>{64, 64});
    CHECK(full.is.temperature == 1.25);
    CHECK(full.hm.temperature == 0.8);
    CHECK(full.is.n_samples == 1000);
    CHECK(full.hm_posterior_samples == 2000);
    CHECK(full.hm_learn == 1000);
    CHECK_NOTHROW(full.validate());

    const ExperimentConfig ci = ci_profile();
    CHECK(ci.dims == std::vector<std::size_t>{1, 2});
    CHECK(ci.replications == 5);
    CHECK(ci.snle.rounds == 3);
    CHECK(ci.snle.sims_per_round == 500);
    CHECK_NOTHROW(ci.validate());
    CHECK_NOTHROW(ci_extended_profile().validate());
    CHECK(profile_by_name("ci").profile == "ci");
    CHECK(profile_by_name("ci-extended").dims == std::vector<std::size_t>{5});
    CHECK_THROWS_AS(profile_by_name("huge"), ConfigError);
}

TEST_CASE("experiment config validation")
{
    auto bad = [](auto mutate) {
        ExperimentConfig c = ci_profile();
        mutate(c);
        return c;
    };
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.replications = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.dims = {}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.dims = {0}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.methods = {}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.is_temperatures = {0.9}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.hm_temperatures = {1.1}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.hm_temperatures = {0.0}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.hm_temperatures = {}; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.hm_learn = c.hm_posterior_samples; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.snle.rounds = 0; }).validate(), ConfigError);
    CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.is.train.patience = 0; }).validate(), ConfigError);
    // A method that is not requested does not need a grid.
    CHECK_NOTHROW(bad([](ExperimentConfig& c) {
                      c.methods = {Method::SIS};
                      c.is_temperatures = {};
                      c.hm_temperatures = {};
                  }).validate());
}

TEST_CASE("seeds and run ids")
{
    CHECK(run_id(5, 12) == "d5-r12");
    CHECK(replication_seed(1, 1, 0) == replication_seed(1, 1, 0));
    std::set<std::uint64_t> seen;
    for (std::size_t d : {1, 2, 5}) {
        for (std::size_t r = 0; r < 25; ++r) {
            seen.insert(replication_seed(2025, d, r));
        }
    }
    CHECK(seen.size() == 75);
    CHECK(is_sample_seed(9, 1.25) != is_sample_seed(9, 1.5));
}

TEST_CASE("quantiles use linear interpolation")
{
    CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
    CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
    CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.25) == doctest::Approx(1.75));
    CHECK(quantile({5.0}, 0.75) == 5.0);
    CHECK_THROWS_AS(quantile({}, 0.5), UsageError);
}

TEST_CASE("summarize: constant column, truth +/- eps and grouping")
{
    const double truth = true_log_evidence(1);
    std::vector<ResultRow> rows;
    for (int i = 0; i < 7; ++i) {
        rows.push_back(synthetic_row(1, Method::IS, 1.25, -1.2));
    }
    const double eps = 0.01;
    for (int i = 0; i < 5; ++i) {
        rows.push_back(synthetic_row(1, Method::HM, 0.8, truth - eps));
        rows.push_back(synthetic_row(1, Method::HM, 0.8, truth + eps));
    }
    rows.push_back(synthetic_row(2, Method::SIS, 1.0, -2.9));
    const auto s = summarize(rows);
    REQUIRE(s.size() == 3);
    // Sorted by (d, method, T).
    CHECK(s[0].method == Method::IS);
    CHECK(s[0].iqr == 0.0);
    CHECK(s[0].median == -1.2);
    CHECK(s[0].n == 7);
    CHECK(s[1].method == Method::HM);
    CHECK(s[1].bias == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(s[1].bias) < 1e-12);
    CHECK(s[1].iqr == doctest::Approx(2.0 * eps).epsilon(1e-12));
    CHECK(s[2].d == 2);
    CHECK(s[2].true_log_c == true_log_evidence(2));
    CHECK_THROWS_AS(summarize({}), UsageError);
}

TEST_CASE("summarize drops non-finite estimates and warns about empty groups")
{
    std::vector<ResultRow> rows{synthetic_row(1, Method::IS, 1.25, -1.4),
                                synthetic_row(1, Method::IS, 1.25, std::numeric_limits<double>::quiet_NaN()),
                                synthetic_row(1, Method::HM, 0.8, -std::numeric_limits<double>::infinity())};
    std::vector<std::string> warnings;
    const auto s = summarize(rows, [&](const std::string& w) { warnings.push_back(w); });
    REQUIRE(s.size() == 1);
    CHECK(s[0].n == 1);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("HM") != std::string::npos);
}

TEST_CASE("summarize: median of 25 normal draws around the truth")
{
    const double truth = true_log_evidence(1);
    const double sigma = 0.2;
    int inside = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Rng rng(seed);
        std::vector<ResultRow> rows;
        for (int i = 0; i < 25; ++i) {
            rows.push_back(synthetic_row(1, Method::IS, 1.25, truth + sigma * standard_normal(rng)));
        }
        const auto s = summarize(rows);
        inside += std::abs(s[0].bias) < 3.0 * sigma / 5.0;
    }
    // sd(median) ~ 1.25 sigma / 5, so 3 sigma / 5 is a 2.4-sd band (~98%).
    CHECK(inside >= 36);
}

TEST_CASE("results, estimates and summary CSV round-trip")
{
    const auto dir = std::filesystem::temp_directory_path() / "snle_bench_csv";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::vector<ResultRow> rows;
    ResultRow a = synthetic_row(1, Method::SIS, 1.0, -1.4321);
    a.ess = std::numeric_limits<double>::quiet_NaN();
    a.log_ratios = {-1.5, 0.05, 0.0171};
    a.seed = 123456789012345ULL;
    a.wallclock_s = 3.5;
    ResultRow b = synthetic_row(2, Method::HM, 0.8, -2.8);
    b.replication = 4;
    b.run_id = run_id(2, 4);
    b.ess = 512.25;
    b.seed = 42;
    b.log_se = 0.031;
    rows = {a, b};

    write_results_csv(dir / "results.csv", rows);
    std::ifstream in(dir / "results.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "run_id,d,replication,method,temperature,log_C,true_log_C,ess,wallclock_s");
    const auto back = read_results_csv(dir / "results.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].ess != back[0].ess);
    CHECK(back[1].ess == 512.25);
    CHECK(back[0].log_c == a.log_c);
    CHECK(back[1].run_id == "d2-r4");
    CHECK(back[1].method == Method::HM);
    CHECK(back[1].true_log_c == true_log_evidence(2));

    write_estimates_csv(dir / "estimates.csv", rows);
    const auto est = read_estimates_csv(dir / "estimates.csv");
    REQUIRE(est.size() == 2);
    CHECK(est[0].log_ratios == a.log_ratios);
    CHECK(est[0].seed == a.seed);
    CHECK(est[1].log_se == b.log_se);

    write_summary_csv(dir / "summary.csv", summarize(rows));
    std::ifstream sin(dir / "summary.csv");
    std::getline(sin, header);
    CHECK(header == "method,d,temperature,n,median,q25,q75,iqr,true_log_C,bias");

    std::ofstream(dir / "bad.csv") << "a,b,c\n";
    CHECK_THROWS_AS(read_results_csv(dir / "bad.csv"), FileError);
    CHECK_THROWS_AS(read_results_csv(dir / "missing.csv"), FileError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("run_experiment: one row per (d, T), truth column and determinism")
{
    const ExperimentConfig cfg = tiny_config();
    std::size_t hook_calls = 0;
    std::vector<std::string> log;
    ExperimentHooks hooks;
    hooks.on_replication = [&](const ReplicationArtifacts& art) {
        ++hook_calls;
        CHECK(art.rounds.completed() == 1);
        CHECK(art.is_proposal.has_value());
        CHECK(art.is_posterior.rows() == 100);
    };
    hooks.log = [&](const std::string& m) { log.push_back(m); };
    const ExperimentResult r = run_experiment(cfg, hooks);
    CHECK(r.failures == 0);
    CHECK(hook_calls == 1);
    CHECK(!log.empty());
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].temperature == 1.0);
    CHECK(r.rows[1].temperature == 1.5);
    for (const auto& row : r.rows) {
        CHECK(row.true_log_c == true_log_evidence(1));
        CHECK(std::abs(row.true_log_c - -1.432861) < 1e-5);
        CHECK(std::isfinite(row.log_c));
        CHECK(row.run_id == "d1-r0");
        CHECK(row.method == Method::IS);
    }
    const ExperimentResult again = run_experiment(cfg);
    REQUIRE(again.rows.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(again.rows[i].log_c == r.rows[i].log_c);
        CHECK(again.rows[i].ess == r.rows[i].ess);
        CHECK(again.rows[i].seed == r.rows[i].seed);
    }
}

TEST_CASE("run_experiment: all methods, several replications, parallel jobs agree with serial")
{
    ExperimentConfig cfg = tiny_config();
    cfg.dims = {1, 2};
    cfg.replications = 2;
    cfg.methods = {Method::HM, Method::IS, Method::SIS};
    cfg.snle.rounds = 2;
    cfg.is_temperatures = {1.25};
    cfg.hm_temperatures = {0.5, 1.0};
    cfg.hm.psi.transforms = 2;
    cfg.hm.psi.hidden = {8};
    cfg.hm.train.max_epochs = 10;
    cfg.hm_posterior_samples = 100;
    cfg.hm_learn = 50;
    const ExperimentResult serial = run_experiment(cfg);
    cfg.jobs = 3;
    const ExperimentResult parallel = run_experiment(cfg);
    CHECK(serial.failures == 0);
    // 2 dims x 2 replications x (2 HM + 1 IS + 1 SIS).
    REQUIRE(serial.rows.size() == 16);
    REQUIRE(parallel.rows.size() == 16);
    for (std::size_t i = 0; i < serial.rows.size(); ++i) {
        CHECK(serial.rows[i].run_id == parallel.rows[i].run_id);
        CHECK(serial.rows[i].log_c == parallel.rows[i].log_c);
    }
    CHECK(serial.rows[0].method == Method::HM);
    CHECK(serial.rows[3].method == Method::SIS);
    CHECK(serial.rows[3].ess != serial.rows[3].ess);
    CHECK(serial.rows[3].log_ratios.size() == 2);
    CHECK(serial.rows[4].run_id == "d1-r1");
    CHECK(serial.rows[8].d == 2);
}

TEST_CASE("run_experiment: a failing replication is recorded, not fatal")
{
    ExperimentConfig cfg = tiny_config();
    cfg.replications = 2;
    cfg.snle.train.learning_rate = 1e300;
    cfg.snle.train.batch_size = 10;
    const ExperimentResult r = run_experiment(cfg);
    CHECK(r.failures == 2);
    CHECK(r.rows.empty());
    REQUIRE(r.replications.size() == 2);
    CHECK_FALSE(r.replications[0].ok);
    CHECK(!r.replications[0].error.empty());

    ExperimentConfig invalid = tiny_config();
    invalid.replications = 0;
    CHECK_THROWS_AS(run_experiment(invalid), ConfigError);
}
