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

// snle_evidence: run the Gaussian evidence benchmark, add estimates to an
// existing run, and render reports.
//
//   snle_evidence run --profile ci --out runs/ci
//   snle_evidence estimate runs/ci --method IS --temperature 2
//   snle_evidence report runs/ci

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "snle/cli.hpp"
#include "snle/errors.hpp"

int main(int argc, char** argv)
{
    using namespace snle;

    CLI::App app{"Marginal-likelihood estimation on top of sequential neural likelihood estimation"};
    app.require_subcommand(1);

    cli::RunOptions run_opts;
    std::string config_file;
    std::string profile;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    bool list_keys = false;
    auto* run = app.add_subcommand("run", "Run SNLE and every requested estimator");
    run->add_option("--config", config_file, "INI configuration file")->check(CLI::ExistingFile);
    run->add_option("--profile", profile, "Base profile: full, ci or ci-extended");
    run->add_option("--out", out, "Run directory");
    auto* seed_opt = run->add_option("--seed", seed, "Master seed (overrides SNLE_SEED and the config)");
    auto* jobs_opt = run->add_option("--jobs", jobs, "Replications run in parallel");
    run->add_option("--set", run_opts.overrides, "Override a setting, section.key=value")->take_all();
    run->add_flag("--list-keys", list_keys, "Print the accepted configuration keys and exit");

    cli::EstimateRequest est;
    std::string method;
    std::string run_id;
    std::uint64_t est_seed = 0;
    auto* estimate = app.add_subcommand("estimate", "Recompute an estimate from a stored run");
    estimate->add_option("dir", est.dir, "Run directory")->required();
    estimate->add_option("--method", method, "HM, IS or SIS")->required();
    estimate->add_option("--temperature,-T", est.temperature, "Flow temperature (IS: T >= 1, HM: 0 < T <= 1)");
    auto* run_id_opt = estimate->add_option("--run-id", run_id, "Only this replication, e.g. d1-r0");
    auto* est_seed_opt = estimate->add_option("--seed", est_seed, "Base seed for the IS proposal draws");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Write summary.csv and per-dimension SVG box plots");
    report->add_option("dir", report_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cli::kSuccess : cli::kFailure;
    }

    try {
        if (*run) {
            if (list_keys) {
                for (const auto& k : cli::known_keys()) {
                    std::cout << k << "\n";
                }
                return cli::kSuccess;
            }
            if (!config_file.empty()) {
                run_opts.config_file = config_file;
            }
            if (!profile.empty()) {
                run_opts.profile = profile;
            }
            if (!out.empty()) {
                run_opts.out = out;
            }
            if (seed_opt->count() > 0) {
                run_opts.seed = seed;
            }
            if (jobs_opt->count() > 0) {
                run_opts.jobs = jobs;
            }
            if (const char* env = std::getenv(cli::kSeedEnv)) {
                run_opts.seed_env = env;
            }
            const cli::RunConfig rc = cli::resolve_run_config(run_opts);
            return cli::cmd_run(rc, std::cerr);
        }
        if (*estimate) {
            est.method = evidence::method_from_string(method);
            if (run_id_opt->count() > 0) {
                est.run_id = run_id;
            }
            if (est_seed_opt->count() > 0) {
                est.seed = est_seed;
            }
            const std::size_t n = cli::cmd_estimate(est, std::cerr);
            std::cerr << "appended " << n << " row(s)\n";
            return cli::kSuccess;
        }
        cli::cmd_report(report_dir, std::cerr);
        return cli::kSuccess;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::kFailure;
    }
}
