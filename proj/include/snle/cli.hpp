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

// Subcommand implementations behind the snle_evidence tool.
//
// Configuration files are INI: `[section]` headers followed by `key = value`
// lines, with `;` or `#` comments. A setting is addressed as section.key both
// in files and in --set overrides, e.g. `snle.rounds = 5` under [snle] is the
// same as `--set snle.rounds=5`. Lists are comma separated.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "snle/gaussbench.hpp"

namespace snle::cli {

/// Process exit codes.
enum ExitCode : int { kSuccess = 0, kFailure = 1, kPartialFailure = 2 };

/// Environment variable that overrides the master seed.
inline constexpr const char* kSeedEnv = "SNLE_SEED";

struct RunConfig {
    bench::ExperimentConfig experiment;
    std::filesystem::path out = "snle_run";
    std::string profile = "full";
    std::size_t jobs = 1;
};

/// Every key accepted by apply_setting, in display order.
const std::vector<std::string>& known_keys();

/// Sets one section.key value. Unknown keys and malformed values throw ConfigError naming the key.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Splits "key=value"; throws ConfigError without '='.
std::pair<std::string, std::string> split_override(const std::string& text);

struct RunOptions {
    std::optional<std::filesystem::path> config_file;
    std::optional<std::string> profile;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::vector<std::string> overrides;
    /// Value of kSeedEnv, if set.
    std::optional<std::string> seed_env;
};

/// Resolves a run configuration. Precedence, lowest first: profile defaults,
/// config file, --set overrides, the seed environment variable, then the
/// dedicated flags. The profile itself comes from --profile, else run.profile.
RunConfig resolve_run_config(const RunOptions& options);

nlohmann::json experiment_to_json(const bench::ExperimentConfig& c);
bench::ExperimentConfig experiment_from_json(const nlohmann::json& j);

/// Layout of a run directory.
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path results() const { return root / "results.csv"; }
    std::filesystem::path estimates() const { return root / "estimates.csv"; }
    std::filesystem::path manifest() const { return root / "manifest.json"; }
    std::filesystem::path summary() const { return root / "summary.csv"; }
    std::filesystem::path replication(const std::string& run_id) const { return root / "artifacts" / run_id; }
    std::filesystem::path boxplot(std::size_t d) const { return root / ("boxplot_d" + std::to_string(d) + ".svg"); }
};

/// Runs the experiment and writes results.csv, estimates.csv, manifest.json
/// and one artifact directory per successful replication.
int cmd_run(const RunConfig& config, std::ostream& log);

struct EstimateRequest {
    std::filesystem::path dir;
    evidence::Method method = evidence::Method::IS;
    double temperature = 1.0;
    /// Restrict to one replication ("d1-r0"); all stored replications otherwise.
    std::optional<std::string> run_id;
    /// Base seed for the IS proposal draws; the replication seed otherwise.
    std::optional<std::uint64_t> seed;
};

/// Recomputes an estimate from stored artifacts and appends it. A request
/// whose (run_id, method, T, seed) already exists is skipped with a warning.
/// Returns the number of rows appended.
std::size_t cmd_estimate(const EstimateRequest& request, std::ostream& log);

/// Writes summary.csv plus one SVG box plot per dimension. Nothing is written
/// unless every output could be produced.
void cmd_report(const std::filesystem::path& dir, std::ostream& log);

/// Box plot of log C estimates per (method, T) with jittered points and a
/// dashed horizontal line at the true value.
std::string render_boxplot_svg(std::size_t d, const std::vector<bench::ResultRow>& rows, double true_log_c);

}  // namespace snle::cli
