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

#include "snle/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "snle/errors.hpp"
#include "snle/io.hpp"

namespace snle::cli {

namespace fs = std::filesystem;
using evidence::Method;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected)
{
    throw ConfigError("invalid value '" + value + "' for key '" + key + "' (expected " + expected + ")");
}

std::uint64_t parse_u64(const std::string& key, const std::string& raw)
{
    const std::string v = trim(raw);
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto res = std::from_chars(v.data(), end, out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != end) {
        bad_value(key, raw, "a non-negative integer");
    }
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& raw)
{
    return static_cast<std::size_t>(parse_u64(key, raw));
}

double parse_real(const std::string& key, const std::string& raw)
{
    const std::string v = trim(raw);
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto res = std::from_chars(v.data(), end, out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != end || !std::isfinite(out)) {
        bad_value(key, raw, "a finite number");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& raw)
{
    std::string v = trim(raw);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    bad_value(key, raw, "true or false");
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& raw)
{
    std::vector<std::size_t> out;
    for (const auto& item : split_list(raw)) {
        out.push_back(parse_size(key, item));
    }
    if (out.empty()) {
        bad_value(key, raw, "a comma-separated list of integers");
    }
    return out;
}

std::vector<double> parse_reals(const std::string& key, const std::string& raw)
{
    std::vector<double> out;
    for (const auto& item : split_list(raw)) {
        out.push_back(parse_real(key, item));
    }
    if (out.empty()) {
        bad_value(key, raw, "a comma-separated list of numbers");
    }
    return out;
}

std::vector<Method> parse_methods(const std::string& key, const std::string& raw)
{
    std::vector<Method> out;
    for (const auto& item : split_list(raw)) {
        try {
            out.push_back(evidence::method_from_string(item));
        } catch (const Error&) {
            bad_value(key, raw, "a list drawn from HM, IS, SIS");
        }
    }
    if (out.empty()) {
        bad_value(key, raw, "a list drawn from HM, IS, SIS");
    }
    return out;
}

flows::Architecture parse_arch(const std::string& key, const std::string& raw)
{
    try {
        return flows::architecture_from_string(trim(raw));
    } catch (const Error&) {
        bad_value(key, raw, "MAF or RealNVP");
    }
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

void add_train_keys(std::vector<std::pair<std::string, Setter>>& reg, const std::string& section,
                    std::function<train::TrainConfig&(RunConfig&)> pick)
{
    reg.emplace_back(section + ".learning_rate", [pick](RunConfig& c, const std::string& k, const std::string& v) {
        pick(c).learning_rate = parse_real(k, v);
    });
    reg.emplace_back(section + ".batch_size", [pick](RunConfig& c, const std::string& k, const std::string& v) {
        pick(c).batch_size = parse_size(k, v);
    });
    reg.emplace_back(section + ".max_epochs", [pick](RunConfig& c, const std::string& k, const std::string& v) {
        pick(c).max_epochs = parse_size(k, v);
    });
    reg.emplace_back(section + ".patience", [pick](RunConfig& c, const std::string& k, const std::string& v) {
        pick(c).patience = parse_size(k, v);
    });
    reg.emplace_back(section + ".validation_fraction",
                     [pick](RunConfig& c, const std::string& k, const std::string& v) {
                         pick(c).validation_fraction = parse_real(k, v);
                     });
}

void add_flow_keys(std::vector<std::pair<std::string, Setter>>& reg, const std::string& section,
                   std::function<flows::FlowConfig&(RunConfig&)> pick)
{
    reg.emplace_back(section + ".architecture", [pick](RunConfig& c, const std::string& k, const std::string& v) {
        pick(c).architecture = parse_arch(k, v);
    });
    reg.emplace_back(section + ".transforms", [pick](RunConfig& c, const std::string& k, const std::string& v) {
        pick(c).transforms = parse_size(k, v);
    });
    reg.emplace_back(section + ".hidden", [pick](RunConfig& c, const std::string& k, const std::string& v) {
        pick(c).hidden = parse_sizes(k, v);
    });
}

const std::vector<std::pair<std::string, Setter>>& registry()
{
    static const auto reg = [] {
        std::vector<std::pair<std::string, Setter>> r;
        r.emplace_back("run.profile", [](RunConfig& c, const std::string&, const std::string& v) {
            c.profile = trim(v);
        });
        r.emplace_back("run.out", [](RunConfig& c, const std::string&, const std::string& v) { c.out = trim(v); });
        r.emplace_back("run.jobs", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.jobs = parse_size(k, v);
        });

        r.emplace_back("experiment.dims", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.dims = parse_sizes(k, v);
        });
        r.emplace_back("experiment.methods", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.methods = parse_methods(k, v);
        });
        r.emplace_back("experiment.replications", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.replications = parse_size(k, v);
        });
        r.emplace_back("experiment.seed", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.seed = parse_u64(k, v);
        });
        r.emplace_back("experiment.is_posterior_samples",
                       [](RunConfig& c, const std::string& k, const std::string& v) {
                           c.experiment.is_posterior_samples = parse_size(k, v);
                       });
        r.emplace_back("experiment.hm_posterior_samples",
                       [](RunConfig& c, const std::string& k, const std::string& v) {
                           c.experiment.hm_posterior_samples = parse_size(k, v);
                       });
        r.emplace_back("experiment.hm_learn", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.hm_learn = parse_size(k, v);
        });
        r.emplace_back("experiment.sis_fresh_draws", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.sis_fresh_draws = parse_bool(k, v);
        });

        r.emplace_back("snle.rounds", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.rounds = parse_size(k, v);
        });
        r.emplace_back("snle.sims_per_round", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.sims_per_round = parse_size(k, v);
        });
        r.emplace_back("snle.warm_start", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.warm_start = parse_bool(k, v);
        });
        add_flow_keys(r, "snle", [](RunConfig& c) -> flows::FlowConfig& { return c.experiment.snle.flow; });
        add_train_keys(r, "train", [](RunConfig& c) -> train::TrainConfig& { return c.experiment.snle.train; });

        r.emplace_back("mcmc.n_chains", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.mcmc.n_chains = parse_size(k, v);
        });
        r.emplace_back("mcmc.burn_in", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.mcmc.burn_in = parse_size(k, v);
        });
        r.emplace_back("mcmc.thin", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.mcmc.thin = parse_size(k, v);
        });
        r.emplace_back("mcmc.max_doublings", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.mcmc.max_doublings = parse_size(k, v);
        });
        r.emplace_back("mcmc.threads", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.snle.mcmc.threads = parse_size(k, v);
        });

        r.emplace_back("is.temperatures", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.is_temperatures = parse_reals(k, v);
        });
        r.emplace_back("is.n_samples", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.is.n_samples = parse_size(k, v);
        });
        add_flow_keys(r, "is", [](RunConfig& c) -> flows::FlowConfig& { return c.experiment.is.proposal; });
        add_train_keys(r, "is", [](RunConfig& c) -> train::TrainConfig& { return c.experiment.is.train; });

        r.emplace_back("hm.temperatures", [](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.hm_temperatures = parse_reals(k, v);
        });
        add_flow_keys(r, "hm", [](RunConfig& c) -> flows::FlowConfig& { return c.experiment.hm.psi; });
        add_train_keys(r, "hm", [](RunConfig& c) -> train::TrainConfig& { return c.experiment.hm.train; });
        return r;
    }();
    return reg;
}

// Line of `section.key` in an INI file, 0 if not found.
std::size_t find_key_line(const fs::path& file, const std::string& dotted)
{
    const auto dot = dotted.find('.');
    const std::string section = dot == std::string::npos ? "" : dotted.substr(0, dot);
    const std::string key = dot == std::string::npos ? dotted : dotted.substr(dot + 1);
    std::ifstream in(file);
    std::string line;
    std::string current;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        const std::string t = trim(line);
        if (t.size() >= 2 && t.front() == '[' && t.back() == ']') {
            current = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq != std::string::npos && current == section && trim(t.substr(0, eq)) == key) {
            return n;
        }
    }
    return 0;
}

struct FileEntry {
    std::string key;
    std::string value;
};

std::vector<FileEntry> read_ini(const fs::path& file)
{
    if (!fs::exists(file)) {
        throw FileError("config file not found: " + file.string());
    }
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(file.string(), tree);
    } catch (const boost::property_tree::ini_parser::ini_parser_error& e) {
        throw ConfigError(file.string() + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    std::vector<FileEntry> out;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            throw ConfigError(file.string() + ":" + std::to_string(find_key_line(file, section)) + ": key '" +
                              section + "' must appear inside a [section]");
        }
        for (const auto& [key, value] : body) {
            out.push_back({section + "." + key, value.get_value<std::string>()});
        }
    }
    return out;
}

void write_atomic(const fs::path& path, const std::string& text)
{
    const fs::path tmp = path.string() + ".tmp";
    io::write_text(tmp, text);
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_matrix_csv(const fs::path& path, const Matrix& m)
{
    io::CsvTable t;
    for (std::size_t k = 0; k < m.cols(); ++k) {
        t.header.push_back("theta_" + std::to_string(k));
    }
    for (std::size_t i = 0; i < m.rows(); ++i) {
        std::vector<std::string> row;
        for (double v : m.row_span(i)) {
            row.push_back(io::format_double(v));
        }
        t.rows.push_back(std::move(row));
    }
    io::write_csv(path, t);
}

Matrix read_matrix_csv(const fs::path& path)
{
    const io::CsvTable t = io::read_csv(path);
    Matrix m(t.rows.size(), t.header.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t k = 0; k < t.header.size(); ++k) {
            m(i, k) = io::parse_double(t.rows[i][k]);
        }
    }
    return m;
}

nlohmann::json is_config_to_json(const evidence::IsConfig& c)
{
    return {{"proposal", io::to_json(c.proposal)},
            {"train", io::to_json(c.train)},
            {"temperature", c.temperature},
            {"n_samples", c.n_samples}};
}

nlohmann::json hm_config_to_json(const evidence::HmConfig& c)
{
    return {{"psi", io::to_json(c.psi)}, {"train", io::to_json(c.train)}, {"temperature", c.temperature}};
}

void write_replication(const RunLayout& layout, const bench::ReplicationArtifacts& a)
{
    const std::string id = bench::run_id(a.d, a.replication);
    const fs::path dir = layout.replication(id);
    fs::create_directories(dir);
    save_rounds(a.rounds, dir / "snle");
    if (a.is_posterior.rows() > 0) {
        write_matrix_csv(dir / "is_posterior.csv", a.is_posterior);
    }
    if (a.hm_posterior.rows() > 0) {
        write_matrix_csv(dir / "hm_posterior.csv", a.hm_posterior);
    }
    if (a.is_proposal) {
        a.is_proposal->save(dir / "is_proposal.json");
    }
    if (a.hm_psi) {
        a.hm_psi->save(dir / "hm_psi.json");
    }
    io::write_json(dir / "replication.json",
                   {{"run_id", id}, {"d", a.d}, {"replication", a.replication}, {"seed", a.seed}});
}

void require_files(const std::string& id, const std::vector<fs::path>& files)
{
    std::vector<std::string> missing;
    for (const auto& f : files) {
        if (!fs::exists(f)) {
            missing.push_back(f.string());
        }
    }
    if (!missing.empty()) {
        std::string msg = "missing stored artifacts for " + id + ":";
        for (const auto& m : missing) {
            msg += " " + m;
        }
        throw FileError(msg);
    }
}

std::string fmt_fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

const std::vector<std::string>& known_keys()
{
    static const auto keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, setter] : registry()) {
            k.push_back(name);
        }
        return k;
    }();
    return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value)
{
    const std::string k = trim(key);
    for (const auto& [name, setter] : registry()) {
        if (name == k) {
            setter(config, k, value);
            return;
        }
    }
    throw ConfigError("unknown configuration key '" + k + "'");
}

std::pair<std::string, std::string> split_override(const std::string& text)
{
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + text + "' is not of the form section.key=value");
    }
    return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

RunConfig resolve_run_config(const RunOptions& options)
{
    std::vector<FileEntry> file_entries;
    if (options.config_file) {
        file_entries = read_ini(*options.config_file);
    }
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& o : options.overrides) {
        overrides.push_back(split_override(o));
    }

    std::string profile = "full";
    for (const auto& e : file_entries) {
        if (e.key == "run.profile") {
            profile = trim(e.value);
        }
    }
    for (const auto& [k, v] : overrides) {
        if (k == "run.profile") {
            profile = v;
        }
    }
    if (options.profile) {
        profile = *options.profile;
    }

    RunConfig rc;
    rc.experiment = bench::profile_by_name(profile);
    for (const auto& e : file_entries) {
        try {
            apply_setting(rc, e.key, e.value);
        } catch (const ConfigError& err) {
            throw ConfigError(options.config_file->string() + ":" +
                              std::to_string(find_key_line(*options.config_file, e.key)) + ": " + err.what());
        }
    }
    for (const auto& [k, v] : overrides) {
        apply_setting(rc, k, v);
    }
    rc.profile = profile;
    if (options.seed_env && !options.seed_env->empty()) {
        rc.experiment.seed = parse_u64(kSeedEnv, *options.seed_env);
    }
    if (options.out) {
        rc.out = *options.out;
    }
    if (options.seed) {
        rc.experiment.seed = *options.seed;
    }
    if (options.jobs) {
        rc.jobs = *options.jobs;
    }
    if (rc.jobs == 0) {
        throw ConfigError("invalid value '0' for key 'run.jobs' (expected a positive integer)");
    }
    rc.experiment.profile = profile;
    rc.experiment.jobs = rc.jobs;
    rc.experiment.validate();
    return rc;
}

nlohmann::json experiment_to_json(const bench::ExperimentConfig& c)
{
    std::vector<std::string> methods;
    for (Method m : c.methods) {
        methods.push_back(evidence::to_string(m));
    }
    return {{"profile", c.profile},
            {"dims", c.dims},
            {"methods", methods},
            {"is_temperatures", c.is_temperatures},
            {"hm_temperatures", c.hm_temperatures},
            {"replications", c.replications},
            {"snle", io::to_json(c.snle)},
            {"is", is_config_to_json(c.is)},
            {"hm", hm_config_to_json(c.hm)},
            {"is_posterior_samples", c.is_posterior_samples},
            {"hm_posterior_samples", c.hm_posterior_samples},
            {"hm_learn", c.hm_learn},
            {"sis_fresh_draws", c.sis_fresh_draws},
            {"seed", c.seed},
            {"jobs", c.jobs}};
}

bench::ExperimentConfig experiment_from_json(const nlohmann::json& j)
{
    bench::ExperimentConfig c;
    c.profile = j.at("profile").get<std::string>();
    c.dims = j.at("dims").get<std::vector<std::size_t>>();
    c.methods.clear();
    for (const auto& m : j.at("methods")) {
        c.methods.push_back(evidence::method_from_string(m.get<std::string>()));
    }
    c.is_temperatures = j.at("is_temperatures").get<std::vector<double>>();
    c.hm_temperatures = j.at("hm_temperatures").get<std::vector<double>>();
    c.replications = j.at("replications").get<std::size_t>();
    c.snle = io::snle_config_from_json(j.at("snle"));
    const auto& is = j.at("is");
    c.is.proposal = io::flow_config_from_json(is.at("proposal"));
    c.is.train = io::train_config_from_json(is.at("train"));
    c.is.temperature = is.at("temperature").get<double>();
    c.is.n_samples = is.at("n_samples").get<std::size_t>();
    const auto& hm = j.at("hm");
    c.hm.psi = io::flow_config_from_json(hm.at("psi"));
    c.hm.train = io::train_config_from_json(hm.at("train"));
    c.hm.temperature = hm.at("temperature").get<double>();
    c.is_posterior_samples = j.at("is_posterior_samples").get<std::size_t>();
    c.hm_posterior_samples = j.at("hm_posterior_samples").get<std::size_t>();
    c.hm_learn = j.at("hm_learn").get<std::size_t>();
    c.sis_fresh_draws = j.at("sis_fresh_draws").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.jobs = j.at("jobs").get<std::size_t>();
    return c;
}

int cmd_run(const RunConfig& config, std::ostream& log)
{
    const RunLayout layout{config.out};
    fs::create_directories(layout.root);
    fs::remove_all(layout.root / "artifacts");

    std::mutex writer;
    std::vector<std::string> write_errors;
    bench::ExperimentHooks hooks;
    hooks.log = [&](const std::string& msg) {
        std::lock_guard lock(writer);
        log << msg << "\n" << std::flush;
    };
    hooks.on_replication = [&](const bench::ReplicationArtifacts& a) {
        std::lock_guard lock(writer);
        try {
            write_replication(layout, a);
        } catch (const std::exception& e) {
            write_errors.push_back(bench::run_id(a.d, a.replication) + ": " + e.what());
        }
    };

    const auto t0 = std::chrono::steady_clock::now();
    const bench::ExperimentResult result = bench::run_experiment(config.experiment, hooks);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bench::write_results_csv(layout.results(), result.rows);
    bench::write_estimates_csv(layout.estimates(), result.rows);

    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : result.replications) {
        reps.push_back({{"run_id", bench::run_id(r.d, r.replication)},
                        {"d", r.d},
                        {"replication", r.replication},
                        {"seed", r.seed},
                        {"ok", r.ok},
                        {"error", r.error},
                        {"seconds", r.seconds}});
    }
    nlohmann::json manifest{{"format", "snle-evidence-run"},
                            {"version", 1},
                            {"tool_version", kToolVersion},
                            {"compiler", __VERSION__},
                            {"cxx_standard", __cplusplus},
                            {"profile", config.profile},
                            {"master_seed", config.experiment.seed},
                            {"config", experiment_to_json(config.experiment)},
                            {"replications", reps},
                            {"failure_count", result.failures},
                            {"artifact_write_errors", write_errors},
                            {"rows", result.rows.size()},
                            {"wallclock_s", seconds}};
    io::write_json(layout.manifest(), manifest);

    log << "wrote " << result.rows.size() << " rows to " << layout.results().string() << "\n";
    for (const auto& e : write_errors) {
        log << "warning: could not store artifacts for " << e << "\n";
    }
    if (result.failures == 0) {
        return kSuccess;
    }
    log << result.failures << " of " << result.replications.size() << " replications failed\n";
    return result.failures == result.replications.size() ? kFailure : kPartialFailure;
}

std::size_t cmd_estimate(const EstimateRequest& request, std::ostream& log)
{
    const RunLayout layout{request.dir};
    require_files("run " + layout.root.string(), {layout.manifest(), layout.results(), layout.estimates()});
    const nlohmann::json manifest = io::read_json(layout.manifest());
    const bench::ExperimentConfig cfg = experiment_from_json(manifest.at("config"));

    if (request.method == Method::SIS && request.temperature != 1.0) {
        throw UsageError("SIS takes no temperature; use T=1");
    }

    std::vector<bench::ResultRow> results = bench::read_results_csv(layout.results());
    std::vector<bench::ResultRow> estimates = bench::read_estimates_csv(layout.estimates());

    std::vector<nlohmann::json> targets;
    for (const auto& r : manifest.at("replications")) {
        if (!r.at("ok").get<bool>()) {
            continue;
        }
        if (request.run_id && r.at("run_id").get<std::string>() != *request.run_id) {
            continue;
        }
        targets.push_back(r);
    }
    if (targets.empty()) {
        throw UsageError(request.run_id ? "no successful replication named " + *request.run_id
                                        : "run holds no successful replications");
    }

    std::size_t appended = 0;
    for (const auto& rep : targets) {
        const std::string id = rep.at("run_id").get<std::string>();
        const std::size_t d = rep.at("d").get<std::size_t>();
        const std::size_t replication = rep.at("replication").get<std::size_t>();
        const std::uint64_t rseed = rep.at("seed").get<std::uint64_t>();
        const fs::path dir = layout.replication(id);

        std::vector<fs::path> needed{dir / "snle" / "snle.json", dir / "snle" / "draws.csv"};
        if (request.method == Method::IS) {
            needed.push_back(dir / "is_proposal.json");
        } else if (request.method == Method::HM) {
            needed.push_back(dir / "hm_psi.json");
            needed.push_back(dir / "hm_posterior.csv");
        }
        require_files(id, needed);

        std::uint64_t seed = 0;
        if (request.method == Method::IS) {
            seed = bench::is_sample_seed(request.seed.value_or(rseed), request.temperature);
        } else if (request.method == Method::HM) {
            seed = derive_seed(rseed, {tag("hm")});
        } else {
            seed = request.seed ? derive_seed(*request.seed, {tag("sis")}) : derive_seed(rseed, {tag("sis")});
        }
        const bool duplicate = std::any_of(estimates.begin(), estimates.end(), [&](const bench::ResultRow& e) {
            return e.run_id == id && e.method == request.method && e.temperature == request.temperature &&
                   e.seed == seed;
        });
        if (duplicate) {
            log << "warning: " << id << " already has " << evidence::to_string(request.method)
                << " at T=" << io::format_double(request.temperature) << " with seed " << seed << "; skipped\n";
            continue;
        }

        const auto t0 = std::chrono::steady_clock::now();
        const SnleRounds rounds = load_rounds(dir / "snle");
        const auto log_lik = evidence::surrogate_likelihood(rounds.flow(rounds.completed()), rounds.x_star);
        evidence::EvidenceEstimate est;
        if (request.method == Method::IS) {
            const auto h = flows::Flow::load(dir / "is_proposal.json");
            est = evidence::is_estimate_tempered(log_lik, rounds.prior, h, request.temperature, cfg.is.n_samples,
                                                 seed);
        } else if (request.method == Method::HM) {
            const auto psi = flows::Flow::load(dir / "hm_psi.json");
            const Matrix post = read_matrix_csv(dir / "hm_posterior.csv");
            const auto split = evidence::HmSplit::make(post.rows(), cfg.hm_learn);
            est = evidence::hm_estimate_tempered(log_lik, rounds.prior, split.evaluating_set(post), psi,
                                                 request.temperature);
            est.seed = seed;
        } else {
            evidence::SisOptions opts;
            opts.fresh_draws = cfg.sis_fresh_draws;
            opts.mcmc = cfg.snle.mcmc;
            opts.seed = seed;
            est = evidence::sis_estimate(rounds, opts);
        }

        bench::ResultRow row;
        row.run_id = id;
        row.d = d;
        row.replication = replication;
        row.method = est.method;
        row.temperature = request.temperature;
        row.log_c = est.log_c;
        row.true_log_c = bench::true_log_evidence(d);
        row.ess = est.method == Method::SIS ? std::numeric_limits<double>::quiet_NaN() : est.ess;
        row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        row.seed = seed;
        row.log_se = est.log_se;
        row.log_ratios = est.log_ratios;
        results.push_back(row);
        estimates.push_back(row);
        ++appended;
        log << id << " " << evidence::to_string(row.method) << " T=" << io::format_double(row.temperature)
            << " log_C=" << io::format_double(row.log_c) << "\n";
    }

    if (appended > 0) {
        const fs::path res_tmp = layout.results().string() + ".tmp";
        const fs::path est_tmp = layout.estimates().string() + ".tmp";
        bench::write_results_csv(res_tmp, results);
        bench::write_estimates_csv(est_tmp, estimates);
        fs::rename(res_tmp, layout.results());
        fs::rename(est_tmp, layout.estimates());
    }
    return appended;
}

std::string render_boxplot_svg(std::size_t d, const std::vector<bench::ResultRow>& rows, double true_log_c)
{
    struct Group {
        Method method;
        double temperature;
        std::vector<double> values;
    };
    std::map<std::pair<int, double>, Group> groups;
    for (const auto& r : rows) {
        if (r.d != d || !std::isfinite(r.log_c)) {
            continue;
        }
        auto& g = groups[{static_cast<int>(r.method), r.temperature}];
        g.method = r.method;
        g.temperature = r.temperature;
        g.values.push_back(r.log_c);
    }

    double lo = true_log_c;
    double hi = true_log_c;
    for (const auto& [k, g] : groups) {
        for (double v : g.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double span = std::max(hi - lo, 0.1);
    lo -= 0.08 * span;
    hi += 0.08 * span;

    const double width = std::max(480.0, 110.0 * static_cast<double>(groups.size()) + 120.0);
    const double height = 420.0;
    const double left = 80.0;
    const double right = 20.0;
    const double top = 40.0;
    const double bottom = 60.0;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    auto ypix = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };

    std::ostringstream s;
    const std::string truth = fmt_fixed(true_log_c, 6);
    const std::string truth_exact = io::format_double(true_log_c);
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<metadata id=\"truth\" data-d=\"" << d << "\" data-true-log-c=\"" << truth_exact << "\">d=" << d
      << " true_log_C=" << truth << "</metadata>\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">log C estimates, d = " << d
      << "</text>\n";

    s << "<g class=\"axis\" stroke=\"black\">\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h << "\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\"/>\n";
    s << "</g>\n";
    for (int t = 0; t <= 5; ++t) {
        const double v = lo + (hi - lo) * t / 5.0;
        const double y = ypix(v);
        s << "<line x1=\"" << left - 5 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\"" << y
          << "\" stroke=\"black\"/>";
        s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt_fixed(v, 2)
          << "</text>\n";
    }
    s << "<text transform=\"translate(18," << top + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">log C</text>\n";

    const double slot = groups.empty() ? plot_w : plot_w / static_cast<double>(groups.size());
    std::size_t i = 0;
    for (const auto& [k, g] : groups) {
        const double cx = left + slot * (static_cast<double>(i) + 0.5);
        const double bw = std::min(60.0, slot * 0.5);
        const double q1 = bench::quantile(g.values, 0.25);
        const double med = bench::quantile(g.values, 0.5);
        const double q3 = bench::quantile(g.values, 0.75);
        const double iqr = q3 - q1;
        double wlo = med;
        double whi = med;
        for (double v : g.values) {
            if (v >= q1 - 1.5 * iqr) {
                wlo = std::min(wlo, v);
            }
            if (v <= q3 + 1.5 * iqr) {
                whi = std::max(whi, v);
            }
        }
        const std::string colour = g.method == Method::HM ? "#1f77b4" : g.method == Method::IS ? "#d62728" : "#2ca02c";
        const std::string label =
            evidence::to_string(g.method) + (g.method == Method::SIS ? "" : " T=" + io::format_double(g.temperature));
        s << "<g class=\"box\" data-method=\"" << evidence::to_string(g.method) << "\" data-temperature=\""
          << io::format_double(g.temperature) << "\" data-n=\"" << g.values.size() << "\">\n";
        s << "<line x1=\"" << cx << "\" y1=\"" << ypix(whi) << "\" x2=\"" << cx << "\" y2=\"" << ypix(wlo)
          << "\" stroke=\"" << colour << "\"/>\n";
        s << "<rect x=\"" << cx - bw / 2 << "\" y=\"" << ypix(q3) << "\" width=\"" << bw << "\" height=\""
          << std::max(ypix(q1) - ypix(q3), 0.5) << "\" fill=\"" << colour << "\" fill-opacity=\"0.25\" stroke=\""
          << colour << "\"/>\n";
        s << "<line x1=\"" << cx - bw / 2 << "\" y1=\"" << ypix(med) << "\" x2=\"" << cx + bw / 2 << "\" y2=\""
          << ypix(med) << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
        Rng jitter(derive_seed(tag("jitter"), {d, i}));
        for (double v : g.values) {
            const double jx = cx + (uniform01(jitter) - 0.5) * bw * 0.8;
            s << "<circle cx=\"" << jx << "\" cy=\"" << ypix(v) << "\" r=\"2.5\" fill=\"" << colour
              << "\" fill-opacity=\"0.7\"/>\n";
        }
        s << "<text x=\"" << cx << "\" y=\"" << top + plot_h + 20 << "\" text-anchor=\"middle\">" << label
          << "</text>\n";
        s << "</g>\n";
        ++i;
    }

    const double ty = ypix(true_log_c);
    s << "<line class=\"truth\" data-value=\"" << truth_exact << "\" x1=\"" << left << "\" y1=\"" << ty << "\" x2=\""
      << left + plot_w << "\" y2=\"" << ty << "\" stroke=\"black\" stroke-dasharray=\"6 4\"/>\n";
    s << "<text x=\"" << left + plot_w - 4 << "\" y=\"" << ty - 6 << "\" text-anchor=\"end\">true log C = " << truth
      << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

void cmd_report(const fs::path& dir, std::ostream& log)
{
    const RunLayout layout{dir};
    if (!fs::exists(layout.results())) {
        throw FileError("missing results file " + layout.results().string());
    }
    if (fs::file_size(layout.results()) == 0) {
        throw FileError(layout.results().string() + " is empty");
    }
    const auto rows = bench::read_results_csv(layout.results());
    if (rows.empty()) {
        throw UsageError(layout.results().string() + " holds no result rows; nothing to report");
    }

    std::vector<std::string> warnings;
    const auto summary = bench::summarize(rows, [&](const std::string& w) { warnings.push_back(w); });
    std::set<std::size_t> dims;
    std::map<std::size_t, double> truth;
    for (const auto& r : rows) {
        dims.insert(r.d);
        truth[r.d] = r.true_log_c;
    }

    // Render everything in memory first so a failure leaves no partial output.
    std::vector<std::pair<fs::path, std::string>> outputs;
    const fs::path summary_tmp = layout.summary().string() + ".tmp";
    bench::write_summary_csv(summary_tmp, summary);
    outputs.emplace_back(layout.summary(), read_file(summary_tmp));
    fs::remove(summary_tmp);
    for (std::size_t d : dims) {
        outputs.emplace_back(layout.boxplot(d), render_boxplot_svg(d, rows, truth.at(d)));
    }
    for (const auto& [path, text] : outputs) {
        write_atomic(path, text);
    }
    for (const auto& w : warnings) {
        log << "warning: " << w << "\n";
    }
    log << "wrote " << layout.summary().string() << " and " << dims.size() << " box plot(s)\n";
}

}  // namespace snle::cli
