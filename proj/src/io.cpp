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

#include "snle/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "snle/errors.hpp"

namespace snle::io {

nlohmann::json to_json(const flows::FlowConfig& c)
{
    return {{"architecture", flows::to_string(c.architecture)},
            {"dim", c.dim},
            {"context_dim", c.context_dim},
            {"transforms", c.transforms},
            {"hidden", c.hidden}};
}

flows::FlowConfig flow_config_from_json(const nlohmann::json& j)
{
    flows::FlowConfig c;
    c.architecture = flows::architecture_from_string(j.at("architecture").get<std::string>());
    c.dim = j.at("dim").get<std::size_t>();
    c.context_dim = j.at("context_dim").get<std::size_t>();
    c.transforms = j.at("transforms").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    return c;
}

nlohmann::json to_json(const train::TrainConfig& c)
{
    return {{"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"validation_fraction", c.validation_fraction},
            {"standardize_data", c.standardize_data}};
}

train::TrainConfig train_config_from_json(const nlohmann::json& j)
{
    train::TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.standardize_data = j.at("standardize_data").get<bool>();
    return c;
}

nlohmann::json to_json(const McmcConfig& c)
{
    return {{"n_chains", c.n_chains},
            {"burn_in", c.burn_in},
            {"thin", c.thin},
            {"max_doublings", c.max_doublings}};
}

McmcConfig mcmc_config_from_json(const nlohmann::json& j)
{
    McmcConfig c;
    c.n_chains = j.at("n_chains").get<std::size_t>();
    c.burn_in = j.at("burn_in").get<std::size_t>();
    c.thin = j.at("thin").get<std::size_t>();
    c.max_doublings = j.at("max_doublings").get<std::size_t>();
    return c;
}

nlohmann::json to_json(const SnleConfig& c)
{
    return {{"rounds", c.rounds},
            {"sims_per_round", c.sims_per_round},
            {"flow", to_json(c.flow)},
            {"train", to_json(c.train)},
            {"mcmc", to_json(c.mcmc)},
            {"warm_start", c.warm_start}};
}

SnleConfig snle_config_from_json(const nlohmann::json& j)
{
    SnleConfig c;
    c.rounds = j.at("rounds").get<std::size_t>();
    c.sims_per_round = j.at("sims_per_round").get<std::size_t>();
    c.flow = flow_config_from_json(j.at("flow"));
    c.train = train_config_from_json(j.at("train"));
    c.mcmc = mcmc_config_from_json(j.at("mcmc"));
    c.warm_start = j.at("warm_start").get<bool>();
    return c;
}

std::string format_double(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s)
{
    if (s == "nan") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (s == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    if (s == "-inf") {
        return -std::numeric_limits<double>::infinity();
    }
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FileError("not a number: '" + s + "'");
    }
    return v;
}

std::size_t CsvTable::column(const std::string& name) const
{
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw FileError("csv: missing column '" + name + "'");
}

namespace {

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw FileError("cannot read " + path.string());
    }
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) {
        throw FileError(path.string() + ": empty file");
    }
    t.header = split_line(line);
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        auto fields = split_line(line);
        if (fields.size() != t.header.size()) {
            throw FileError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
    }
    return t;
}

std::string csv_line(const std::vector<std::string>& fields)
{
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out += ',';
        }
        out += fields[i];
    }
    out += '\n';
    return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table)
{
    std::string text = csv_line(table.header);
    for (const auto& r : table.rows) {
        text += csv_line(r);
    }
    write_text(path, text);
}

nlohmann::json read_json(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw FileError("cannot read " + path.string());
    }
    try {
        nlohmann::json j;
        is >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw FileError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j)
{
    write_text(path, j.dump(2) + "\n");
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FileError("cannot write " + path.string());
    }
    os << text;
    if (!os) {
        throw FileError("write failed: " + path.string());
    }
}

}  // namespace snle::io
