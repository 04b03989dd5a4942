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

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "snle/flows.hpp"
#include "snle/snle.hpp"
#include "snle/trainer.hpp"

namespace snle::io {

nlohmann::json to_json(const flows::FlowConfig& c);
flows::FlowConfig flow_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const train::TrainConfig& c);
train::TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const McmcConfig& c);
McmcConfig mcmc_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SnleConfig& c);
SnleConfig snle_config_from_json(const nlohmann::json& j);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);

/// Comma-separated table with a header row. Fields hold no commas or quotes.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
std::string csv_line(const std::vector<std::string>& fields);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace snle::io
