// SPDX-License-Identifier: Apache-2.0
//
// INI-style run configuration shared by every CLI command.

#pragma once

#include "regformer/model.hpp"
#include "regformer/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace regformer {

struct RunConfig {
    ModelConfig model = ModelConfig::toy();
    TrainConfig train;
    std::uint64_t seed = 7;
    Precision precision = Precision::f64;
    std::size_t threads = 1;
    std::string checkpoint;
    std::string output = "out";
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parses sections [grid] [encoder] [association] [training] [run] [paths].
/// Missing keys keep their defaults; unknown sections or keys throw ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string format_run_config(const RunConfig& cfg);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace regformer
