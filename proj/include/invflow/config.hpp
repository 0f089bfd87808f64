#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "invflow/datasets.hpp"
#include "invflow/model.hpp"
#include "invflow/train.hpp"

namespace invflow {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a training run needs. The image shape is shared by the model
/// and the dataset.
struct RunConfig {
    ModelConfig model;
    DatasetSpec data;
    TrainOptions train;
    std::filesystem::path checkpoint = "model.ckpt";
    std::filesystem::path metrics = "metrics.csv";
};

// Line-oriented "key = value" text. '#' starts a comment, blank lines are
// ignored, unknown keys and malformed values are errors. See
// default_config_text() for every key and its default.
RunConfig parse_config(std::istream& in, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);
/// Applies one setting; throws ConfigError on an unknown key or bad value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
/// A complete config file listing every key at its default value.
std::string default_config_text();

}  // namespace invflow
