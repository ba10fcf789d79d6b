#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "diamond/align.hpp"
#include "diamond/distill.hpp"
#include "diamond/stats.hpp"

namespace diamond {

using json = nlohmann::json;

/// Invalid or unknown configuration content (CLI exit code 2).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    Scheduler scheduler{ScheduleKind::Linear};
    GaussianMixture mixture = GaussianMixture::isotropic(Vec::Zero(2), 1.0);
    std::shared_ptr<Reward> reward = std::make_shared<ZeroReward>();
    json algorithm;  // {"name": ..., per-algorithm settings}
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    json echo;  // the raw config, written back as config-echo.json
};

json default_config_json();
GaussianMixture mixture_from_json(const json& spec);
std::shared_ptr<Reward> reward_from_json(const json& spec, Eigen::Index dim);
Scheduler scheduler_from_json(const json& spec);
ExperimentConfig parse_experiment_config(const json& root);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Runs the configured algorithm and writes samples.csv, metrics.jsonl,
/// config-echo.json and report.svg into the output directory.
std::filesystem::path run_experiment(const ExperimentConfig& cfg);

// File helpers shared with the CLI; writes are atomic (temp + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& content);
std::string csv_from_matrix(const Mat& samples);

}  // namespace diamond
