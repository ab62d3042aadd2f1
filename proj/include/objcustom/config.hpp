#pragma once

// One JSON document configures a run. Unknown keys are rejected at every level,
// and the resolved document is echoed into every checkpoint and report.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "objcustom/metrics.hpp"
#include "objcustom/model.hpp"
#include "objcustom/trainer.hpp"

namespace objcustom {

struct PathsConfig {
    std::string manifest;
    std::string checkpoint;
    std::string output;
};

struct SamplingConfig {
    int steps = 50;
    double guidance = 7.0;
};

struct DataConfig {
    int min_side = 300;
    int pairs_per_group = 1;
    int min_frame_gap = 0;
    bool augment_flip = true;
    bool augment_crop = true;
    bool augment_jitter = true;

    data::BuildOptions build_options() const;
};

struct MetricsConfig {
    std::string compare_to = "reference";
    bool diversim_all_pairs = false;
    double max_missing_fraction = 0.05;
    std::string clip_image_weights = "toy:101";
    std::string dino_image_weights = "toy:103";

    metrics::EvalConfig eval_config() const;
    metrics::Embedders embedders() const;
};

struct RunConfig {
    PathsConfig paths;
    ModelConfig model;
    train::TrainConfig train;
    SamplingConfig sampling;
    DataConfig data;
    MetricsConfig metrics;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
MetricsConfig metrics_config_from_json(const nlohmann::json& j, const std::string& where = "metrics");

}  // namespace objcustom
