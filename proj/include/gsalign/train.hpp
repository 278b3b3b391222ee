#pragma once

#include "gsalign/alignment.hpp"
#include "gsalign/dataset.hpp"
#include "gsalign/encoder.hpp"
#include "gsalign/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gsalign {

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t epochs = 50;
    std::size_t batch_size = 24;
    std::size_t eval_batch_size = 80;
    std::uint64_t seed = 42;
    Optimizer optimizer = Optimizer::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    EncoderConfig encoder{};
    LossConfig loss{};
    std::string dataset;     // dataset directory
    std::string output;      // checkpoint directory; empty skips saving
    std::size_t max_primitives = 1024;
    /// Share of training items replaced by from_point_cloud conversions.
    double point_cloud_fraction = 0.0;
    double point_cloud_opacity = 0.4;
    double point_cloud_scale = 0.4;
    std::size_t threads = 0;  // evaluation workers, 0 = hardware concurrency
    bool evaluate = true;     // zero-shot classify the test split after training
    bool verbose = false;

    void validate() const;  // ConfigError
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);  // ConfigError
TrainConfig load_train_config(const std::filesystem::path& path);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> batch_losses;
    std::vector<double> epoch_losses;
    std::optional<MetricsReport> test_metrics;
};

/// Loads `cfg.dataset`, trains, and saves to `cfg.output` when set.
TrainResult train(const TrainConfig& cfg);
TrainResult train(const TrainConfig& cfg, const Dataset& data);

// ---- ablation ----------------------------------------------------------

struct AblationRow {
    std::string variant;
    bool available = true;
    bool pretrained = false;  // fundamental branch initialized from a checkpoint and frozen
    bool parallel = false;    // advanced branch present
    bool cross = false;       // cross-attention guidance
    std::optional<MetricsReport> report;
};

inline const std::vector<std::string> kAblationVariants{"exp1", "exp2", "exp3", "exp4", "exp5", "exp6", "exp7"};

/// Applies a variant's flag bundle to `base`. `pretrained_ckpt` is the
/// fundamental-branch source for the variants that need one.
EncoderConfig ablation_config(const std::string& variant, const EncoderConfig& base, const std::string& pretrained_ckpt);

/// Trains each requested variant on the same data and seed. Variants that
/// need a pretrained fundamental branch use exp3's checkpoint, trained
/// first under `work_dir`.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<std::string>& variants,
                                      const std::filesystem::path& work_dir);
std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& data, const std::vector<std::string>& variants,
                                      const std::filesystem::path& work_dir);

nlohmann::json to_json(const std::vector<AblationRow>& rows);
std::string format_table(const std::vector<AblationRow>& rows);

} // namespace gsalign
