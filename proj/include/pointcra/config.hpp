#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointcra/nn.hpp"
#include "pointcra/synth.hpp"

namespace pointcra {

// Config problems exit with code 1; everything else with 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LossConfig {
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double label_smoothing = 0.2;
    bool orth_centered = false;
};

struct TrainConfig {
    int epochs = 60;
    int batch_size = 16;
    double lr_init = 0.01;
    double lr_final = 1e-4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    std::string schedule = "cosine";
    std::string ablation = "full";        // full | baseline | A | B | C | D
    std::string ablation_table = "main";  // main | calib
    double early_stop_oa = 0.0;           // 0 disables
    bool log_steps = true;
    bool eval_each_epoch = false;
    std::string init_checkpoint;  // warm start, empty trains from scratch
};

struct Config {
    ModelConfig model;  // widths, blocks, grouper, cra settings
    LossConfig loss;
    DataConfig data;
    TrainConfig train;
    std::string eval_checkpoint;
    std::string stats_checkpoint;
    bool stats_dump = false;
    std::vector<std::string> gradcheck_suites;  // empty runs every suite
    std::vector<std::string> ablate_variants{"baseline", "A", "B", "C", "D"};
    std::vector<std::uint64_t> ablate_seeds{0, 1, 2, 3, 4};
    std::vector<int> sweep_g{1, 2, 4, 8};

    // Applies task/ablation derived fields (num_classes, segmentation flag,
    // CRA variant toggles and effective loss weights).
    void finalize();
    double effective_lambda1 = 0.0;
    double effective_lambda2 = 0.0;
};

// defaults <- file <- dotted overrides. Unknown keys and type mismatches
// throw ConfigError naming the offending key. A run.json written by a
// previous run is accepted directly: its embedded config and seed are used.
Config load_config(const std::string& path, const std::vector<std::string>& overrides);
Config config_from_json_text(const std::string& text, const std::vector<std::string>& overrides);

// Resolved form, echoed into run.json (includes train.seed).
std::string config_to_json(const Config& cfg);

std::string run_record_json(const std::string& command, const Config& cfg,
                            const std::string& out_dir);

}  // namespace pointcra
