#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointcra/config.hpp"
#include "pointcra/losses.hpp"
#include "pointcra/metrics.hpp"
#include "pointcra/nn.hpp"
#include "pointcra/synth.hpp"

namespace pointcra {

// Decoupled weight decay Adam. State order follows the parameter store.
class AdamW {
public:
    AdamW(ParamStore& params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);
    void step(double lr);

private:
    ParamStore& params_;
    double wd_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

double cosine_lr(double lr_init, double lr_final, int epoch, int total_epochs);

struct TrainResult {
    std::vector<std::string> metric_rows;  // epoch,split,oa,macc,miou,task,reg,orth,total,lr
    std::vector<std::string> step_rows;    // step,task,reg,orth,total
    Metrics final_train;
    Metrics final_test;
    bool has_test = false;
    int epochs_run = 0;
    double final_train_loss = 0.0;
};

// Deterministic for a fixed config; aborts with a diagnostic on divergence.
TrainResult train_model(Backbone& model, const Dataset& train_set, const Dataset* test_set,
                        const Config& cfg);

Metrics evaluate(Backbone& model, const Dataset& ds, int batch_size);

// Population statistics of the calibration intermediates over a dataset.
struct StageStats {
    double pd_pre_mean = 0.0, pd_pre_std = 0.0;
    double pd_post_mean = 0.0, pd_post_std = 0.0;
    double pc_pre_mean = 0.0, pc_pre_std = 0.0;
    double pc_post_mean = 0.0, pc_post_std = 0.0;
    double w_abs_cos_mean = 0.0;
};
std::vector<StageStats> collect_stats(Backbone& model, const Dataset& ds, int batch_size);
std::vector<std::string> stats_csv_rows(const std::vector<StageStats>& stats);

// One full dump of the calibration intermediates for the first batch.
std::vector<NamedArray> dump_intermediates(Backbone& model, const Dataset& ds, int batch_size);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    Metrics test;
};
std::vector<AblationRow> run_ablation(const Config& base, const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::vector<std::string>* progress = nullptr);

struct SweepRow {
    int g = 0;
    std::int64_t params_total = 0;
    std::int64_t params_cra = 0;
    Metrics test;
};
std::vector<SweepRow> run_group_size_sweep(const Config& base, const std::vector<int>& g_values);

// Per-scene geometry shared across epochs.
std::vector<SceneGeometry> build_geometries(const Backbone& model, const Dataset& ds);

}  // namespace pointcra
