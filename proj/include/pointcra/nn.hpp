#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pointcra/cra.hpp"
#include "pointcra/geom.hpp"
#include "pointcra/pcio.hpp"
#include "pointcra/rng.hpp"
#include "pointcra/tensor.hpp"

namespace pointcra {

struct ModelConfig {
    std::vector<int> stage_widths{32, 64};
    int la_blocks = 3;
    int k = 8;
    int downsample_ratio = 4;
    std::string grouper = "knn";  // "knn" or "ball"
    double ball_radius = 0.3;
    bool use_cra = true;
    int num_classes = 3;
    bool segmentation = false;
    CraSettings cra;
    CraVariant variant;
    double cra_init_a = 1.0;
    double cra_init_b = 0.0;
    double cra_init_c = 0.5;

    int stem_width() const { return stage_widths.at(0); }
    int stages() const { return int(stage_widths.size()); }
};

// Named tensors plus persistent buffers (batch-norm running statistics).
// Serialization order is registration order.
struct ParamEntry {
    std::string name;
    Tensor t;
    bool trainable = true;
    bool decay = true;  // weight decay applies
};

class ParamStore {
public:
    Tensor add(const std::string& name, Shape shape, std::vector<double> init,
               bool trainable = true, bool decay = true);
    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    void zero_grads();
    std::int64_t trainable_count() const;
    std::vector<NamedArray> state() const;
    void load_state(const std::vector<NamedArray>& arrays);

private:
    std::vector<ParamEntry> entries_;
};

struct Linear {
    Tensor w, b;
    Tensor apply(const Tensor& x) const { return bias_add(matmul(x, w), b); }
};

struct BatchNorm {
    Tensor gamma, beta;
    Tensor run_mean, run_var;  // non-trainable buffers
    Tensor apply(const Tensor& x, bool training) const;
};

// lin -> bn -> relu -> lin, the shared per-pair encoder of the SA/LA blocks
struct SharedEncoder {
    Linear l1;
    BatchNorm bn;
    Linear l2;
    Tensor apply(const Tensor& x, bool training) const;
};

// lin -> bn -> relu
struct EmbedLayer {
    Linear lin;
    BatchNorm bn;
    Tensor apply(const Tensor& x, bool training) const;
};

// Geometry of one scene: all index structures depend only on positions, so
// they are computed once and reused across epochs.
struct LevelGeometry {
    int m = 0;
    std::vector<double> positions;  // m x 3
    std::vector<int> fps;           // centers into the finer level
    NeighborhoodIndex sa_index;     // neighbors in the finer level
    std::vector<double> sa_rel;     // m x k x 3
    NeighborhoodIndex la_index;     // self level
    std::vector<double> la_rel;     // m x k x 3
    std::vector<int> fp_idx;        // finer_m x 3, decoder interpolation
    std::vector<double> fp_w;       // finer_m x 3
};

struct SceneGeometry {
    int n0 = 0;
    std::vector<LevelGeometry> levels;
};

struct ForwardResult {
    Tensor logits;  // [batch, classes] or [batch*n, classes]
    std::vector<CraIntermediates> cra;  // per stage (empty when bypassed)
    std::vector<Tensor> cra_w;          // graph nodes of w per stage, for the orth loss
};

class Backbone {
public:
    Backbone(const ModelConfig& cfg, std::uint64_t seed);

    SceneGeometry build_geometry(const PointCloud& cloud) const;

    ForwardResult forward(const std::vector<const PointCloud*>& batch,
                          const std::vector<const SceneGeometry*>& geometry, bool training,
                          bool want_intermediates = false);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    std::int64_t parameter_count() const { return params_.trainable_count(); }
    // a, b, c plus the per-stage calibration embedding
    std::int64_t cra_parameter_count() const;

    void save(const std::string& path) const;
    void load(const std::string& path);

    const CraParams& stage_cra_params(int s) const { return stages_[std::size_t(s)].cra; }

private:
    struct LaBlock {
        SharedEncoder enc;
        EmbedLayer embed;
    };
    struct Stage {
        SharedEncoder sa;
        std::vector<LaBlock> la;
        CraParams cra;
        EmbedLayer cra_embed;
    };
    struct FpBlock {
        Linear lin;
        BatchNorm bn;
    };

    ModelConfig cfg_;
    ParamStore params_;
    Linear stem_;
    BatchNorm stem_bn_;
    std::vector<Stage> stages_;
    std::vector<FpBlock> fp_;  // decoder, coarse to fine (segmentation only)
    Linear head_;
};

}  // namespace pointcra
