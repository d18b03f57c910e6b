#include "pointcra/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pointcra {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;
constexpr double kInterpEps = 1e-9;

std::vector<double> uniform_init(Rng& rng, std::int64_t n, double bound) {
    std::vector<double> v(std::size_t(n), 0.0);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return v;
}

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    Linear l;
    double bound = 1.0 / std::sqrt(double(in));
    l.w = ps.add(name + ".w", {in, out}, uniform_init(rng, std::int64_t(in) * out, bound));
    l.b = ps.add(name + ".b", {out}, std::vector<double>(std::size_t(out), 0.0), true, false);
    return l;
}

BatchNorm make_bn(ParamStore& ps, const std::string& name, int dim) {
    BatchNorm bn;
    bn.gamma = ps.add(name + ".gamma", {dim}, std::vector<double>(std::size_t(dim), 1.0), true, false);
    bn.beta = ps.add(name + ".beta", {dim}, std::vector<double>(std::size_t(dim), 0.0), true, false);
    bn.run_mean = ps.add(name + ".run_mean", {dim}, std::vector<double>(std::size_t(dim), 0.0), false, false);
    bn.run_var = ps.add(name + ".run_var", {dim}, std::vector<double>(std::size_t(dim), 1.0), false, false);
    return bn;
}

}  // namespace

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> init,
                       bool trainable, bool decay) {
    for (const auto& e : entries_)
        if (e.name == name) throw std::invalid_argument("ParamStore: duplicate name " + name);
    Tensor t = Tensor::from(std::move(shape), std::move(init), trainable);
    entries_.push_back({name, t, trainable, decay});
    return t;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_)
        if (e.trainable) e.t.node->grad.assign(e.t.node->value.size(), 0.0);
}

std::int64_t ParamStore::trainable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.t.numel();
    return n;
}

std::vector<NamedArray> ParamStore::state() const {
    std::vector<NamedArray> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_)
        out.push_back({e.name, e.t.shape(), e.t.value()});
    return out;
}

void ParamStore::load_state(const std::vector<NamedArray>& arrays) {
    if (arrays.size() != entries_.size())
        throw std::invalid_argument("ParamStore: checkpoint entry count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& e = entries_[i];
        const auto& a = arrays[i];
        if (a.name != e.name || a.shape != e.t.shape())
            throw std::invalid_argument("ParamStore: checkpoint mismatch at " + a.name);
        e.t.node->value = a.data;
    }
}

Tensor BatchNorm::apply(const Tensor& x, bool training) const {
    return batch_norm(x, gamma, beta, run_mean.node->value, run_var.node->value, training,
                      kBnMomentum, kBnEps);
}

Tensor SharedEncoder::apply(const Tensor& x, bool training) const {
    return l2.apply(relu(bn.apply(l1.apply(x), training)));
}

Tensor EmbedLayer::apply(const Tensor& x, bool training) const {
    return relu(bn.apply(lin.apply(x), training));
}

Backbone::Backbone(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.stages() < 1) throw std::invalid_argument("Backbone: needs at least one stage");
    if (cfg_.use_cra && cfg_.la_blocks < 2)
        throw std::invalid_argument("Backbone: trend statistics need at least two stacked blocks");
    Rng rng(Rng::mix(seed, 0x6d6f64656cULL));

    const int w0 = cfg_.stem_width();
    stem_ = make_linear(params_, "stem", 3, w0, rng);
    stem_bn_ = make_bn(params_, "stem.bn", w0);

    int prev_w = w0;
    for (int s = 0; s < cfg_.stages(); ++s) {
        const int w = cfg_.stage_widths[std::size_t(s)];
        const std::string base = "stage" + std::to_string(s);
        Stage st;
        st.sa.l1 = make_linear(params_, base + ".sa.l1", prev_w + 3, w, rng);
        st.sa.bn = make_bn(params_, base + ".sa.bn", w);
        st.sa.l2 = make_linear(params_, base + ".sa.l2", w, w, rng);
        for (int l = 0; l < cfg_.la_blocks; ++l) {
            LaBlock blk;
            const std::string lb = base + ".la" + std::to_string(l);
            blk.enc.l1 = make_linear(params_, lb + ".enc.l1", w + 3, w, rng);
            blk.enc.bn = make_bn(params_, lb + ".enc.bn", w);
            blk.enc.l2 = make_linear(params_, lb + ".enc.l2", w, w, rng);
            blk.embed.lin = make_linear(params_, lb + ".embed", w, w, rng);
            blk.embed.bn = make_bn(params_, lb + ".embed.bn", w);
            st.la.push_back(std::move(blk));
        }
        if (cfg_.use_cra) {
            const int gn = group_count(w, cfg_.cra.group_size);
            st.cra.a = params_.add(base + ".cra.a", {gn},
                                   std::vector<double>(std::size_t(gn), cfg_.cra_init_a), true, false);
            st.cra.b = params_.add(base + ".cra.b", {gn},
                                   std::vector<double>(std::size_t(gn), cfg_.cra_init_b), true, false);
            st.cra.c = params_.add(base + ".cra.c", {gn},
                                   std::vector<double>(std::size_t(gn), cfg_.cra_init_c), true, false);
            st.cra_embed.lin = make_linear(params_, base + ".cra.embed", w, w, rng);
            st.cra_embed.bn = make_bn(params_, base + ".cra.embed.bn", w);
        }
        stages_.push_back(std::move(st));
        prev_w = w;
    }

    if (cfg_.segmentation) {
        int cw = cfg_.stage_widths.back();
        for (int s = cfg_.stages() - 1; s >= 0; --s) {
            int skip_w = s == 0 ? w0 : cfg_.stage_widths[std::size_t(s - 1)];
            FpBlock fb;
            const std::string fb_name = "fp" + std::to_string(s);
            fb.lin = make_linear(params_, fb_name, cw + skip_w, skip_w, rng);
            fb.bn = make_bn(params_, fb_name + ".bn", skip_w);
            fp_.push_back(std::move(fb));
            cw = skip_w;
        }
        head_ = make_linear(params_, "head", w0, cfg_.num_classes, rng);
    } else {
        head_ = make_linear(params_, "head", 2 * cfg_.stage_widths.back(), cfg_.num_classes, rng);
    }
}

SceneGeometry Backbone::build_geometry(const PointCloud& cloud) const {
    cloud.validate();
    SceneGeometry g;
    g.n0 = cloud.n;
    const int k = cfg_.k;

    std::vector<double> prev_pos = cloud.positions;
    int prev_m = cloud.n;

    for (int s = 0; s < cfg_.stages(); ++s) {
        LevelGeometry lv;
        int m = prev_m / cfg_.downsample_ratio;
        if (m < 1) m = 1;
        lv.m = m;

        PointCloud prev;
        prev.n = prev_m;
        prev.c = 0;
        prev.positions = prev_pos;
        lv.fps = farthest_point_sample(prev, m, 0);
        lv.positions.resize(std::size_t(m) * 3);
        for (int i = 0; i < m; ++i)
            for (int t = 0; t < 3; ++t)
                lv.positions[std::size_t(i) * 3 + t] = prev_pos[std::size_t(lv.fps[std::size_t(i)]) * 3 + t];

        if (cfg_.grouper == "ball") {
            lv.sa_index = ball_query(lv.positions, m, prev_pos, prev_m, cfg_.ball_radius, k);
            lv.la_index = ball_query(lv.positions, m, lv.positions, m, cfg_.ball_radius, k);
        } else {
            lv.sa_index = knn(lv.positions, m, prev_pos, prev_m, k);
            lv.la_index = knn(lv.positions, m, lv.positions, m, k);
        }
        lv.sa_index.centers = lv.fps;
        Grouped gsa = group(prev, lv.sa_index);
        lv.sa_rel = std::move(gsa.rel_pos);

        PointCloud self;
        self.n = m;
        self.c = 0;
        self.positions = lv.positions;
        Grouped gla = group(self, lv.la_index);
        lv.la_rel = std::move(gla.rel_pos);

        // decoder interpolation: 3 nearest coarse points per finer point
        NeighborhoodIndex fp = knn(prev_pos, prev_m, lv.positions, m, 3);
        lv.fp_idx.resize(std::size_t(prev_m) * 3);
        lv.fp_w.resize(std::size_t(prev_m) * 3);
        for (int i = 0; i < prev_m; ++i) {
            double wsum = 0.0;
            for (int t = 0; t < 3; ++t) {
                int j = fp.neighbors[std::size_t(i) * 3 + t];
                lv.fp_idx[std::size_t(i) * 3 + t] = j;
                double d2 = squared_dist3(prev_pos.data() + 3 * std::size_t(i),
                                          lv.positions.data() + 3 * std::size_t(j));
                double w = 1.0 / (d2 + kInterpEps);
                lv.fp_w[std::size_t(i) * 3 + t] = w;
                wsum += w;
            }
            for (int t = 0; t < 3; ++t) lv.fp_w[std::size_t(i) * 3 + t] /= wsum;
        }

        prev_pos = lv.positions;
        prev_m = m;
        g.levels.push_back(std::move(lv));
    }
    return g;
}

ForwardResult Backbone::forward(const std::vector<const PointCloud*>& batch,
                                const std::vector<const SceneGeometry*>& geometry, bool training,
                                bool want_intermediates) {
    const int b = int(batch.size());
    if (b < 1 || geometry.size() != batch.size())
        throw std::invalid_argument("forward: empty batch or geometry mismatch");
    const int n0 = batch[0]->n;
    for (int i = 0; i < b; ++i)
        if (batch[std::size_t(i)]->n != n0 || geometry[std::size_t(i)]->n0 != n0)
            throw std::invalid_argument("forward: batch scenes must share the point count");

    const int k = cfg_.k;
    ForwardResult res;

    // level 0: raw coordinates as features
    std::vector<double> pos0(std::size_t(b) * n0 * 3);
    for (int s = 0; s < b; ++s)
        std::copy(batch[std::size_t(s)]->positions.begin(), batch[std::size_t(s)]->positions.end(),
                  pos0.begin() + std::size_t(s) * n0 * 3);
    Tensor x = relu(stem_bn_.apply(stem_.apply(Tensor::from({std::int64_t(b) * n0, 3}, std::move(pos0))), training));

    std::vector<Tensor> level_feats;  // [stem, stage0, stage1, ...]
    level_feats.push_back(x);

    int prev_m = n0;
    for (int s = 0; s < cfg_.stages(); ++s) {
        const auto& st = stages_[std::size_t(s)];
        const int m = geometry[0]->levels[std::size_t(s)].m;
        const std::int64_t rows = std::int64_t(b) * m;

        // merged SA gather
        std::vector<int> sa_idx(std::size_t(rows) * k);
        std::vector<double> sa_rel(std::size_t(rows) * k * 3);
        for (int sc = 0; sc < b; ++sc) {
            const auto& lv = geometry[std::size_t(sc)]->levels[std::size_t(s)];
            for (std::size_t e = 0; e < std::size_t(m) * k; ++e)
                sa_idx[std::size_t(sc) * m * k + e] = lv.sa_index.neighbors[e] + sc * prev_m;
            std::copy(lv.sa_rel.begin(), lv.sa_rel.end(),
                      sa_rel.begin() + std::size_t(sc) * m * k * 3);
        }
        Tensor h = concat_cols(gather_rows(x, sa_idx, rows, k),
                               Tensor::from({rows, k, 3}, std::move(sa_rel)));
        x = reduce_max_k(st.sa.apply(h, training));

        // merged LA gather, shared by every block of the stage
        std::vector<int> la_idx(std::size_t(rows) * k);
        std::vector<double> la_rel(std::size_t(rows) * k * 3);
        NeighborhoodIndex merged;
        merged.k = k;
        merged.centers.resize(std::size_t(rows));
        for (int sc = 0; sc < b; ++sc) {
            const auto& lv = geometry[std::size_t(sc)]->levels[std::size_t(s)];
            for (std::size_t e = 0; e < std::size_t(m) * k; ++e)
                la_idx[std::size_t(sc) * m * k + e] = lv.la_index.neighbors[e] + sc * m;
            std::copy(lv.la_rel.begin(), lv.la_rel.end(),
                      la_rel.begin() + std::size_t(sc) * m * k * 3);
            for (int i = 0; i < m; ++i) merged.centers[std::size_t(sc) * m + i] = sc * m + i;
        }
        merged.neighbors = la_idx;
        Tensor la_rel_t = Tensor::from({rows, k, 3}, std::move(la_rel));

        std::vector<Tensor> seq;
        for (const auto& blk : st.la) {
            Tensor hh = concat_cols(gather_rows(x, la_idx, rows, k), la_rel_t);
            Tensor t = reduce_max_k(blk.enc.apply(hh, training));
            x = blk.embed.apply(t, training);
            seq.push_back(x);
        }

        if (cfg_.use_cra) {
            Tensor grouped = gather_rows(x, la_idx, rows, k);
            CraIntermediates inter;
            Tensor w;
            Tensor agg = cra_aggregate(seq, merged, grouped, st.cra, cfg_.cra, cfg_.variant,
                                       want_intermediates ? &inter : nullptr, &w);
            x = st.cra_embed.apply(agg, training);
            if (want_intermediates) res.cra.push_back(std::move(inter));
            res.cra_w.push_back(w);
        }

        level_feats.push_back(x);
        prev_m = m;
    }

    if (!cfg_.segmentation) {
        Tensor pooled = concat_cols(segment_max(x, b), segment_mean(x, b));
        res.logits = head_.apply(pooled);
    } else {
        Tensor d = x;
        for (int s = cfg_.stages() - 1; s >= 0; --s) {
            const int m = geometry[0]->levels[std::size_t(s)].m;
            const int finer_m = s == 0 ? n0 : geometry[0]->levels[std::size_t(s - 1)].m;
            const std::int64_t frows = std::int64_t(b) * finer_m;
            std::vector<int> fp_idx(std::size_t(frows) * 3);
            std::vector<double> fp_w(std::size_t(frows) * 3);
            for (int sc = 0; sc < b; ++sc) {
                const auto& lv = geometry[std::size_t(sc)]->levels[std::size_t(s)];
                for (std::size_t e = 0; e < std::size_t(finer_m) * 3; ++e) {
                    fp_idx[std::size_t(sc) * finer_m * 3 + e] = lv.fp_idx[e] + sc * m;
                    fp_w[std::size_t(sc) * finer_m * 3 + e] = lv.fp_w[e];
                }
            }
            Tensor it = interp_rows(d, fp_idx, fp_w, frows, 3);
            const auto& fb = fp_[std::size_t(cfg_.stages() - 1 - s)];
            d = relu(fb.bn.apply(fb.lin.apply(concat_cols(it, level_feats[std::size_t(s)])), training));
        }
        res.logits = head_.apply(d);
    }
    return res;
}

std::int64_t Backbone::cra_parameter_count() const {
    if (!cfg_.use_cra) return 0;
    std::int64_t n = 0;
    for (int s = 0; s < cfg_.stages(); ++s) {
        const auto& st = stages_[std::size_t(s)];
        n += st.cra.a.numel() + st.cra.b.numel() + st.cra.c.numel();
        n += st.cra_embed.lin.w.numel() + st.cra_embed.lin.b.numel();
        n += st.cra_embed.bn.gamma.numel() + st.cra_embed.bn.beta.numel();
    }
    return n;
}

void Backbone::save(const std::string& path) const { write_array_bundle(path, params_.state()); }

void Backbone::load(const std::string& path) { params_.load_state(read_array_bundle(path)); }

}  // namespace pointcra
