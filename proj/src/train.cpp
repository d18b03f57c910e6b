#include "pointcra/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <stdexcept>

#include "pointcra/rng.hpp"

namespace pointcra {

namespace {

std::string fmt_csv(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
std::string fmt_csv(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    return buf;
}

struct Batch {
    std::vector<const PointCloud*> clouds;
    std::vector<const SceneGeometry*> geoms;
    std::vector<int> scene_ids;
    // augmented copies live here so the pointer views stay valid
    std::vector<PointCloud> owned_clouds;
    std::vector<SceneGeometry> owned_geoms;
};

std::vector<int> shuffled_order(int n, std::uint64_t seed, int epoch) {
    std::vector<int> order(std::size_t(n), 0);
    for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
    Rng rng(Rng::mix(seed, 0xe70c0 + std::uint64_t(epoch)));
    for (int i = n - 1; i > 0; --i) {
        int j = rng.uniform_int(i + 1);
        std::swap(order[std::size_t(i)], order[std::size_t(j)]);
    }
    return order;
}

std::vector<int> batch_labels(const Dataset& ds, const Batch& b, bool segmentation) {
    std::vector<int> labels;
    if (segmentation) {
        for (const auto* pc : b.clouds)
            labels.insert(labels.end(), pc->labels.begin(), pc->labels.end());
    } else {
        for (int id : b.scene_ids) labels.push_back(ds.scenes[std::size_t(id)].label);
    }
    return labels;
}

void add_predictions(ConfusionMatrix& cm, const Tensor& logits, const std::vector<int>& labels) {
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    const double* L = logits.value().data();
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        double bv = L[i * k];
        for (std::int64_t c = 1; c < k; ++c)
            if (L[i * k + c] > bv) {
                bv = L[i * k + c];
                best = int(c);
            }
        cm.add(labels[std::size_t(i)], best);
    }
}

// reg loss over every CRA stage of the model; zero when CRA is off
Tensor model_reg_loss(Backbone& model) {
    const auto& cfg = model.config();
    if (!cfg.use_cra) return Tensor::scalar(0.0);
    std::vector<Tensor> a, b, c;
    for (int s = 0; s < cfg.stages(); ++s) {
        const auto& p = model.stage_cra_params(s);
        a.push_back(p.a);
        b.push_back(p.b);
        c.push_back(p.c);
    }
    return reg_loss(a, b, c, cfg.cra.phi_l, cfg.cra.phi_h);
}

Tensor model_orth_loss(const ForwardResult& fwd, bool centered) {
    if (fwd.cra_w.empty()) return Tensor::scalar(0.0);
    Tensor acc;
    for (std::size_t s = 0; s < fwd.cra_w.size(); ++s) {
        Tensor o = orth_loss(fwd.cra_w[s], centered);
        acc = s == 0 ? o : add(acc, o);
    }
    return affine(acc, 1.0 / double(fwd.cra_w.size()), 0.0);
}

struct StreamingMoments {
    double sum = 0.0, sumsq = 0.0;
    std::int64_t n = 0;
    void add(const std::vector<double>& v) {
        for (double x : v) {
            sum += x;
            sumsq += x * x;
        }
        n += std::int64_t(v.size());
    }
    double mean() const { return n ? sum / double(n) : 0.0; }
    double stddev() const {
        if (!n) return 0.0;
        double m = mean();
        double var = sumsq / double(n) - m * m;
        return var > 0.0 ? std::sqrt(var) : 0.0;
    }
};

// Gram accumulator for the channel |cos| statistic.
struct GramAccumulator {
    int c = 0;
    std::vector<double> gram;
    void init(int channels) {
        c = channels;
        gram.assign(std::size_t(channels) * channels, 0.0);
    }
    void add(const std::vector<double>& w_rows) {
        const std::int64_t rows = std::int64_t(w_rows.size()) / c;
        for (std::int64_t i = 0; i < rows; ++i)
            for (int d1 = 0; d1 < c; ++d1)
                for (int d2 = d1; d2 < c; ++d2)
                    gram[std::size_t(d1) * c + d2] += w_rows[std::size_t(i * c + d1)] * w_rows[std::size_t(i * c + d2)];
    }
    double mean_abs_cos() const {
        double acc = 0.0;
        std::int64_t pairs = 0;
        for (int d1 = 0; d1 < c; ++d1)
            for (int d2 = 0; d2 < c; ++d2) {
                if (d1 == d2) continue;
                double n1 = std::sqrt(gram[std::size_t(d1) * c + d1]);
                double n2 = std::sqrt(gram[std::size_t(d2) * c + d2]);
                ++pairs;
                if (n1 < 1e-12 || n2 < 1e-12) continue;
                double g = d1 < d2 ? gram[std::size_t(d1) * c + d2] : gram[std::size_t(d2) * c + d1];
                acc += std::fabs(g / (n1 * n2));
            }
        return pairs ? acc / double(pairs) : 0.0;
    }
};

}  // namespace

AdamW::AdamW(ParamStore& params, double weight_decay, double beta1, double beta2, double eps)
    : params_(params), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& e : params_.entries()) {
        if (!e.trainable) {
            m_.emplace_back();
            v_.emplace_back();
            continue;
        }
        m_.emplace_back(e.t.value().size(), 0.0);
        v_.emplace_back(e.t.value().size(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, double(t_));
    const double bc2 = 1.0 - std::pow(b2_, double(t_));
    auto& entries = params_.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
        auto& e = entries[p];
        if (!e.trainable) continue;
        auto& val = e.t.node->value;
        auto& grad = e.t.node->grad;
        if (grad.size() != val.size()) continue;  // untouched this step
        auto& m = m_[p];
        auto& v = v_[p];
        const double decay = e.decay ? wd_ : 0.0;
        for (std::size_t i = 0; i < val.size(); ++i) {
            double g = grad[i];
            m[i] = b1_ * m[i] + (1.0 - b1_) * g;
            v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            val[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + decay * val[i]);
        }
    }
}

double cosine_lr(double lr_init, double lr_final, int epoch, int total_epochs) {
    if (total_epochs <= 1) return lr_init;
    double t = double(epoch) / double(total_epochs);
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(3.14159265358979323846 * t));
}

std::vector<SceneGeometry> build_geometries(const Backbone& model, const Dataset& ds) {
    std::vector<SceneGeometry> out(ds.scenes.size());
    for (std::size_t i = 0; i < ds.scenes.size(); ++i)
        out[i] = model.build_geometry(ds.scenes[i].cloud);
    return out;
}

TrainResult train_model(Backbone& model, const Dataset& train_set, const Dataset* test_set,
                        const Config& cfg) {
    TrainResult res;
    const auto& tc = cfg.train;
    const bool seg = model.config().segmentation;

    auto geoms = build_geometries(model, train_set);
    std::vector<SceneGeometry> test_geoms;
    if (test_set) test_geoms = build_geometries(model, *test_set);

    AdamW opt(model.params(), tc.weight_decay);
    const int n = int(train_set.scenes.size());
    int step_id = 0;

    res.metric_rows.push_back("epoch,split,oa,macc,miou,task,reg,orth,total,lr");
    res.step_rows.push_back("step,task,reg,orth,total");

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = cosine_lr(tc.lr_init, tc.lr_final, epoch, tc.epochs);
        auto order = shuffled_order(n, tc.seed, epoch);
        ConfusionMatrix cm(train_set.num_classes);
        double ep_task = 0.0, ep_reg = 0.0, ep_orth = 0.0, ep_total = 0.0;
        int ep_steps = 0;

        for (int start = 0; start < n; start += tc.batch_size) {
            Batch b;
            const int count = std::min(n, start + tc.batch_size) - start;
            b.owned_clouds.reserve(std::size_t(count));
            b.owned_geoms.reserve(std::size_t(count));
            for (int i = start; i < start + count; ++i) {
                int id = order[std::size_t(i)];
                b.scene_ids.push_back(id);
                if (cfg.data.augment) {
                    // rotation in [-pi, pi] and scale in [0.9, 1.1], derived
                    // from the scene id so loading order cannot perturb it
                    Rng arng(Rng::mix(Rng::mix(tc.seed, 0xa06ULL), std::uint64_t(epoch) * 1000003 + id));
                    double yaw = arng.uniform(-3.14159265358979323846, 3.14159265358979323846);
                    double scale = arng.uniform(0.9, 1.1);
                    b.owned_clouds.push_back(
                        augment_cloud(train_set.scenes[std::size_t(id)].cloud, yaw, scale));
                    b.owned_geoms.push_back(model.build_geometry(b.owned_clouds.back()));
                    b.clouds.push_back(&b.owned_clouds.back());
                    b.geoms.push_back(&b.owned_geoms.back());
                } else {
                    b.clouds.push_back(&train_set.scenes[std::size_t(id)].cloud);
                    b.geoms.push_back(&geoms[std::size_t(id)]);
                }
            }
            auto labels = batch_labels(train_set, b, seg);

            model.params().zero_grads();
            ForwardResult fwd = model.forward(b.clouds, b.geoms, true);
            Tensor task = cross_entropy(fwd.logits, labels, cfg.loss.label_smoothing);
            Tensor reg = model_reg_loss(model);
            Tensor orth = model_orth_loss(fwd, cfg.loss.orth_centered);
            LossBreakdown bd;
            Tensor total = total_loss(task, reg, orth, cfg.effective_lambda1,
                                      cfg.effective_lambda2, &bd);
            if (!std::isfinite(bd.total))
                throw std::runtime_error("training diverged: non-finite loss at step " +
                                         std::to_string(step_id));
            backward(total);
            opt.step(lr);

            add_predictions(cm, fwd.logits, labels);
            if (tc.log_steps)
                res.step_rows.push_back(fmt_csv("%d,%.12g,%.12g,%.12g,%.12g", step_id, bd.task,
                                                bd.reg, bd.orth, bd.total));
            ep_task += bd.task;
            ep_reg += bd.reg;
            ep_orth += bd.orth;
            ep_total += bd.total;
            ++ep_steps;
            ++step_id;
        }

        Metrics tm = cm.metrics();
        res.metric_rows.push_back(fmt_csv("%d,train,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g",
                                          epoch, tm.oa, tm.macc, tm.miou, ep_task / ep_steps,
                                          ep_reg / ep_steps, ep_orth / ep_steps,
                                          ep_total / ep_steps, lr));
        res.final_train = tm;
        res.final_train_loss = ep_total / ep_steps;
        res.epochs_run = epoch + 1;

        if (tc.eval_each_epoch && test_set) {
            Metrics te = evaluate(model, *test_set, tc.batch_size);
            res.metric_rows.push_back(fmt_csv("%d,test,%.12g,%.12g,%.12g,0,0,0,0,%.12g", epoch,
                                              te.oa, te.macc, te.miou, lr));
        }
        if (tc.early_stop_oa > 0.0 && tm.oa >= tc.early_stop_oa) break;
    }

    if (test_set) {
        res.has_test = true;
        res.final_test = evaluate(model, *test_set, tc.batch_size);
        res.metric_rows.push_back(fmt_csv("%d,test,%.12g,%.12g,%.12g,0,0,0,0,0", res.epochs_run - 1,
                                          res.final_test.oa, res.final_test.macc,
                                          res.final_test.miou));
    }
    return res;
}

Metrics evaluate(Backbone& model, const Dataset& ds, int batch_size) {
    if (ds.scenes.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const bool seg = model.config().segmentation;
    auto geoms = build_geometries(model, ds);
    ConfusionMatrix cm(ds.num_classes);
    const int n = int(ds.scenes.size());
    for (int start = 0; start < n; start += batch_size) {
        Batch b;
        for (int i = start; i < std::min(n, start + batch_size); ++i) {
            b.scene_ids.push_back(i);
            b.clouds.push_back(&ds.scenes[std::size_t(i)].cloud);
            b.geoms.push_back(&geoms[std::size_t(i)]);
        }
        auto labels = batch_labels(ds, b, seg);
        ForwardResult fwd = model.forward(b.clouds, b.geoms, false);
        add_predictions(cm, fwd.logits, labels);
    }
    return cm.metrics();
}

std::vector<StageStats> collect_stats(Backbone& model, const Dataset& ds, int batch_size) {
    const auto& cfg = model.config();
    if (!cfg.use_cra) throw std::invalid_argument("collect_stats: model has no calibration blocks");
    auto geoms = build_geometries(model, ds);
    const int stages = cfg.stages();
    std::vector<StreamingMoments> pd_pre(stages), pd_post(stages), pc_pre(stages), pc_post(stages);
    std::vector<GramAccumulator> gram(stages);
    for (int s = 0; s < stages; ++s) gram[std::size_t(s)].init(cfg.stage_widths[std::size_t(s)]);

    const int n = int(ds.scenes.size());
    for (int start = 0; start < n; start += batch_size) {
        Batch b;
        for (int i = start; i < std::min(n, start + batch_size); ++i) {
            b.clouds.push_back(&ds.scenes[std::size_t(i)].cloud);
            b.geoms.push_back(&geoms[std::size_t(i)]);
        }
        ForwardResult fwd = model.forward(b.clouds, b.geoms, false, true);
        for (int s = 0; s < stages && s < int(fwd.cra.size()); ++s) {
            const auto& it = fwd.cra[std::size_t(s)];
            pc_pre[std::size_t(s)].add(it.pc);
            pc_post[std::size_t(s)].add(it.pc_scaled);
            if (!it.pd.empty()) {
                pd_pre[std::size_t(s)].add(it.pd);
                pd_post[std::size_t(s)].add(it.pd_cal);
            }
            gram[std::size_t(s)].add(it.w);
        }
    }

    std::vector<StageStats> out(std::size_t(stages), StageStats{});
    for (int s = 0; s < stages; ++s) {
        auto& o = out[std::size_t(s)];
        o.pd_pre_mean = pd_pre[std::size_t(s)].mean();
        o.pd_pre_std = pd_pre[std::size_t(s)].stddev();
        o.pd_post_mean = pd_post[std::size_t(s)].mean();
        o.pd_post_std = pd_post[std::size_t(s)].stddev();
        o.pc_pre_mean = pc_pre[std::size_t(s)].mean();
        o.pc_pre_std = pc_pre[std::size_t(s)].stddev();
        o.pc_post_mean = pc_post[std::size_t(s)].mean();
        o.pc_post_std = pc_post[std::size_t(s)].stddev();
        o.w_abs_cos_mean = gram[std::size_t(s)].mean_abs_cos();
    }
    return out;
}

std::vector<std::string> stats_csv_rows(const std::vector<StageStats>& stats) {
    std::vector<std::string> rows;
    rows.push_back("stage,quantity,phase,mean,std");
    for (std::size_t s = 0; s < stats.size(); ++s) {
        const auto& o = stats[s];
        rows.push_back(fmt_csv("%zu,pd,pre,%.12g,%.12g", s, o.pd_pre_mean, o.pd_pre_std));
        rows.push_back(fmt_csv("%zu,pd,post,%.12g,%.12g", s, o.pd_post_mean, o.pd_post_std));
        rows.push_back(fmt_csv("%zu,pc,pre,%.12g,%.12g", s, o.pc_pre_mean, o.pc_pre_std));
        rows.push_back(fmt_csv("%zu,pc,post,%.12g,%.12g", s, o.pc_post_mean, o.pc_post_std));
        rows.push_back(fmt_csv("%zu,wcos,final,%.12g,0", s, o.w_abs_cos_mean));
    }
    return rows;
}

std::vector<NamedArray> dump_intermediates(Backbone& model, const Dataset& ds, int batch_size) {
    auto geoms = build_geometries(model, ds);
    Batch b;
    const int n = std::min(int(ds.scenes.size()), batch_size);
    for (int i = 0; i < n; ++i) {
        b.clouds.push_back(&ds.scenes[std::size_t(i)].cloud);
        b.geoms.push_back(&geoms[std::size_t(i)]);
    }
    ForwardResult fwd = model.forward(b.clouds, b.geoms, false, true);
    std::vector<NamedArray> arrays;
    for (std::size_t s = 0; s < fwd.cra.size(); ++s) {
        const auto& it = fwd.cra[s];
        const std::string base = "stage" + std::to_string(s) + "/";
        arrays.push_back({base + "pc", {it.m, it.k, it.groups}, it.pc});
        arrays.push_back({base + "pc_scaled", {it.m, it.k, it.groups}, it.pc_scaled});
        if (!it.pd.empty()) {
            arrays.push_back({base + "pd", {it.m, it.k}, it.pd});
            arrays.push_back({base + "pd_cal", {it.m, it.k}, it.pd_cal});
            arrays.push_back({base + "pn", {it.m}, it.pn});
        }
        arrays.push_back({base + "w", {it.m, it.k, it.channels}, it.w});
    }
    return arrays;
}

std::vector<AblationRow> run_ablation(const Config& base, const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::vector<std::string>* progress) {
    std::vector<AblationRow> rows;
    for (const auto& variant : variants) {
        for (std::uint64_t seed : seeds) {
            Config cfg = base;
            cfg.train.ablation = variant;
            cfg.train.seed = seed;
            cfg.finalize();

            Dataset train_set = make_dataset(cfg.data, seed, cfg.data.scenes, 0);
            Dataset test_set = make_dataset(cfg.data, seed, cfg.data.test_scenes, 1);
            Backbone model(cfg.model, seed);
            TrainResult tr = train_model(model, train_set, &test_set, cfg);

            AblationRow row;
            row.variant = variant;
            row.seed = seed;
            row.test = tr.final_test;
            rows.push_back(row);
            if (progress)
                progress->push_back(fmt_csv("%s,%llu,%.12g,%.12g,%.12g", variant.c_str(),
                                            (unsigned long long)seed, row.test.oa, row.test.macc,
                                            row.test.miou));
        }
    }
    return rows;
}

std::vector<SweepRow> run_group_size_sweep(const Config& base, const std::vector<int>& g_values) {
    std::vector<SweepRow> rows;
    for (int g : g_values) {
        Config cfg = base;
        cfg.model.cra.group_size = g;
        cfg.finalize();
        Dataset train_set = make_dataset(cfg.data, cfg.train.seed, cfg.data.scenes, 0);
        Dataset test_set = make_dataset(cfg.data, cfg.train.seed, cfg.data.test_scenes, 1);
        Backbone model(cfg.model, cfg.train.seed);
        SweepRow row;
        row.g = g;
        row.params_total = model.parameter_count();
        row.params_cra = model.cra_parameter_count();
        TrainResult tr = train_model(model, train_set, &test_set, cfg);
        row.test = tr.final_test;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace pointcra
