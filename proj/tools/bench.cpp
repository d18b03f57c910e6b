// Times the OpenMP kernels against their serial reference twins.
#include <chrono>
#include <cstdio>
#include <vector>

#include "pointcra/geom.hpp"
#include "pointcra/nn.hpp"
#include "pointcra/parallel.hpp"
#include "pointcra/reference.hpp"
#include "pointcra/rng.hpp"
#include "pointcra/synth.hpp"
#include "pointcra/tensor.hpp"
#include "pointcra/train.hpp"

using namespace pointcra;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

template <class F>
double time_best_of(int reps, F&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        double ms = ms_since(t0);
        if (ms < best) best = ms;
    }
    return best;
}

void row(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-24s %10.3f ms %10.3f ms %8.2fx\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

}  // namespace

int main() {
    std::printf("threads available: %d (CRA_THREADS caps this)\n\n", threads_for(1 << 20));
    std::printf("%-24s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

    SceneSpec spec;
    spec.kind = ShapeKind::Composite;
    spec.points = 2048;
    spec.contamination = 0.3;
    PointCloud cloud = gen_scene(spec, 7);
    cloud.features.assign(std::size_t(cloud.n) * 16, 0.0);
    cloud.c = 16;
    Rng rng(42);
    for (auto& v : cloud.features) v = rng.uniform(-1.0, 1.0);

    row("fps n=2048 m=512",
        time_best_of(3, [&] { (void)ref::farthest_point_sample(cloud, 512, 0); }),
        time_best_of(3, [&] { (void)farthest_point_sample(cloud, 512, 0); }));

    row("knn n=2048 k=16",
        time_best_of(3, [&] { (void)ref::knn(cloud.positions, cloud.n, cloud.positions, cloud.n, 16); }),
        time_best_of(3, [&] { (void)knn(cloud.positions, cloud.n, cloud.positions, cloud.n, 16); }));

    row("ball n=2048 k=16",
        time_best_of(3, [&] {
            (void)ref::ball_query(cloud.positions, cloud.n, cloud.positions, cloud.n, 0.2, 16);
        }),
        time_best_of(3, [&] {
            (void)ball_query(cloud.positions, cloud.n, cloud.positions, cloud.n, 0.2, 16);
        }));

    NeighborhoodIndex idx = knn(cloud.positions, cloud.n, cloud.positions, cloud.n, 16);
    row("group n=2048 k=16 c=16", time_best_of(3, [&] { (void)ref::group(cloud, idx); }),
        time_best_of(3, [&] { (void)group(cloud, idx); }));

    const int r = 4096, k = 64, n = 64;
    std::vector<double> a(std::size_t(r) * k), b(std::size_t(k) * n), c(std::size_t(r) * n);
    for (auto& v : a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);
    Tensor at = Tensor::from({r, k}, a);
    Tensor bt = Tensor::from({k, n}, b);
    row("matmul 4096x64x64",
        time_best_of(3, [&] { ref::matmul(a.data(), b.data(), c.data(), r, k, n); }),
        time_best_of(3, [&] { (void)matmul(at, bt); }));

    // one full training step, parallel path only (the serial twin is the
    // same code under CRA_THREADS=1)
    Config cfg;
    cfg.data.task = "segmentation";
    cfg.data.scenes = 8;
    cfg.data.test_scenes = 0;
    cfg.data.points = 512;
    cfg.data.contamination = 0.5;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    cfg.finalize();
    Dataset ds = make_dataset(cfg.data, 0, cfg.data.scenes, 0);
    Backbone model(cfg.model, 0);
    double step_ms = time_best_of(1, [&] { (void)train_model(model, ds, nullptr, cfg); });
    std::printf("%-24s %10.3f ms (8 scenes, fwd+bwd+update)\n", "train epoch 8x512", step_ms);
    return 0;
}
