#include "pointcra/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "pointcra/pcio.hpp"
#include "pointcra/rng.hpp"

namespace pointcra {

namespace {

void push_point(PointCloud& pc, double x, double y, double z, int label) {
    pc.positions.push_back(x);
    pc.positions.push_back(y);
    pc.positions.push_back(z);
    if (label >= 0) pc.labels.push_back(label);
    ++pc.n;
}

void yaw_rotate(PointCloud& pc, double yaw) {
    double cs = std::cos(yaw), sn = std::sin(yaw);
    for (int i = 0; i < pc.n; ++i) {
        double* p = pc.positions.data() + 3 * std::size_t(i);
        double x = cs * p[0] - sn * p[1];
        double y = sn * p[0] + cs * p[1];
        p[0] = x;
        p[1] = y;
    }
}

void gen_plane(PointCloud& pc, int n, double noise, Rng& rng, int label) {
    for (int i = 0; i < n; ++i)
        push_point(pc, rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), noise * rng.normal(), label);
}

void gen_sphere(PointCloud& pc, int n, double noise, Rng& rng, int label) {
    double r = rng.uniform(0.5, 0.9);
    for (int i = 0; i < n; ++i) {
        double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
        double len = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (len < 1e-9) {
            dx = 1.0;
            len = 1.0;
        }
        double rr = r + noise * rng.normal();
        push_point(pc, rr * dx / len, rr * dy / len, rr * dz / len, label);
    }
}

void gen_corner(PointCloud& pc, int n, double noise, Rng& rng, int label) {
    // two unit half planes meeting along the x axis
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform(-1.0, 1.0);
        double v = rng.uniform(0.0, 1.0);
        if (rng.uniform() < 0.5)
            push_point(pc, u, v + noise * rng.normal(), noise * rng.normal(), label);
        else
            push_point(pc, u, noise * rng.normal(), v + noise * rng.normal(), label);
    }
}

// Sample a position on the composite's plane (label 0) or sphere (label 1).
void composite_sample(const CompositeLayout& lay, int obj, double noise, Rng& rng, double* p) {
    if (obj == 0) {
        p[0] = rng.uniform(-1.0, 1.0);
        p[1] = rng.uniform(-1.0, 1.0);
        p[2] = noise * rng.normal();
    } else {
        // sphere surface, kept above the floor
        for (;;) {
            double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
            double len = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (len < 1e-9) continue;
            double x = lay.cx + lay.r * dx / len;
            double y = lay.cy + lay.r * dy / len;
            double z = lay.h + lay.r * dz / len;
            if (z < -0.02) continue;
            p[0] = x + noise * rng.normal();
            p[1] = y + noise * rng.normal();
            p[2] = z + noise * rng.normal();
            return;
        }
    }
}

// Nearest point of the intersection circle to p.
void circle_anchor(const CompositeLayout& lay, const double* p, Rng& rng, double* q) {
    double vx = p[0] - lay.cx, vy = p[1] - lay.cy;
    double len = std::sqrt(vx * vx + vy * vy);
    double ang;
    if (len < 1e-9)
        ang = rng.uniform(0.0, 6.28318530717958647692);
    else
        ang = std::atan2(vy, vx);
    q[0] = lay.cx + lay.rho() * std::cos(ang);
    q[1] = lay.cy + lay.rho() * std::sin(ang);
    q[2] = 0.0;
}

// A point of the given object placed within jitter of the anchor q.
void band_point_on(const CompositeLayout& lay, int obj, const double* q, double jitter,
                   double noise, Rng& rng, double* out) {
    if (obj == 0) {
        out[0] = q[0] + jitter * rng.uniform(-1.0, 1.0);
        out[1] = q[1] + jitter * rng.uniform(-1.0, 1.0);
        out[2] = 0.2 * noise * rng.normal();
    } else {
        // surface point nearest the anchor (the anchor itself lies on the sphere)
        double dx = q[0] - lay.cx, dy = q[1] - lay.cy, dz = q[2] - lay.h;
        double len = std::sqrt(dx * dx + dy * dy + dz * dz);
        out[0] = lay.cx + lay.r * dx / len + jitter * rng.uniform(-1.0, 1.0);
        out[1] = lay.cy + lay.r * dy / len + jitter * rng.uniform(-1.0, 1.0);
        out[2] = lay.h + lay.r * dz / len + jitter * rng.uniform(-1.0, 1.0);
    }
}

void gen_composite(PointCloud& pc, const SceneSpec& spec, Rng& rng) {
    CompositeLayout lay;
    lay.cx = rng.uniform(-0.25, 0.25);
    lay.cy = rng.uniform(-0.25, 0.25);

    const int n = spec.points;
    // wide enough that the pair stays geometrically distinguishable, close
    // enough that each lands in the other's K-neighborhood
    const double pair_jitter = std::min(0.4 * spec.band_width, 0.035);
    while (pc.n < n) {
        int remaining = n - pc.n;
        int obj = rng.uniform() < 0.55 ? 0 : 1;
        double p[3];
        composite_sample(lay, obj, spec.noise, rng, p);
        bool in_band = band_distance(lay, p) < spec.band_width;
        if (in_band && remaining >= 2 && rng.uniform() < spec.contamination) {
            // replace the draw with a tight cross-label pair at the boundary
            double q[3], own[3], partner[3];
            circle_anchor(lay, p, rng, q);
            band_point_on(lay, obj, q, pair_jitter, spec.noise, rng, own);
            band_point_on(lay, 1 - obj, q, pair_jitter, spec.noise, rng, partner);
            push_point(pc, own[0], own[1], own[2], obj);
            push_point(pc, partner[0], partner[1], partner[2], 1 - obj);
        } else if (in_band && spec.contamination >= 1.0) {
            // full contamination pairs every band point; with an odd budget
            // left, resample until the draw lands outside the band
            continue;
        } else {
            push_point(pc, p[0], p[1], p[2], obj);
        }
    }
}

}  // namespace

double CompositeLayout::rho() const { return std::sqrt(r * r - h * h); }

CompositeLayout composite_layout(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x73636e65ULL));
    CompositeLayout lay;
    lay.cx = rng.uniform(-0.25, 0.25);
    lay.cy = rng.uniform(-0.25, 0.25);
    return lay;
}

double band_distance(const CompositeLayout& lay, const double* p) {
    double planar = std::hypot(p[0] - lay.cx, p[1] - lay.cy) - lay.rho();
    return std::hypot(planar, p[2]);
}

ShapeKind shape_kind_from_string(const std::string& name) {
    if (name == "plane") return ShapeKind::Plane;
    if (name == "sphere") return ShapeKind::Sphere;
    if (name == "corner") return ShapeKind::Corner;
    if (name == "composite") return ShapeKind::Composite;
    throw std::invalid_argument("unknown shape kind: " + name);
}

PointCloud gen_scene(const SceneSpec& spec, std::uint64_t seed) {
    if (spec.points < 64) throw std::invalid_argument("gen_scene: points per scene must be >= 64");
    if (spec.noise < 0.0 || spec.band_width < 0.0)
        throw std::invalid_argument("gen_scene: negative noise or band width");
    if (spec.contamination < 0.0 || spec.contamination > 1.0)
        throw std::invalid_argument("gen_scene: contamination out of [0,1]");

    Rng rng(Rng::mix(seed, 0x73636e65ULL));
    PointCloud pc;
    pc.c = 0;
    pc.positions.reserve(std::size_t(spec.points) * 3);

    switch (spec.kind) {
        case ShapeKind::Plane:
            pc.labels.reserve(std::size_t(spec.points));
            gen_plane(pc, spec.points, spec.noise, rng, 0);
            yaw_rotate(pc, rng.uniform(0.0, 6.28318530717958647692));
            break;
        case ShapeKind::Sphere:
            pc.labels.reserve(std::size_t(spec.points));
            gen_sphere(pc, spec.points, spec.noise, rng, 0);
            break;
        case ShapeKind::Corner:
            pc.labels.reserve(std::size_t(spec.points));
            gen_corner(pc, spec.points, spec.noise, rng, 0);
            yaw_rotate(pc, rng.uniform(0.0, 6.28318530717958647692));
            break;
        case ShapeKind::Composite:
            // gen_composite draws cx, cy first, matching composite_layout
            gen_composite(pc, spec, rng);
            break;
    }
    pc.validate();
    return pc;
}

Dataset make_dataset(const DataConfig& cfg, std::uint64_t seed, int count, int stream) {
    Dataset ds;
    ds.segmentation = cfg.segmentation();
    ds.num_classes = cfg.num_classes();

    if (cfg.source != "synth") {
        namespace fs = std::filesystem;
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(cfg.source))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw std::invalid_argument("make_dataset: no files in " + cfg.source);
        for (const auto& f : files) {
            Scene sc;
            sc.cloud = read_point_cloud(f);
            if (ds.segmentation) {
                if (!sc.cloud.labeled())
                    throw std::invalid_argument("make_dataset: unlabeled cloud " + f);
                sc.label = -1;
            } else {
                if (!sc.cloud.labeled() || sc.cloud.labels.empty())
                    throw std::invalid_argument("make_dataset: missing class label in " + f);
                sc.label = sc.cloud.labels[0];
            }
            ds.scenes.push_back(std::move(sc));
        }
        return ds;
    }

    for (int i = 0; i < count; ++i) {
        SceneSpec spec;
        spec.points = cfg.points;
        spec.noise = cfg.noise;
        spec.band_width = cfg.band_width;
        spec.contamination = cfg.contamination;
        std::uint64_t scene_seed = Rng::mix(Rng::mix(seed, 0xd0000 + std::uint64_t(stream)), std::uint64_t(i));
        Scene sc;
        if (ds.segmentation) {
            spec.kind = ShapeKind::Composite;
            sc.label = -1;
        } else {
            int cls = i % int(cfg.shapes.size());
            spec.kind = shape_kind_from_string(cfg.shapes[std::size_t(cls)]);
            sc.label = cls;
        }
        sc.cloud = gen_scene(spec, scene_seed);
        if (!ds.segmentation) sc.cloud.labels.assign(std::size_t(sc.cloud.n), sc.label);
        ds.scenes.push_back(std::move(sc));
    }
    return ds;
}

PointCloud augment_cloud(const PointCloud& cloud, double yaw, double scale) {
    PointCloud out = cloud;
    yaw_rotate(out, yaw);
    for (auto& v : out.positions) v *= scale;
    return out;
}

}  // namespace pointcra
