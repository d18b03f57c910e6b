#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointcra/geom.hpp"

namespace pointcra {

enum class ShapeKind { Plane, Sphere, Corner, Composite };

ShapeKind shape_kind_from_string(const std::string& name);

// Generation recipe for one scene. Composite scenes carry per-point labels
// (0 plane, 1 sphere) and realize contamination by planting cross-label point
// pairs inside the boundary band.
struct SceneSpec {
    ShapeKind kind = ShapeKind::Plane;
    int points = 512;
    double noise = 0.02;
    double band_width = 0.08;
    double contamination = 0.0;
};

PointCloud gen_scene(const SceneSpec& spec, std::uint64_t seed);

// Distance from a point to the plane/sphere intersection circle of a
// composite scene with the given parameters. Exposed for the band audit.
struct CompositeLayout {
    double cx = 0.0, cy = 0.0;  // sphere center in the plane
    double r = 0.45;            // sphere radius
    double h = 0.27;            // center height (penetrating, h < r)
    double rho() const;         // intersection circle radius
};
CompositeLayout composite_layout(std::uint64_t seed);
double band_distance(const CompositeLayout& lay, const double* p);

struct Scene {
    PointCloud cloud;
    int label = -1;  // scene class for classification, -1 for segmentation
};

struct Dataset {
    std::vector<Scene> scenes;
    int num_classes = 0;
    bool segmentation = false;
};

struct DataConfig {
    std::string task = "classification";  // or "segmentation"
    int scenes = 200;
    int test_scenes = 50;
    int points = 512;
    double noise = 0.02;
    double band_width = 0.08;
    double contamination = 0.0;
    std::vector<std::string> shapes{"plane", "sphere", "corner"};
    bool augment = false;
    std::string source = "synth";  // or a directory of point cloud files

    bool segmentation() const { return task == "segmentation"; }
    int num_classes() const { return segmentation() ? 2 : int(shapes.size()); }
};

// stream 0 = train split, stream 1 = test split
Dataset make_dataset(const DataConfig& cfg, std::uint64_t seed, int count, int stream);

// Yaw rotation by angle plus uniform scale, the only augmentations used.
PointCloud augment_cloud(const PointCloud& cloud, double yaw, double scale);

}  // namespace pointcra
