#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointcra/geom.hpp"

namespace pointcra {

// Text format: header line "#pts N dims C labeled {0|1}", then one point per
// line as "x y z f1 .. fC [label]".
PointCloud read_point_cloud(const std::string& path);
void write_point_cloud(const std::string& path, const PointCloud& cloud);

// Flat little-endian float64 arrays behind a single JSON manifest line.
// Used for both parameter checkpoints and intermediate dumps.
struct NamedArray {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<double> data;
};

void write_array_bundle(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_array_bundle(const std::string& path);

}  // namespace pointcra
