#pragma once

#include <span>
#include <vector>

#include "pointcra/geom.hpp"

// Plain serial implementations written independently of the parallel kernels.
// Tests compare the two and the bench tool times them against each other.
namespace pointcra::ref {

std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, int seed_index);

NeighborhoodIndex knn(std::span<const double> query_pos, int nq,
                      std::span<const double> ref_pos, int nr, int k);

NeighborhoodIndex ball_query(std::span<const double> query_pos, int nq,
                             std::span<const double> ref_pos, int nr,
                             double radius, int max_k);

Grouped group(const PointCloud& source, const NeighborhoodIndex& index);

// c[r x n] = a[r x k] * b[k x n], naive triple loop
void matmul(const double* a, const double* b, double* c, int r, int k, int n);

}  // namespace pointcra::ref
