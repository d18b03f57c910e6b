#pragma once

#include <span>
#include <vector>

namespace pointcra {

// Coordinates plus a per point feature matrix and optional class labels.
struct PointCloud {
    int n = 0;
    int c = 0;
    std::vector<double> positions;  // row major n x 3
    std::vector<double> features;   // row major n x c
    std::vector<int> labels;        // empty, or one label per point

    bool labeled() const { return !labels.empty(); }
    const double* pos(int i) const { return positions.data() + 3 * std::size_t(i); }
    const double* feat(int i) const { return features.data() + std::size_t(c) * i; }

    // Throws std::invalid_argument on dimension mismatch or non finite entries.
    void validate() const;
};

// K neighbor indices per center, all indexing one source cloud. Rows with
// fewer than k distinct candidates are padded by repeating a valid index.
struct NeighborhoodIndex {
    std::vector<int> centers;    // m entries
    std::vector<int> neighbors;  // row major m x k
    int k = 0;

    int m() const { return int(centers.size()); }
    const int* row(int i) const { return neighbors.data() + std::size_t(k) * i; }
};

// Neighbor features and center-minus-neighbor offsets gathered per row.
struct Grouped {
    int m = 0;
    int k = 0;
    int c = 0;
    std::vector<double> rel_pos;   // m x k x 3
    std::vector<double> features;  // m x k x c
};

// Greedy max-min subset selection. The first pick is seed_index, ties go to
// the lowest index. Deterministic for any thread count.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, int seed_index);

// For each query, the k reference indices with smallest Euclidean distance.
// Equal distances break to the lowest index; short references pad with the
// nearest index.
NeighborhoodIndex knn(std::span<const double> query_pos, int nq,
                      std::span<const double> ref_pos, int nr, int k);

// Up to max_k references within radius, in index order, padded with the first
// in-radius index. Queries with nothing in radius fall back to the nearest
// reference repeated.
NeighborhoodIndex ball_query(std::span<const double> query_pos, int nq,
                             std::span<const double> ref_pos, int nr,
                             double radius, int max_k);

// Gathers neighbor features and relative positions (center minus neighbor).
Grouped group(const PointCloud& source, const NeighborhoodIndex& index);

double squared_dist3(const double* a, const double* b);

}  // namespace pointcra
