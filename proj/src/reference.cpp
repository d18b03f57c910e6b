#include "pointcra/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pointcra::ref {

namespace {

double d2(const double* a, const double* b) {
    double s = 0.0;
    for (int t = 0; t < 3; ++t) {
        double d = a[t] - b[t];
        s += d * d;
    }
    return s;
}

}  // namespace

std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, int seed_index) {
    if (m < 1 || m > cloud.n) throw std::invalid_argument("ref::fps: m out of range");
    if (seed_index < 0 || seed_index >= cloud.n) throw std::invalid_argument("ref::fps: bad seed");
    std::vector<int> picked{seed_index};
    while (int(picked.size()) < m) {
        int best = -1;
        double best_d = -1.0;
        for (int j = 0; j < cloud.n; ++j) {
            // distance to the picked set, recomputed from scratch every step
            double dmin = std::numeric_limits<double>::infinity();
            for (int p : picked) dmin = std::min(dmin, d2(cloud.pos(j), cloud.pos(p)));
            if (dmin > best_d) {
                best_d = dmin;
                best = j;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

NeighborhoodIndex knn(std::span<const double> query_pos, int nq,
                      std::span<const double> ref_pos, int nr, int k) {
    if (k < 1) throw std::invalid_argument("ref::knn: k must be >= 1");
    if (nr < 1) throw std::invalid_argument("ref::knn: empty reference");
    NeighborhoodIndex out;
    out.k = k;
    out.centers.resize(nq);
    out.neighbors.resize(std::size_t(nq) * k);
    for (int i = 0; i < nq; ++i) out.centers[i] = i;
    for (int qi = 0; qi < nq; ++qi) {
        std::vector<std::pair<double, int>> all(nr);
        for (int j = 0; j < nr; ++j)
            all[j] = {d2(query_pos.data() + 3 * std::size_t(qi), ref_pos.data() + 3 * std::size_t(j)), j};
        std::stable_sort(all.begin(), all.end());
        for (int s = 0; s < k; ++s)
            out.neighbors[std::size_t(qi) * k + s] = s < nr ? all[s].second : all[0].second;
    }
    return out;
}

NeighborhoodIndex ball_query(std::span<const double> query_pos, int nq,
                             std::span<const double> ref_pos, int nr,
                             double radius, int max_k) {
    if (radius <= 0.0) throw std::invalid_argument("ref::ball_query: radius must be > 0");
    if (max_k < 1) throw std::invalid_argument("ref::ball_query: max_k must be >= 1");
    if (nr < 1) throw std::invalid_argument("ref::ball_query: empty reference");
    NeighborhoodIndex out;
    out.k = max_k;
    out.centers.resize(nq);
    out.neighbors.resize(std::size_t(nq) * max_k);
    for (int i = 0; i < nq; ++i) out.centers[i] = i;
    for (int qi = 0; qi < nq; ++qi) {
        const double* q = query_pos.data() + 3 * std::size_t(qi);
        std::vector<int> in;
        for (int j = 0; j < nr; ++j)
            if (d2(q, ref_pos.data() + 3 * std::size_t(j)) <= radius * radius) in.push_back(j);
        int* row = out.neighbors.data() + std::size_t(qi) * max_k;
        if (in.empty()) {
            std::vector<std::pair<double, int>> all(nr);
            for (int j = 0; j < nr; ++j) all[j] = {d2(q, ref_pos.data() + 3 * std::size_t(j)), j};
            int best = std::min_element(all.begin(), all.end())->second;
            for (int s = 0; s < max_k; ++s) row[s] = best;
        } else {
            for (int s = 0; s < max_k; ++s) row[s] = s < int(in.size()) ? in[s] : in[0];
        }
    }
    return out;
}

Grouped group(const PointCloud& source, const NeighborhoodIndex& index) {
    Grouped g;
    g.m = index.m();
    g.k = index.k;
    g.c = source.c;
    g.rel_pos.resize(std::size_t(g.m) * g.k * 3);
    g.features.resize(std::size_t(g.m) * g.k * g.c);
    for (int i = 0; i < g.m; ++i) {
        for (int j = 0; j < g.k; ++j) {
            int nidx = index.neighbors[std::size_t(i) * g.k + j];
            for (int t = 0; t < 3; ++t)
                g.rel_pos[(std::size_t(i) * g.k + j) * 3 + t] =
                    source.positions[3 * std::size_t(index.centers[i]) + t] -
                    source.positions[3 * std::size_t(nidx) + t];
            for (int d = 0; d < g.c; ++d)
                g.features[(std::size_t(i) * g.k + j) * g.c + d] =
                    source.features[std::size_t(source.c) * nidx + d];
        }
    }
    return g;
}

void matmul(const double* a, const double* b, double* c, int r, int k, int n) {
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += a[std::size_t(i) * k + t] * b[std::size_t(t) * n + j];
            c[std::size_t(i) * n + j] = acc;
        }
}

}  // namespace pointcra::ref
