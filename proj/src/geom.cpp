#include "pointcra/geom.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "pointcra/parallel.hpp"

namespace pointcra {

double squared_dist3(const double* a, const double* b) {
    double dx = a[0] - b[0];
    double dy = a[1] - b[1];
    double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

void PointCloud::validate() const {
    if (n < 1) throw std::invalid_argument("PointCloud: n must be >= 1");
    if (positions.size() != std::size_t(n) * 3)
        throw std::invalid_argument("PointCloud: positions size mismatch");
    if (features.size() != std::size_t(n) * c)
        throw std::invalid_argument("PointCloud: features size mismatch");
    if (!labels.empty() && labels.size() != std::size_t(n))
        throw std::invalid_argument("PointCloud: labels size mismatch");
    for (double v : positions)
        if (!std::isfinite(v)) throw std::invalid_argument("PointCloud: non-finite position");
    for (double v : features)
        if (!std::isfinite(v)) throw std::invalid_argument("PointCloud: non-finite feature");
}

std::vector<int> farthest_point_sample(const PointCloud& cloud, int m, int seed_index) {
    const int n = cloud.n;
    if (m < 1 || m > n)
        throw std::invalid_argument("farthest_point_sample: m out of range [1, n]");
    if (seed_index < 0 || seed_index >= n)
        throw std::invalid_argument("farthest_point_sample: seed_index out of range");

    std::vector<int> picked;
    picked.reserve(m);
    picked.push_back(seed_index);

    // min squared distance from each point to the picked set
    std::vector<double> min_d2(n);
    const double* seed = cloud.pos(seed_index);
    parallel_for(n, [&](std::int64_t j) { min_d2[j] = squared_dist3(cloud.pos(int(j)), seed); });

    for (int t = 1; t < m; ++t) {
        // serial argmax keeps the lowest-index tie rule exact
        int best = 0;
        double best_d2 = min_d2[0];
        for (int j = 1; j < n; ++j) {
            if (min_d2[j] > best_d2) {
                best_d2 = min_d2[j];
                best = j;
            }
        }
        picked.push_back(best);
        const double* p = cloud.pos(best);
        parallel_for(n, [&](std::int64_t j) {
            double d2 = squared_dist3(cloud.pos(int(j)), p);
            if (d2 < min_d2[j]) min_d2[j] = d2;
        });
    }
    return picked;
}

NeighborhoodIndex knn(std::span<const double> query_pos, int nq,
                      std::span<const double> ref_pos, int nr, int k) {
    if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
    if (nr < 1) throw std::invalid_argument("knn: empty reference");

    NeighborhoodIndex out;
    out.k = k;
    out.centers.resize(nq);
    out.neighbors.assign(std::size_t(nq) * k, 0);
    for (int i = 0; i < nq; ++i) out.centers[i] = i;

    const int kept = k < nr ? k : nr;
    parallel_for(nq, [&](std::int64_t qi) {
        const double* q = query_pos.data() + 3 * qi;
        // insertion selection over (d2, index), lexicographic
        std::vector<double> bd(kept, std::numeric_limits<double>::infinity());
        std::vector<int> bi(kept, -1);
        for (int j = 0; j < nr; ++j) {
            double d2 = squared_dist3(q, ref_pos.data() + 3 * std::size_t(j));
            int pos = kept;
            while (pos > 0 && (d2 < bd[pos - 1] || (d2 == bd[pos - 1] && j < bi[pos - 1]))) --pos;
            if (pos < kept) {
                for (int s = kept - 1; s > pos; --s) {
                    bd[s] = bd[s - 1];
                    bi[s] = bi[s - 1];
                }
                bd[pos] = d2;
                bi[pos] = j;
            }
        }
        int* row = out.neighbors.data() + std::size_t(k) * qi;
        for (int s = 0; s < kept; ++s) row[s] = bi[s];
        for (int s = kept; s < k; ++s) row[s] = bi[0];  // pad with the nearest
    });
    return out;
}

NeighborhoodIndex ball_query(std::span<const double> query_pos, int nq,
                             std::span<const double> ref_pos, int nr,
                             double radius, int max_k) {
    if (radius <= 0.0) throw std::invalid_argument("ball_query: radius must be > 0");
    if (max_k < 1) throw std::invalid_argument("ball_query: max_k must be >= 1");
    if (nr < 1) throw std::invalid_argument("ball_query: empty reference");

    const double r2 = radius * radius;
    NeighborhoodIndex out;
    out.k = max_k;
    out.centers.resize(nq);
    out.neighbors.assign(std::size_t(nq) * max_k, 0);
    for (int i = 0; i < nq; ++i) out.centers[i] = i;

    parallel_for(nq, [&](std::int64_t qi) {
        const double* q = query_pos.data() + 3 * qi;
        int* row = out.neighbors.data() + std::size_t(max_k) * qi;
        int cnt = 0;
        for (int j = 0; j < nr && cnt < max_k; ++j) {
            if (squared_dist3(q, ref_pos.data() + 3 * std::size_t(j)) <= r2) row[cnt++] = j;
        }
        if (cnt == 0) {
            // isolated query: repeat the single nearest reference
            int best = 0;
            double best_d2 = squared_dist3(q, ref_pos.data());
            for (int j = 1; j < nr; ++j) {
                double d2 = squared_dist3(q, ref_pos.data() + 3 * std::size_t(j));
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = j;
                }
            }
            for (int s = 0; s < max_k; ++s) row[s] = best;
        } else {
            for (int s = cnt; s < max_k; ++s) row[s] = row[0];
        }
    });
    return out;
}

Grouped group(const PointCloud& source, const NeighborhoodIndex& index) {
    const int m = index.m();
    const int k = index.k;
    const int c = source.c;
    for (int ci : index.centers)
        if (ci < 0 || ci >= source.n) throw std::invalid_argument("group: center index out of range");
    for (int ni : index.neighbors)
        if (ni < 0 || ni >= source.n) throw std::invalid_argument("group: neighbor index out of range");

    Grouped g;
    g.m = m;
    g.k = k;
    g.c = c;
    g.rel_pos.resize(std::size_t(m) * k * 3);
    g.features.resize(std::size_t(m) * k * c);
    parallel_for(m, [&](std::int64_t i) {
        const double* cp = source.pos(index.centers[i]);
        const int* row = index.row(int(i));
        for (int j = 0; j < k; ++j) {
            const double* np = source.pos(row[j]);
            double* rp = g.rel_pos.data() + (std::size_t(i) * k + j) * 3;
            rp[0] = cp[0] - np[0];
            rp[1] = cp[1] - np[1];
            rp[2] = cp[2] - np[2];
            const double* nf = source.feat(row[j]);
            double* gf = g.features.data() + (std::size_t(i) * k + j) * c;
            for (int d = 0; d < c; ++d) gf[d] = nf[d];
        }
    });
    return g;
}

}  // namespace pointcra
