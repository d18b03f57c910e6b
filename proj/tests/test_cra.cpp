#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pointcra/cra.hpp"
#include "pointcra/rng.hpp"

using namespace pointcra;

namespace {

NeighborhoodIndex self_pairs(int m, int k, const std::vector<int>& neighbors) {
    NeighborhoodIndex idx;
    idx.k = k;
    idx.centers.resize(std::size_t(m));
    for (int i = 0; i < m; ++i) idx.centers[std::size_t(i)] = i;
    idx.neighbors = neighbors;
    return idx;
}

}  // namespace

TEST_SUITE_BEGIN("cra");

TEST_CASE("transitions subtract consecutive stage features") {
    // one point, one channel, f = (1, 3, 2)
    std::vector<Tensor> seq{Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {3.0}),
                            Tensor::from({1, 1}, {2.0})};
    auto idx = self_pairs(1, 1, {0});
    TrendDeltas d = trend_deltas(seq, idx);
    CHECK(d.trans.value() == std::vector<double>{2.0, -1.0});
    // the single self-neighborhood removes its own mean entirely
    CHECK(d.nbr.value() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("neighborhood mean removal") {
    // two points with per-step t values 2 and 4; center 0 sees both
    std::vector<Tensor> seq{Tensor::from({2, 1}, {0.0, 0.0}), Tensor::from({2, 1}, {2.0, 4.0})};
    auto idx = self_pairs(1, 2, {0, 1});
    idx.centers = {0};
    TrendDeltas d = trend_deltas(seq, idx);
    CHECK(d.nbr.value()[0] == doctest::Approx(-1.0));
    CHECK(d.nbr.value()[1] == doctest::Approx(1.0));
    CHECK(d.center.value()[0] == doctest::Approx(-1.0));
}

TEST_CASE("constant sequences have zero transitions and deltas") {
    Tensor f = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    std::vector<Tensor> seq{f, f, f};
    auto idx = self_pairs(3, 2, {0, 1, 1, 2, 2, 0});
    TrendDeltas d = trend_deltas(seq, idx);
    for (double v : d.trans.value()) CHECK(v == 0.0);
    for (double v : d.nbr.value()) CHECK(v == 0.0);
}

TEST_CASE("trend deltas sum to zero over each neighborhood") {
    Rng rng(6);
    const int m = 5, k = 4, c = 3, L = 3;
    std::vector<Tensor> seq;
    for (int l = 0; l < L; ++l) {
        std::vector<double> v(std::size_t(m * c), 0.0);
        for (auto& x : v) x = rng.normal();
        seq.push_back(Tensor::from({m, c}, std::move(v)));
    }
    std::vector<int> nbr(std::size_t(m * k), 0);
    for (auto& j : nbr) j = rng.uniform_int(m);
    TrendDeltas d = trend_deltas(seq, self_pairs(m, k, nbr));
    const auto& dv = d.nbr.value();
    for (int i = 0; i < m; ++i)
        for (int t = 0; t < (L - 1) * c; ++t) {
            double s = 0.0;
            for (int j = 0; j < k; ++j) s += dv[std::size_t((i * k + j) * (L - 1) * c + t)];
            CHECK(std::fabs(s) < 1e-9);
        }
}

TEST_CASE("trend similarity needs at least two stages") {
    std::vector<Tensor> seq{Tensor::from({1, 1}, {1.0})};
    CHECK_THROWS_AS((void)trend_deltas(seq, self_pairs(1, 1, {0})), std::invalid_argument);
}

TEST_CASE("group cosine hand example") {
    // L=3 (two steps), C=2, G=2: center steps {(1,0),(0,1)}, neighbor {(1,0),(1,0)}
    TrendDeltas d;
    d.center = Tensor::from({1, 4}, {1, 0, 0, 1});
    d.nbr = Tensor::from({1, 1, 4}, {1, 0, 1, 0});
    d.steps = 2;
    d.channels = 2;
    Tensor s = trend_similarity(d, 2, false);
    CHECK(s.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("parallel and antiparallel deltas give plus and minus one") {
    Rng rng(8);
    std::vector<double> v(8, 0.0);
    for (auto& x : v) x = rng.uniform(0.2, 1.0);
    TrendDeltas d;
    d.center = Tensor::from({1, 8}, v);
    d.nbr = Tensor::from({1, 1, 8}, v);
    d.steps = 2;
    d.channels = 4;
    Tensor s = trend_similarity(d, 4, false);
    CHECK(s.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> neg = v;
    for (auto& x : neg) x = -x;
    d.nbr = Tensor::from({1, 1, 8}, neg);
    Tensor s2 = trend_similarity(d, 4, false);
    CHECK(s2.value()[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("zero-norm sub-vectors contribute zero") {
    TrendDeltas d;
    d.center = Tensor::from({1, 2}, {0.0, 0.0});
    d.nbr = Tensor::from({1, 1, 2}, {1.0, 1.0});
    d.steps = 1;
    d.channels = 2;
    CHECK(trend_similarity(d, 2, false).value()[0] == 0.0);
}

TEST_CASE("similarity stays in [-1, 1] and group padding runs") {
    Rng rng(14);
    for (int trial = 0; trial < 200; ++trial) {
        int m = 1 + rng.uniform_int(3), k = 1 + rng.uniform_int(4);
        int c = 1 + rng.uniform_int(7), steps = 1 + rng.uniform_int(3);
        int g = 1 + rng.uniform_int(4);
        TrendDeltas d;
        std::vector<double> cv(std::size_t(m * steps * c), 0.0), nv(std::size_t(m * k * steps * c), 0.0);
        for (auto& x : cv) x = rng.normal();
        for (auto& x : nv) x = rng.normal();
        d.center = Tensor::from({m, std::int64_t(steps) * c}, cv);
        d.nbr = Tensor::from({m, k, std::int64_t(steps) * c}, nv);
        d.steps = steps;
        d.channels = c;
        Tensor s = trend_similarity(d, g, false);
        for (double v : s.value()) {
            CHECK(v <= 1.0 + 1e-12);
            CHECK(v >= -1.0 - 1e-12);
        }
    }
}

TEST_CASE("scalar sign mode recovers sign agreement at G=1") {
    TrendDeltas d;
    d.center = Tensor::from({1, 2}, {0.5, -0.25});
    d.nbr = Tensor::from({1, 1, 2}, {2.0, 1.0});
    d.steps = 1;
    d.channels = 2;
    Tensor s = trend_similarity(d, 1, true);
    CHECK(s.value()[0] == doctest::Approx(1.0));   // same sign
    CHECK(s.value()[1] == doctest::Approx(-1.0));  // opposite sign
    // group cosine at G=1 agrees on the sign
    Tensor sc = trend_similarity(d, 1, false);
    CHECK(sc.value()[0] == doctest::Approx(1.0));
    CHECK(sc.value()[1] == doctest::Approx(-1.0));
}

TEST_CASE("pd aggregation examples") {
    Tensor ones = Tensor::from({1, 2, 3}, std::vector<double>(6, 1.0));
    Tensor pd1 = pd_aggregate(ones, 6, 2);
    CHECK(pd1.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
    Tensor zeros = Tensor::zeros({1, 2, 3});
    Tensor pd0 = pd_aggregate(zeros, 6, 2);
    CHECK(pd0.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pd aggregation matches a per-row mean oracle, padded groups weighted") {
    Rng rng(21);
    const int m = 3, k = 2, c = 5, g = 2;  // groups of sizes 2,2,1
    const int gn = group_count(c, g);
    std::vector<double> pc(std::size_t(m * k * gn), 0.0);
    for (auto& v : pc) v = rng.uniform(-1.0, 1.0);
    Tensor pd = pd_aggregate(Tensor::from({m, k, gn}, pc), c, g);
    for (int r = 0; r < m * k; ++r) {
        // broadcast to channels by hand, then mean
        double s = 0.0;
        for (int d = 0; d < c; ++d) s += pc[std::size_t(r * gn + d / g)];
        double want = 0.5 * (s / c + 1.0);
        CHECK(pd.value()[std::size_t(r)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("homogeneity examples and oracle") {
    Tensor flat = Tensor::from({1, 4}, {0.3, 0.3, 0.3, 0.3});
    CHECK(homogeneity(flat).value()[0] == 0.0);

    Tensor halves = Tensor::from({1, 4}, {0.0, 1.0, 0.0, 1.0});
    CHECK(homogeneity(halves).value()[0] ==
          doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));

    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        int k = 2 + rng.uniform_int(6);
        std::vector<double> row(std::size_t(k), 0.0);
        for (auto& v : row) v = rng.uniform();
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= k;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= k;
        Tensor pn = homogeneity(Tensor::from({1, k}, row));
        CHECK(pn.value()[0] == doctest::Approx(1.0 - std::exp(-var / 0.25)).epsilon(1e-12));
        CHECK(pn.value()[0] >= 0.0);
        CHECK(pn.value()[0] < 1.0);
    }
}

TEST_CASE("gamma identities") {
    CHECK(gamma_exponent(0.7, 0.7, 1.0) == 1.0);  // exp(0) exactly
    CHECK(gamma_exponent(0.0, 0.7, 1.0) == doctest::Approx(std::exp(0.7)).epsilon(1e-15));
    // strictly decreasing in pn
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        double a = rng.uniform(0.0, 0.95), b = rng.uniform(0.0, 0.95);
        if (a == b) continue;
        double lo = std::min(a, b), hi = std::max(a, b);
        CHECK(gamma_exponent(lo, 0.7, 1.3) > gamma_exponent(hi, 0.7, 1.3));
    }
}

TEST_CASE("pd calibration identities") {
    const double eps = 1e-6;
    Tensor pd = Tensor::from({1, 3}, {0.2, 0.5, 0.9});
    Tensor pn_at_zeta = Tensor::from({1}, {0.7});
    Tensor cal = calibrate_pd(pd, pn_at_zeta, 0.7, 1.0, eps);
    for (int j = 0; j < 3; ++j)
        CHECK(cal.value()[std::size_t(j)] ==
              doctest::Approx(pd.value()[std::size_t(j)] + eps).epsilon(1e-15));

    // unit base is a fixed point for any exponent
    Tensor pd1 = Tensor::from({1, 1}, {1.0 - eps});
    Tensor pn0 = Tensor::from({1}, {0.0});
    CHECK(calibrate_pd(pd1, pn0, 0.7, 1.0, eps).value()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("sharpening direction under gamma greater than one") {
    Rng rng(44);
    for (int t = 0; t < 100; ++t) {
        double p1 = rng.uniform(0.01, 0.97);
        double p2 = std::min(0.99, p1 + rng.uniform(0.01, 0.5));
        double pn = rng.uniform(0.0, 0.6);  // gamma > 1 region for zeta=0.7
        Tensor pd = Tensor::from({1, 2}, {p1, p2});
        Tensor pnt = Tensor::from({1}, {pn});
        Tensor cal = calibrate_pd(pd, pnt, 0.7, 1.0, 1e-6);
        CHECK(cal.value()[0] / cal.value()[1] < p1 / p2);
    }
}

TEST_CASE("learnable scaling examples") {
    Tensor a = Tensor::from({1}, {1.0});
    Tensor b = Tensor::from({1}, {0.0});
    Tensor c = Tensor::from({1}, {1.0});
    Tensor pc0 = Tensor::zeros({1, 1, 1});
    CHECK(scale_pc(pc0, a, b, c).value()[0] == doctest::Approx(0.0).epsilon(1e-15));

    Tensor pc1 = Tensor::from({1, 1, 1}, {1.0});
    double sig1 = 1.0 / (1.0 + std::exp(-1.0));
    CHECK(scale_pc(pc1, a, b, c).value()[0] == doctest::Approx(sig1 - 0.5).epsilon(1e-12));
    CHECK(scale_pc(pc1, a, b, c).value()[0] == doctest::Approx(0.231059).epsilon(1e-5));
}

TEST_CASE("group broadcast keeps member channels exactly equal") {
    Rng rng(50);
    const int m = 2, k = 3, c = 7, g = 3;
    const int gn = group_count(c, g);
    std::vector<double> pc(std::size_t(m * k * gn), 0.0);
    for (auto& v : pc) v = rng.normal();
    Tensor full = broadcast_groups(Tensor::from({m, k, gn}, pc), c, g);
    for (int r = 0; r < m * k; ++r)
        for (int d = 0; d < c; ++d)
            CHECK(full.value()[std::size_t(r * c + d)] == pc[std::size_t(r * gn + d / g)]);
}

TEST_CASE("final weights multiply and broadcast") {
    Rng rng(51);
    const int m = 2, k = 2, c = 3;
    std::vector<double> pcs(std::size_t(m * k * c), 0.0), pdc(std::size_t(m * k), 0.0);
    for (auto& v : pcs) v = rng.normal();
    for (auto& v : pdc) v = rng.uniform();
    Tensor w = final_weights(Tensor::from({m, k}, pdc), Tensor::from({m, k, c}, pcs));
    for (int r = 0; r < m * k; ++r)
        for (int d = 0; d < c; ++d)
            CHECK(w.value()[std::size_t(r * c + d)] ==
                  doctest::Approx(pcs[std::size_t(r * c + d)] * pdc[std::size_t(r)]).epsilon(1e-15));

    Tensor ones = Tensor::from({m, k}, std::vector<double>(std::size_t(m * k), 1.0));
    Tensor w1 = final_weights(ones, Tensor::from({m, k, c}, pcs));
    CHECK(w1.value() == pcs);
    Tensor zeros = Tensor::zeros({m, k, c});
    Tensor w0 = final_weights(Tensor::from({m, k}, pdc), zeros);
    for (double v : w0.value()) CHECK(v == 0.0);
}

TEST_CASE("weighted aggregate is the unnormalized weighted mean") {
    Tensor w = Tensor::from({1, 2, 1}, {1.0, 1.0});
    Tensor f = Tensor::from({1, 2, 1}, {2.0, 4.0});
    CHECK(weighted_aggregate(w, f).value()[0] == doctest::Approx(3.0));

    Tensor w2 = Tensor::from({1, 2, 1}, {1.0, 0.0});
    CHECK(weighted_aggregate(w2, f).value()[0] == doctest::Approx(1.0));  // sum 2 over k=2
}

TEST_CASE("neighbor permutation permutes w rows and keeps the aggregate bit-identical") {
    Rng rng(60);
    const int m = 3, k = 5, c = 4, L = 3;
    std::vector<Tensor> seq;
    for (int l = 0; l < L; ++l) {
        std::vector<double> v(std::size_t(m * c), 0.0);
        for (auto& x : v) x = rng.normal();
        seq.push_back(Tensor::from({m, c}, std::move(v)));
    }
    std::vector<int> nbr(std::size_t(m * k), 0);
    for (auto& j : nbr) j = rng.uniform_int(m);
    std::vector<double> fv(std::size_t(m * c), 0.0);
    for (auto& x : fv) x = rng.normal();
    Tensor feats = Tensor::from({m, c}, fv);

    CraParams params;
    params.a = Tensor::from({2}, {1.0, 1.0});
    params.b = Tensor::from({2}, {0.0, 0.0});
    params.c = Tensor::from({2}, {0.5, 0.5});
    CraSettings st;
    st.group_size = 2;
    CraVariant var;

    auto run = [&](const std::vector<int>& order) {
        auto idx = self_pairs(m, k, order);
        std::vector<int> gi(order.begin(), order.end());
        Tensor grouped = gather_rows(feats, gi, m, k);
        CraIntermediates inter;
        Tensor w;
        Tensor agg = cra_aggregate(seq, idx, grouped, params, st, var, &inter, &w);
        return std::pair{agg.value(), w.value()};
    };

    auto base = run(nbr);
    // permute the neighbor order of center 1
    std::vector<int> permuted = nbr;
    std::vector<int> order{4, 2, 0, 3, 1};
    for (int j = 0; j < k; ++j)
        permuted[std::size_t(1 * k + j)] = nbr[std::size_t(1 * k + order[std::size_t(j)])];
    auto perm = run(permuted);

    CHECK(base.first == perm.first);  // aggregate bit-identical
    for (int j = 0; j < k; ++j)
        for (int d = 0; d < c; ++d)
            CHECK(perm.second[std::size_t((1 * k + j) * c + d)] ==
                  base.second[std::size_t((1 * k + order[std::size_t(j)]) * c + d)]);
}

TEST_CASE("identical feature sequences hit the homogeneous fixed point") {
    const int m = 4, k = 3, c = 4, L = 3;
    std::vector<Tensor> seq;
    for (int l = 0; l < L; ++l) {
        // same row repeated for every point
        std::vector<double> v;
        for (int i = 0; i < m; ++i)
            for (int d = 0; d < c; ++d) v.push_back(0.3 * (l + 1) + 0.1 * d);
        seq.push_back(Tensor::from({m, c}, std::move(v)));
    }
    std::vector<int> nbr{0, 1, 2, 1, 2, 3, 2, 3, 0, 3, 0, 1};
    auto idx = self_pairs(m, k, nbr);
    TrendDeltas d = trend_deltas(seq, idx);
    for (double v : d.nbr.value()) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
    Tensor s = trend_similarity(d, 2, false);
    for (double v : s.value()) CHECK(v == 0.0);
    Tensor pd = pd_aggregate(s, c, 2);
    Tensor pn = homogeneity(pd);
    for (double v : pn.value()) CHECK(v == 0.0);
}

TEST_CASE("cra aggregate is pure and exposes correctly shaped intermediates") {
    Rng rng(71);
    const int m = 4, k = 3, c = 6, L = 2, g = 4;
    std::vector<Tensor> seq;
    for (int l = 0; l < L; ++l) {
        std::vector<double> v(std::size_t(m * c), 0.0);
        for (auto& x : v) x = rng.normal();
        seq.push_back(Tensor::from({m, c}, std::move(v)));
    }
    std::vector<int> nbr(std::size_t(m * k), 0);
    for (auto& j : nbr) j = rng.uniform_int(m);
    auto idx = self_pairs(m, k, nbr);
    std::vector<int> gi(nbr.begin(), nbr.end());
    Tensor grouped = gather_rows(seq.back(), gi, m, k);

    const int gn = group_count(c, g);
    CraParams params;
    params.a = Tensor::from({gn}, std::vector<double>(std::size_t(gn), 1.0));
    params.b = Tensor::zeros({gn});
    params.c = Tensor::from({gn}, std::vector<double>(std::size_t(gn), 0.5));
    CraSettings st;
    st.group_size = g;
    CraVariant var;

    CraIntermediates i1, i2;
    Tensor a1 = cra_aggregate(seq, idx, grouped, params, st, var, &i1);
    Tensor a2 = cra_aggregate(seq, idx, grouped, params, st, var, &i2);
    CHECK(a1.value() == a2.value());
    CHECK(a1.shape() == Shape{m, c});
    CHECK(i1.pc.size() == std::size_t(m * k * gn));
    CHECK(i1.pd.size() == std::size_t(m * k));
    CHECK(i1.pn.size() == std::size_t(m));
    CHECK(i1.w.size() == std::size_t(m * k * c));
    for (double v : i1.w) CHECK(std::isfinite(v));
    for (std::size_t t = 0; t < i1.pd.size(); ++t) {
        CHECK(i1.pd[t] >= 0.0);
        CHECK(i1.pd[t] <= 1.0);
    }
}

TEST_SUITE_END();
