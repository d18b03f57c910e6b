#include <doctest.h>

#include <cmath>

#include "pointcra/losses.hpp"
#include "pointcra/rng.hpp"

using namespace pointcra;

TEST_SUITE_BEGIN("losses");

TEST_CASE("reg loss softplus identities") {
    const double ln2 = std::log(2.0);
    Tensor a = Tensor::from({2}, {1.0, 1.0});
    Tensor b = Tensor::zeros({2});
    Tensor c = Tensor::from({2}, {0.5, 0.5});
    double got = reg_loss({a}, {b}, {c}, 0.2, 0.8).item();
    double bound = 2.0 * std::log1p(std::exp(-0.3));
    CHECK(got == doctest::Approx(2.0 * ln2 + bound).epsilon(1e-12));
    CHECK(bound == doctest::Approx(1.108710).epsilon(1e-5));

    // isolate each term
    Tensor c_mid = Tensor::from({1}, {0.5});
    Tensor one = Tensor::from({1}, {1.0});
    Tensor zero = Tensor::zeros({1});
    double b_term = reg_loss({one}, {zero}, {c_mid}, 0.2, 0.8).item() -
                    reg_loss({one}, {Tensor::from({1}, {-30.0})}, {c_mid}, 0.2, 0.8).item();
    CHECK(b_term == doctest::Approx(ln2).epsilon(1e-9));
}

TEST_CASE("reg loss grows as a drops or c leaves the bounds, positive everywhere") {
    Tensor b = Tensor::zeros({1});
    Tensor c = Tensor::from({1}, {0.5});
    double base = reg_loss({Tensor::from({1}, {1.0})}, {b}, {c}, 0.2, 0.8).item();
    double low_a = reg_loss({Tensor::from({1}, {-3.0})}, {b}, {c}, 0.2, 0.8).item();
    CHECK(low_a > base);
    Tensor a = Tensor::from({1}, {1.0});
    double out_c = reg_loss({a}, {b}, {Tensor::from({1}, {2.0})}, 0.2, 0.8).item();
    CHECK(out_c > base);
    CHECK(base > 0.0);
}

TEST_CASE("reg loss averages over stages") {
    Tensor a1 = Tensor::from({1}, {1.0}), a2 = Tensor::from({1}, {0.0});
    Tensor b = Tensor::zeros({1});
    Tensor c = Tensor::from({1}, {0.5});
    double s1 = reg_loss({a1}, {b}, {c}, 0.2, 0.8).item();
    double s2 = reg_loss({a2}, {b}, {c}, 0.2, 0.8).item();
    double both = reg_loss({a1, a2}, {b, b}, {c, c}, 0.2, 0.8).item();
    CHECK(both == doctest::Approx(0.5 * (s1 + s2)).epsilon(1e-12));
}

TEST_CASE("orth loss examples") {
    // all channels identical -> 1
    Tensor same = Tensor::from({3, 3}, {1, 1, 1, 2, 2, 2, 3, 3, 3});
    CHECK(orth_loss(same).item() == doctest::Approx(1.0).epsilon(1e-12));

    // orthogonal channels -> 0
    Tensor ortho = Tensor::from({2, 2}, {1, 0, 0, 1});
    CHECK(orth_loss(ortho).item() == doctest::Approx(0.0).epsilon(1e-12));

    // w1=(1,0), w2=(1,1) -> |cos| = 1/sqrt(2)
    Tensor mix = Tensor::from({2, 2}, {1, 1, 0, 1});
    CHECK(orth_loss(mix).item() == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(orth_loss(mix).item() == doctest::Approx(0.707107).epsilon(1e-5));
}

TEST_CASE("orth loss rejects a single channel") {
    Tensor w = Tensor::from({4, 1}, {1, 2, 3, 4});
    CHECK_THROWS_AS((void)orth_loss(w), std::invalid_argument);
}

TEST_CASE("orth loss scale invariance and negation invariance") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        int rows = 3 + rng.uniform_int(5), c = 2 + rng.uniform_int(3);
        std::vector<double> v(std::size_t(rows * c), 0.0);
        for (auto& x : v) x = rng.normal();
        double base = orth_loss(Tensor::from({rows, c}, v)).item();
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);

        int pick = rng.uniform_int(c);
        double scale = rng.uniform(0.1, 5.0);
        std::vector<double> scaled = v;
        for (int i = 0; i < rows; ++i) scaled[std::size_t(i * c + pick)] *= scale;
        CHECK(orth_loss(Tensor::from({rows, c}, scaled)).item() ==
              doctest::Approx(base).epsilon(1e-10));

        std::vector<double> negated = v;
        for (int i = 0; i < rows; ++i) negated[std::size_t(i * c + pick)] *= -1.0;
        CHECK(orth_loss(Tensor::from({rows, c}, negated)).item() ==
              doctest::Approx(base).epsilon(1e-10));
    }
}

TEST_CASE("zero-norm channels contribute zero") {
    Tensor w = Tensor::from({2, 3}, {1, 0, 0, 1, 0, 0});
    // channels 1 and 2 are zero; only the (0,1),(0,2),(1,0),(1,2),(2,0),(2,1) pairs exist, all 0
    CHECK(orth_loss(w).item() == doctest::Approx(0.0));
}

TEST_CASE("centered variant subtracts channel means") {
    // constant channels correlate perfectly uncentered, but center to zero
    Tensor w = Tensor::from({3, 2}, {1, 2, 1, 2, 1, 2});
    CHECK(orth_loss(w, false).item() == doctest::Approx(1.0));
    CHECK(orth_loss(w, true).item() == doctest::Approx(0.0));
}

TEST_CASE("total loss composition and invariant") {
    Tensor task = Tensor::scalar(1.0);
    Tensor reg = Tensor::scalar(2.0);
    Tensor orth = Tensor::scalar(0.5);
    LossBreakdown bd;
    Tensor total = total_loss(task, reg, orth, 0.1, 0.2, &bd);
    CHECK(total.item() == doctest::Approx(1.3).epsilon(1e-15));
    CHECK(std::fabs(bd.total - (bd.task + bd.lambda1 * bd.reg + bd.lambda2 * bd.orth)) < 1e-12);

    LossBreakdown bd0;
    CHECK(total_loss(task, reg, orth, 0.0, 0.0, &bd0).item() == doctest::Approx(1.0));
    CHECK_THROWS_AS((void)total_loss(task, reg, orth, -0.1, 0.0, nullptr), std::invalid_argument);
}

TEST_SUITE_END();
