#include <doctest.h>

#include <cmath>

#include "pointcra/gradcheck.hpp"
#include "pointcra/rng.hpp"
#include "pointcra/tensor.hpp"

using namespace pointcra;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul forward") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.value() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul rejects shape mismatch") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_AS((void)matmul(a, b), std::invalid_argument);
}

TEST_CASE("batch norm eval with zero mean and unit variance is an affine map") {
    Tensor x = Tensor::from({3, 2}, {0.3, -0.7, 0.1, 0.9, -0.4, 0.2});
    Tensor gamma = Tensor::from({2}, {1.5, 0.5});
    Tensor beta = Tensor::from({2}, {0.25, -0.1});
    std::vector<double> rm{0.0, 0.0}, rv{1.0, 1.0};
    Tensor y = batch_norm(x, gamma, beta, rm, rv, false, 0.9, 1e-5);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 2; ++c) {
            double want = gamma.value()[std::size_t(c)] * x.value()[std::size_t(i * 2 + c)] +
                          beta.value()[std::size_t(c)];
            CHECK(y.value()[std::size_t(i * 2 + c)] == doctest::Approx(want).epsilon(1e-4));
        }
}

TEST_CASE("batch norm training normalizes the batch and updates running stats") {
    Tensor x = Tensor::from({4, 1}, {1.0, 2.0, 3.0, 4.0});
    Tensor gamma = Tensor::from({1}, {1.0});
    Tensor beta = Tensor::from({1}, {0.0});
    std::vector<double> rm{0.0}, rv{1.0};
    Tensor y = batch_norm(x, gamma, beta, rm, rv, true, 0.9, 1e-5);
    double mean = 0.0;
    for (double v : y.value()) mean += v;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rm[0] == doctest::Approx(0.1 * 2.5));
    CHECK(rv[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.25));
}

TEST_CASE("reduce max over identical rows is the row itself") {
    Tensor x = Tensor::from({1, 3, 2}, {0.5, -1.0, 0.5, -1.0, 0.5, -1.0});
    Tensor y = reduce_max_k(x);
    CHECK(y.value() == std::vector<double>{0.5, -1.0});
}

TEST_CASE("cross entropy of uniform logits is ln k") {
    for (int k = 2; k <= 5; ++k) {
        Tensor logits = Tensor::zeros({1, k});
        Tensor l = cross_entropy(logits, {0}, 0.0);
        CHECK(l.item() == doctest::Approx(std::log(double(k))).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy of a perfectly confident prediction is zero") {
    Tensor logits = Tensor::from({1, 3}, {1e9, 0.0, 0.0});
    CHECK(cross_entropy(logits, {0}, 0.0).item() == doctest::Approx(0.0));
}

TEST_CASE("cross entropy matches a direct summation oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 1 + rng.uniform_int(5), k = 2 + rng.uniform_int(4);
        std::vector<double> lv(std::size_t(n) * k);
        for (auto& v : lv) v = rng.uniform(-3.0, 3.0);
        std::vector<int> labels(std::size_t(n), 0);
        for (auto& l : labels) l = rng.uniform_int(k);
        double s = rng.uniform(0.0, 0.5);

        double want = 0.0;
        for (int i = 0; i < n; ++i) {
            double z = 0.0;
            for (int c = 0; c < k; ++c) z += std::exp(lv[std::size_t(i * k + c)]);
            for (int c = 0; c < k; ++c) {
                double q = s / k + (c == labels[std::size_t(i)] ? 1.0 - s : 0.0);
                want -= q * std::log(std::exp(lv[std::size_t(i * k + c)]) / z);
            }
        }
        want /= n;
        Tensor logits = Tensor::from({n, k}, lv);
        CHECK(cross_entropy(logits, labels, s).item() == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    Tensor logits = Tensor::zeros({1, 2});
    CHECK_THROWS_AS((void)cross_entropy(logits, {2}, 0.0), std::invalid_argument);
}

TEST_CASE("gradients accumulate across uses of one parameter") {
    Tensor x = Tensor::from({1, 1}, {2.0}, true);
    Tensor y = mean_all(mul(x, x));  // d/dx x^2 = 2x = 4
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    // a second backward without zeroing keeps accumulating
    Tensor z = mean_all(affine(x, 3.0, 0.0));
    backward(z);
    CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("forward passes stay finite on finite inputs") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor a = Tensor::from({4, 3}, {rng.normal(), rng.normal(), rng.normal(), rng.normal(),
                                         rng.normal(), rng.normal(), rng.normal(), rng.normal(),
                                         rng.normal(), rng.normal(), rng.normal(), rng.normal()});
        Tensor w = Tensor::from({3, 3}, {rng.normal(), rng.normal(), rng.normal(), rng.normal(),
                                         rng.normal(), rng.normal(), rng.normal(), rng.normal(),
                                         rng.normal()});
        Tensor gamma = Tensor::from({3}, {1.0, 1.0, 1.0});
        Tensor beta = Tensor::zeros({3});
        std::vector<double> rm(3, 0.0), rv(3, 1.0);
        Tensor h = relu(batch_norm(matmul(a, w), gamma, beta, rm, rv, true, 0.9, 1e-5));
        CHECK(all_finite(h));
        CHECK(all_finite(mean_all(softplus(h))));
    }
}

TEST_CASE("spot finite-difference suites") {
    auto r1 = run_gradcheck_suite("matmul");
    CHECK(r1.pass);
    auto r2 = run_gradcheck_suite("cra_chain");
    CHECK(r2.pass);
}

TEST_SUITE_END();
