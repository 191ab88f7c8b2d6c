#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "cbformer/fft.hpp"
#include "cbformer/gradcheck.hpp"
#include "cbformer/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cbf;
using cbf::test::random_tensor;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Direct windowed mean with replicated edges.
std::vector<double> windowed_mean(const std::vector<double>& x, std::size_t k) {
    const long n = static_cast<long>(x.size()), h = static_cast<long>(k / 2);
    std::vector<double> out(x.size());
    for (long t = 0; t < n; ++t) {
        double s = 0.0;
        for (long j = t - h; j <= t + h; ++j) s += x[std::clamp(j, 0L, n - 1)];
        out[t] = s / static_cast<double>(k);
    }
    return out;
}

}  // namespace

TEST_CASE("relu, layer_norm and roll examples") {
    CHECK(vec(relu(Tensor::from({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
    for (double v : vec(layer_norm(Tensor::full({1, 6}, 3.25)))) CHECK(v == 0.0);
    CHECK(vec(roll(Tensor::from({4}, {1, 2, 3, 4}), 1, 0)) == std::vector<double>{4, 1, 2, 3});
    CHECK(vec(roll(Tensor::from({4}, {1, 2, 3, 4}), -1, 0)) == std::vector<double>{2, 3, 4, 1});
}

TEST_CASE("shape mismatches name the op and both shapes") {
    const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 5});
    try {
        (void)matmul(a, b);
        FAIL("no error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find(shape_str(a.shape())) != std::string::npos);
        CHECK(msg.find(shape_str(b.shape())) != std::string::npos);
    }
    CHECK_THROWS_AS((void)add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
    CHECK_THROWS_AS((void)concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 2})}, 0), ShapeError);
}

TEST_CASE("avg_pool_moving") {
    CHECK(avg_pool_moving(std::vector<double>{5, 5, 5}, 3) == std::vector<double>{5, 5, 5});
    const auto r = avg_pool_moving(std::vector<double>{1, 2, 3, 4, 5}, 3);
    const std::vector<double> expect{4.0 / 3, 2, 3, 4, 14.0 / 3};
    for (std::size_t i = 0; i < 5; ++i) CHECK(r[i] == doctest::Approx(expect[i]).epsilon(1e-15));
    const std::vector<double> x{0.3, -1.2, 7.0, 2.5};
    CHECK(avg_pool_moving(x, 1) == x);
    CHECK_THROWS(avg_pool_moving(x, 4));
    CHECK_THROWS(avg_pool_moving(x, 9));  // k > 2L - 1

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (std::size_t k : {3u, 5u, 25u}) {
        std::vector<double> s(40);
        for (auto& v : s) v = n(rng);
        const auto got = avg_pool_moving(s, k), want = windowed_mean(s, k);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
}

TEST_CASE("moving_average over the time axis matches the series routine per column") {
    std::mt19937_64 rng(11);
    const Tensor x = random_tensor({2, 30, 3}, rng);
    const Tensor m = moving_average(x, 7, 1);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t c = 0; c < 3; ++c) {
            std::vector<double> col(30);
            for (std::size_t t = 0; t < 30; ++t) col[t] = x.at({b, t, c});
            const auto want = windowed_mean(col, 7);
            for (std::size_t t = 0; t < 30; ++t) CHECK(m.at({b, t, c}) == doctest::Approx(want[t]).epsilon(1e-13));
        }
    }
}

TEST_CASE("fft round trip and agreement with a direct DFT") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    for (std::size_t len : {1u, 2u, 7u, 24u, 96u, 97u, 120u, 1000u, 4096u}) {
        std::vector<double> x(len);
        for (auto& v : x) v = n(rng);
        const auto back = fft::irfft(fft::rfft(x), len);
        double err = 0.0;
        for (std::size_t i = 0; i < len; ++i) err = std::max(err, std::abs(back[i] - x[i]));
        CHECK(err <= 1e-10);
    }
    for (std::size_t len : {6u, 13u, 48u}) {
        std::vector<fft::cplx> x(len);
        for (auto& v : x) v = {n(rng), n(rng)};
        const auto got = fft::forward(x);
        for (std::size_t k = 0; k < len; ++k) {
            fft::cplx want = 0;
            for (std::size_t t = 0; t < len; ++t) {
                want += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t % len) / double(len));
            }
            CHECK(std::abs(got[k] - want) <= 1e-10);
        }
    }
}

TEST_CASE("circular cross-correlation matches the direct sum") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    const std::size_t len = 30;
    std::vector<double> a(len), b(len);
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = n(rng);
    const auto r = fft::circular_cross_correlation(a, b);
    for (std::size_t tau = 0; tau < len; ++tau) {
        double s = 0.0;
        for (std::size_t t = 0; t < len; ++t) s += a[(t + tau) % len] * b[t];
        CHECK(r[tau] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("topk prefers the lower index on ties") {
    const Tensor x = Tensor::from({1, 5}, {1, 3, 3, 0, 2});
    CHECK(topk_indices(x, 3) == std::vector<std::size_t>{1, 2, 4});
}

TEST_CASE("grad_check examples") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({4, 5}, rng, true);
    const auto r = grad_check([](const Tensor& t) { return sum(t * t); }, x, 1e-6);
    CHECK(r.max_rel_error <= 1e-6);
    CHECK(r.checked == 20);

    const Tensor k = Tensor::from({3}, {-1.0, 0.0, 2.0}, true);
    const auto kink = grad_check([](const Tensor& t) { return sum(relu(t)); }, k, 1e-6);
    CHECK(kink.flagged == std::vector<std::size_t>{1});
    CHECK(kink.max_rel_error <= 1e-8);

    CHECK_THROWS(grad_check([](const Tensor& t) { return t * t; }, x, 1e-6));
    CHECK_THROWS(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-3));
}

TEST_CASE("every primitive passes the gradient check on random inputs") {
    std::mt19937_64 rng(21);
    const Tensor a = random_tensor({2, 4, 3}, rng, true);
    const Tensor b = random_tensor({2, 4, 3}, rng, true);
    const Tensor w = random_tensor({3, 5}, rng, true);
    const Tensor probe = random_tensor({2, 4, 3}, rng);
    const auto dot = [&](const Tensor& t) { return sum(t * probe); };
    const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases{
        {"mul", [&](const Tensor& t) { return dot(t * b); }},
        {"div", [&](const Tensor& t) { return dot(t / add_scalar(b * b, 1.0)); }},
        {"softmax", [&](const Tensor& t) { return dot(softmax(t, 1)); }},
        {"layer_norm", [&](const Tensor& t) { return dot(layer_norm(t)); }},
        {"moving_average", [&](const Tensor& t) { return dot(moving_average(t, 3, 1)); }},
        {"roll", [&](const Tensor& t) { return dot(roll(t, 2, 1)); }},
        {"transpose", [&](const Tensor& t) { return sum(transpose(t, 1, 2) * transpose(probe, 1, 2)); }},
        {"matmul", [&](const Tensor& t) { return sum(matmul(t, w) * matmul(probe, w)); }},
        {"mean", [&](const Tensor& t) { return sum(mean(t * probe, 1)); }},
        {"sqrt", [&](const Tensor& t) { return dot(sqrt(add_scalar(t * t, 0.5))); }},
        {"mse", [&](const Tensor& t) { return mse_loss(t, b); }},
    };
    for (const auto& [name, f] : cases) {
        CAPTURE(name);
        const auto r = grad_check(f, a, 1e-6);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("forward evaluation is deterministic") {
    std::mt19937_64 r1(4), r2(4);
    const Tensor a = random_tensor({3, 32, 6}, r1), b = random_tensor({3, 32, 6}, r2);
    CHECK(cbf::test::bit_equal(lag_correlation(a, a), lag_correlation(b, b)));
    CHECK(cbf::test::bit_equal(layer_norm(a), layer_norm(b)));
}

TEST_CASE("backward fills gradients of every leaf that requires one") {
    std::mt19937_64 rng(2);
    const Tensor a = random_tensor({3, 4}, rng, true);
    const Tensor b = random_tensor({4, 2}, rng, true);
    const Tensor c = random_tensor({3, 2}, rng);
    sum(matmul(a, b) * c).backward();
    CHECK(a.has_grad());
    CHECK(b.has_grad());
    CHECK_FALSE(c.has_grad());
}
