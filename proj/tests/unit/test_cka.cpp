#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <random>

#include "cbformer/cka.hpp"
#include "cbformer/gradcheck.hpp"
#include "cbformer/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cbf;
using cbf::test::random_tensor;
using Mat = Eigen::MatrixXd;

namespace {

Mat to_mat(const Tensor& t) {
    const std::size_t n = t.dim(0), p = t.numel() / n;
    Mat m(n, p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) m(i, j) = t.values()[i * p + j];
    return m;
}

Tensor from_mat(const Mat& m) {
    std::vector<double> v;
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
    return Tensor::from({std::size_t(m.rows()), std::size_t(m.cols())}, v);
}

// Gram route: HSIC(K, L) = tr(K H L H) with H = I - 11^T / n.
double gram_cka(const Mat& a, const Mat& b) {
    const long n = a.rows();
    const Mat H = Mat::Identity(n, n) - Mat::Constant(n, n, 1.0 / double(n));
    const Mat K = a * a.transpose(), L = b * b.transpose();
    auto hsic = [&](const Mat& x, const Mat& y) { return (x * H * y * H).trace(); };
    return hsic(K, L) / std::sqrt(hsic(K, K) * hsic(L, L));
}

Mat random_orthogonal(std::size_t p, std::mt19937_64& rng) {
    const Mat g = to_mat(random_tensor({p, p}, rng));
    Eigen::HouseholderQR<Mat> qr(g);
    return qr.householderQ();
}

}  // namespace

TEST_CASE("hand-computed 3x3 case") {
    const Tensor a = Tensor::from({3, 1}, {1, 2, 3});
    const Tensor b = Tensor::from({3, 1}, {1, -1, 2});
    // Centered: a = (-1, 0, 1), b = (1/3, -5/3, 4/3); <a,b>^2 / (|a|^2 |b|^2) = 1 / (2 * 14/3).
    CHECK(std::abs(cka::linear_cka_value(a, b) - 3.0 / 28.0) <= 1e-12);
    CHECK(std::abs(gram_cka(to_mat(a), to_mat(b)) - 3.0 / 28.0) <= 1e-12);
}

TEST_CASE("feature route agrees with the Gram route") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 20; ++i) {
        const Tensor a = random_tensor({32, 7}, rng), b = random_tensor({32, 4, 3}, rng);
        CHECK(cka::linear_cka_value(a, b) == doctest::Approx(gram_cka(to_mat(a), to_mat(b))).epsilon(1e-11));
    }
}

TEST_CASE("invariances") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 10; ++i) {
        const Tensor a = random_tensor({32, 10}, rng);
        const Tensor b = random_tensor({32, 6}, rng);
        CHECK(std::abs(cka::linear_cka_value(a, a) - 1.0) <= 1e-9);
        const Tensor rot = from_mat(3.0 * to_mat(a) * random_orthogonal(10, rng));
        CHECK(std::abs(cka::linear_cka_value(a, rot) - 1.0) <= 1e-9);
        CHECK(std::abs(cka::linear_cka_value(rot, b) - cka::linear_cka_value(a, b)) <= 1e-9);
        CHECK(std::abs(cka::linear_cka_value(a, b) - cka::linear_cka_value(b, a)) <= 1e-12);

        std::vector<long> perm(32);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Mat pa = to_mat(a), pb = to_mat(b);
        for (long r = 0; r < 32; ++r) {
            pa.row(r) = to_mat(a).row(perm[r]);
            pb.row(r) = to_mat(b).row(perm[r]);
        }
        CHECK(cka::linear_cka_value(from_mat(pa), from_mat(pb)) ==
              doctest::Approx(cka::linear_cka_value(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("independent representations score low") {
    std::mt19937_64 rng(29);
    int low = 0;
    for (int i = 0; i < 100; ++i) {
        const double v = cka::linear_cka_value(random_tensor({32, 10}, rng), random_tensor({32, 10}, rng));
        CHECK(v >= -1e-9);
        CHECK(v <= 1.0 + 1e-9);
        low += v < 0.35;
    }
    CHECK(low >= 95);
}

TEST_CASE("degenerate and malformed inputs") {
    const Tensor same = Tensor::from({4, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(cka::linear_cka_value(same, random_tensor({4, 3}, rng)), cka::DegenerateRepresentation);
    CHECK_THROWS_AS(cka::linear_cka_value(random_tensor({4, 3}, rng), random_tensor({5, 3}, rng)), ShapeError);
    CHECK_THROWS(cka::linear_cka_value(random_tensor({1, 3}, rng), random_tensor({1, 3}, rng)));
}

TEST_CASE("cka_loss") {
    CHECK(cka::cka_loss(std::vector<double>{1, 1}) == 0.0);
    CHECK(cka::cka_loss(std::vector<double>{0.58, 0.99}) == doctest::Approx(0.215).epsilon(1e-12));
    CHECK(cka::cka_loss(std::vector<double>{0, 0}) == 1.0);
    CHECK_THROWS(cka::cka_loss(std::vector<double>{}));
}

TEST_CASE("loss gradient flows into activations only") {
    std::mt19937_64 rng(31);
    Tensor a = random_tensor({16, 6}, rng, true);
    const Tensor target = random_tensor({16, 4}, rng, true);
    const Tensor target2 = random_tensor({16, 9}, rng);
    const auto r = grad_check(
        [&](const Tensor& x) {
            return cka::cka_loss(std::vector<Tensor>{cka::linear_cka(x, target.detach()), cka::linear_cka(x, target2)});
        },
        a, 1e-6);
    CHECK(r.max_rel_error <= 1e-4);

    a.zero_grad();
    cka::cka_loss(std::vector<Tensor>{cka::linear_cka(a, target.detach())}).backward();
    CHECK(a.has_grad());
    CHECK_FALSE(target.has_grad());
}
