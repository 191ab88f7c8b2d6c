#include "cbformer/cka.hpp"

#include <cmath>
#include <string>

#include "cbformer/ops.hpp"

namespace cbf::cka {

namespace {

Tensor as_rows(const Tensor& x, const char* which) {
    if (x.rank() < 1 || x.dim(0) < 2) {
        throw std::invalid_argument(std::string("linear_cka: ") + which + " needs at least two examples, shape " +
                                    shape_str(x.shape()));
    }
    for (double v : x.values()) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string("linear_cka: ") + which + " has non-finite entries");
    }
    const std::size_t n = x.dim(0);
    return reshape(x, {n, x.numel() / n});
}

// Centered Gram matrix of the rows.
Tensor centered_gram(const Tensor& rows) {
    const Tensor centered = rows - mean(rows, 0, true);
    return matmul(centered, transpose(centered, 0, 1));
}

}  // namespace

Tensor linear_cka(const Tensor& a, const Tensor& b) {
    if (a.rank() < 1 || b.rank() < 1 || a.dim(0) != b.dim(0)) {
        throw ShapeError("linear_cka: example counts differ, shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const Tensor ga = centered_gram(as_rows(a, "first argument"));
    const Tensor gb = centered_gram(as_rows(b, "second argument"));
    const Tensor hsic = sum(ga * gb);
    const Tensor self_a = sum(ga * ga);
    const Tensor self_b = sum(gb * gb);
    if (self_a.item() == 0.0 || self_b.item() == 0.0) {
        throw DegenerateRepresentation("linear_cka: degenerate representation (all examples identical)");
    }
    const Tensor denom = sqrt(self_a * self_b);
    if (denom.item() < kDenominatorFloor) return scale(hsic, 1.0 / kDenominatorFloor);
    return hsic / denom;
}

double linear_cka_value(const Tensor& a, const Tensor& b) {
    return linear_cka(a.detach(), b.detach()).item();
}

Tensor cka_loss(const std::vector<Tensor>& scores) {
    if (scores.empty()) throw std::invalid_argument("cka_loss: no concept scores");
    Tensor total = scores.front();
    for (std::size_t i = 1; i < scores.size(); ++i) total = total + scores[i];
    return add_scalar(scale(total, -1.0 / static_cast<double>(scores.size())), 1.0);
}

double cka_loss(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("cka_loss: no concept scores");
    double total = 0.0;
    for (double s : scores) total += s;
    return 1.0 - total / static_cast<double>(scores.size());
}

}  // namespace cbf::cka
