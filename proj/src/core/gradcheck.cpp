#include "cbformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cbf {

GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor param, double h,
                           const std::optional<std::vector<std::size_t>>& coordinates) {
    if (!(h >= 1e-7 && h <= 1e-4)) {
        throw std::invalid_argument("grad_check: step " + std::to_string(h) + " outside [1e-7, 1e-4]");
    }
    if (!param.requires_grad()) throw std::invalid_argument("grad_check: parameter does not require grad");

    param.zero_grad();
    Tensor out = f();
    if (out.numel() != 1) {
        throw std::invalid_argument("grad_check: function output has shape " + shape_str(out.shape()) +
                                    ", expected a scalar");
    }
    out.backward();
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) {
        auto g = param.grad();
        std::copy(g.begin(), g.end(), analytic.begin());
    }
    const double f0 = out.item();

    std::vector<std::size_t> coords;
    if (coordinates) {
        coords = *coordinates;
    } else {
        coords.resize(param.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
    }

    GradCheckResult result;
    auto values = param.mutable_values();
    for (std::size_t i : coords) {
        if (i >= values.size()) throw std::out_of_range("grad_check: coordinate out of range");
        const double orig = values[i];
        values[i] = orig + h;
        const double fp = f().item();
        values[i] = orig - h;
        const double fm = f().item();
        values[i] = orig;

        const double central = (fp - fm) / (2.0 * h);
        const double right = (fp - f0) / h;
        const double left = (f0 - fm) / h;
        // Smooth functions give |right - left| ~ |f''| h; a kink jumps the slope.
        if (std::abs(right - left) > 1e-5 * std::max(1.0, std::abs(central)) + 10.0 * h) {
            result.flagged.push_back(i);
            continue;
        }
        const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
        result.max_rel_error = std::max(result.max_rel_error, err);
        ++result.checked;
    }
    param.zero_grad();
    return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
    return grad_check([&] { return f(leaf); }, leaf, h);
}

}  // namespace cbf
