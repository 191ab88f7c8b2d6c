#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "cbformer/tensor.hpp"

namespace cbf {

struct GradCheckResult {
    // max over checked coordinates of |analytic - central| / max(1, |analytic|)
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Coordinates where one-sided slopes disagree (a kink such as ReLU at 0);
    // they are excluded from max_rel_error.
    std::vector<std::size_t> flagged;
};

// Compares the reverse-mode gradient of a scalar-valued f with respect to the
// leaf `param` against central differences with step h in [1e-7, 1e-4]. `f`
// is re-evaluated with param perturbed in place; param is restored afterwards.
// When `coordinates` is given only those flat indices are probed.
GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor param, double h,
                           const std::optional<std::vector<std::size_t>>& coordinates = std::nullopt);

// Functional form: f maps x to a scalar.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace cbf
