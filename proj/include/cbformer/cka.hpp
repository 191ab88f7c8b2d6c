#pragma once

#include <stdexcept>
#include <vector>

#include "cbformer/tensor.hpp"

namespace cbf::cka {

class DegenerateRepresentation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kDenominatorFloor = 1e-12;

// Linear-kernel CKA between two representations of the same n examples.
// Leading axis indexes examples; trailing axes are flattened into one row per
// example. Differentiable in both arguments (pass detached targets to keep
// gradients out of them).
Tensor linear_cka(const Tensor& a, const Tensor& b);
double linear_cka_value(const Tensor& a, const Tensor& b);

// 1 - mean(scores).
Tensor cka_loss(const std::vector<Tensor>& scores);
double cka_loss(const std::vector<double>& scores);

}  // namespace cbf::cka
