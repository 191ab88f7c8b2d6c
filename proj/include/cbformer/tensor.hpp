#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A node of the dynamic autograd graph. Each differentiable op allocates one
// and links it to its inputs; the graph lives exactly as long as the result
// tensors referencing it.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::vector<double>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    // Negative axes count from the back.
    std::size_t dim(int axis) const;

    std::span<const double> values() const;
    // Writable storage; only meaningful on leaves (parameters, inputs).
    std::span<double> mutable_values();
    std::span<const double> grad() const;
    bool has_grad() const;
    bool requires_grad() const;
    void set_requires_grad(bool flag);
    void zero_grad();

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    // Value copy cut off from the graph.
    Tensor detach() const;

    // Reverse pass from a scalar tensor.
    void backward() const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }

    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> inputs,
                              std::function<void(TensorNode&)> backward_fn);

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

std::size_t normalize_axis(int axis, std::size_t rank, const char* op);

}  // namespace cbf
