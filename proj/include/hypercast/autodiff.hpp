#pragma once

// Tape-based reverse-mode differentiation over dense row-major float64 tensors.
//
// A Tape records every forward op in execution order; Tape::backward replays
// the recorded rules in exact reverse order. Tensors are lightweight handles
// into the tape that produced them and are only valid while that tape lives.
// Learnable weights are Parameters, which outlive tapes: each tape gets one
// leaf node per Parameter and backward() adds the leaf gradient into
// Parameter::grad().

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hypercast::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Parameter {
public:
    Parameter(std::string name, Shape shape);
    Parameter(std::string name, Shape shape, std::vector<double> value);

    const std::string& name() const { return name_; }
    const Shape& shape() const { return shape_; }
    std::size_t size() const { return value_.size(); }

    std::vector<double>& value() { return value_; }
    const std::vector<double>& value() const { return value_; }
    std::vector<double>& grad() { return grad_; }
    const std::vector<double>& grad() const { return grad_; }

    void zero_grad();

private:
    std::string name_;
    Shape shape_;
    std::vector<double> value_;
    std::vector<double> grad_;
};

// Insertion-ordered collection of uniquely named parameters.
class ParameterSet {
public:
    Parameter& add(std::string name, Shape shape);
    Parameter& add(std::string name, Shape shape, std::vector<double> value);

    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    std::size_t count() const { return params_.size(); }
    std::size_t total_size() const;
    void zero_grad();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::vector<Parameter*> pointers();

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    // Negative axes count from the back.
    std::size_t dim(int axis) const;

    std::span<const double> value() const;
    // Empty until backward() has run on a tensor that requires a gradient.
    std::span<const double> grad() const;
    double item() const;

    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    struct Node;
    using BackwardFn = std::function<void(Tape&, const Node&)>;

    struct Node {
        const char* op = "";
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        Parameter* param = nullptr;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // With gradients disabled every recorded node is constant, including
    // parameter leaves; this is the evaluation mode.
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const { return grad_enabled_; }

    Tensor constant(Shape shape, std::vector<double> value);
    Tensor constant_fill(Shape shape, double fill);
    // Tracked leaf that is not tied to a Parameter.
    Tensor variable(Shape shape, std::vector<double> value);
    // Leaf bound to a parameter; repeated calls return the same node.
    Tensor parameter(Parameter& param);

    // Accumulates d(loss)/d(param) into every bound Parameter's grad.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }

    // Op-author interface. `inputs` that do not require a gradient are
    // skipped by the backward pass; `fn` is dropped when no input does.
    Tensor record(const char* op, Shape shape, std::vector<double> value,
                  std::vector<std::size_t> inputs, BackwardFn fn);

    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }
    // Gradient buffer of a node, allocated (zero-filled) on first access.
    std::vector<double>& grad_of(std::size_t id);

private:
    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    bool grad_enabled_ = true;
};

// ---- forward op catalogue -------------------------------------------------

// Element-wise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// a: [..., m, k]; b: [k, n] (shared) or [..., k, n] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices);
Tensor concat(std::span<const Tensor> parts, int axis = -1);

Tensor mean(const Tensor& x, int axis, bool keepdim = false);

// Softmax over the last axis.
Tensor softmax(const Tensor& x);
// `mask` is an additive constant (0 or -inf) broadcast over x's leading dims.
Tensor masked_softmax(const Tensor& x, const Tensor& mask);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);

// Normalizes over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Inverted dropout; exact identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Composite convenience: sum over every element.
Tensor sum_all(const Tensor& x);

// Additive causal mask of shape [n, n]: 0 where key <= query, -inf above.
Tensor causal_mask(Tape& tape, std::size_t n);

}  // namespace hypercast::ad
