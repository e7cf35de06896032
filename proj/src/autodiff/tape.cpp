#include <cmath>
#include <sstream>

#include "hypercast/autodiff.hpp"

namespace hypercast::ad {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Parameter::Parameter(std::string name, Shape shape)
    : name_(std::move(name)), shape_(std::move(shape)), value_(numel(shape_), 0.0),
      grad_(value_.size(), 0.0) {}

Parameter::Parameter(std::string name, Shape shape, std::vector<double> value)
    : name_(std::move(name)), shape_(std::move(shape)), value_(std::move(value)) {
    if (value_.size() != numel(shape_))
        throw ShapeError("parameter " + name_ + ": value length " + std::to_string(value_.size()) +
                         " does not match shape " + shape_str(shape_));
    grad_.assign(value_.size(), 0.0);
}

void Parameter::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Parameter& ParameterSet::add(std::string name, Shape shape) {
    std::vector<double> zeros(numel(shape), 0.0);
    return add(std::move(name), std::move(shape), std::move(zeros));
}

Parameter& ParameterSet::add(std::string name, Shape shape, std::vector<double> value) {
    if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(shape), std::move(value)));
    return *params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterSet::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterSet::at(const std::string& name) {
    Parameter* p = find(name);
    if (p == nullptr) throw std::out_of_range("unknown parameter: " + name);
    return *p;
}

std::size_t ParameterSet::total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

std::vector<Parameter*> ParameterSet::pointers() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }

std::size_t Tensor::size() const { return tape_->node(id_).value.size(); }

std::size_t Tensor::dim(int axis) const {
    const auto& s = shape();
    const int r = static_cast<int>(s.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(a)];
}

std::span<const double> Tensor::value() const { return tape_->node(id_).value; }

std::span<const double> Tensor::grad() const { return tape_->node(id_).grad; }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return value()[0];
}

bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

Tensor Tape::constant(Shape shape, std::vector<double> value) {
    if (value.size() != numel(shape))
        throw ShapeError("constant: value length " + std::to_string(value.size()) + " vs shape " +
                         shape_str(shape));
    Node n;
    n.op = "constant";
    n.shape = std::move(shape);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant_fill(Shape shape, double fill) {
    std::vector<double> v(numel(shape), fill);
    return constant(std::move(shape), std::move(v));
}

Tensor Tape::variable(Shape shape, std::vector<double> value) {
    Tensor t = constant(std::move(shape), std::move(value));
    Node& n = nodes_.back();
    n.op = "variable";
    n.requires_grad = grad_enabled_;
    return t;
}

Tensor Tape::parameter(Parameter& param) {
    auto it = param_nodes_.find(&param);
    if (it != param_nodes_.end()) return Tensor(this, it->second);
    Node n;
    n.op = "parameter";
    n.shape = param.shape();
    n.value = param.value();
    n.requires_grad = grad_enabled_;
    n.param = &param;
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&param, nodes_.size() - 1);
    return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::record(const char* op, Shape shape, std::vector<double> value,
                    std::vector<std::size_t> inputs, BackwardFn fn) {
    if (value.size() != numel(shape))
        throw ShapeError(std::string(op) + ": internal shape/value mismatch " + shape_str(shape));
    // x * 0 is NaN exactly when x is NaN or infinite; the sum vectorizes.
    double probe = 0.0;
    for (double v : value) probe += v * 0.0;
    if (probe != probe) throw NumericError(std::string("non-finite output in op ") + op);
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.value = std::move(value);
    bool needs = false;
    if (grad_enabled_)
        for (std::size_t id : inputs) needs = needs || nodes_[id].requires_grad;
    if (needs) {
        n.requires_grad = true;
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape_ != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[loss.id_].requires_grad) return;
    grad_of(loss.id_)[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, n);
        if (n.param != nullptr) {
            auto& pg = n.param->grad();
            for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
        }
    }
}

}  // namespace hypercast::ad
