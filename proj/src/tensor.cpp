#include "masm/tensor.hpp"

#include <sstream>

namespace masm {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (std::size_t e : shape)
    if (e == 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::make_shared<std::vector<double>>(std::move(values));
  return Tensor(std::move(d));
}

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double v) {
  std::vector<double> vals(shape_numel(shape), v);
  return from(std::move(shape), std::move(vals));
}

Tensor Tensor::scalar(double v) {
  return from(Shape{}, std::vector<double>{v});
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.d_->requires_grad = true;
  return t;
}

const std::vector<double>& Tensor::grad() const {
  if (d_->grad.empty())
    throw NumericError("tensor has no gradient (backward not run or not reached)");
  return d_->grad;
}

std::vector<double>& grad_buffer(TensorData& t) {
  if (t.grad.empty()) t.grad.assign(t.numel(), 0.0);
  return t.grad;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::record(Node node) {
  node.output->producer = this;
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& out) {
  if (!out.defined()) throw NumericError("backward: undefined tensor");
  if (out.size() != 1)
    throw NumericError("backward requires a scalar output, got shape " +
                       shape_str(out.shape()));
  if (out.impl()->producer != this)
    throw NumericError("backward on a tensor not recorded on this tape");
  grad_buffer(*out.impl())[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    // Nodes whose output never received a gradient do not feed the seeded
    // scalar; their pull would only propagate zeros.
    if (n.output->grad.empty()) continue;
    n.pull();
  }
}

}  // namespace masm
