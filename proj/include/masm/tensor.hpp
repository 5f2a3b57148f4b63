#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "masm/errors.hpp"

namespace masm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
std::vector<std::size_t> row_major_strides(const Shape& s);

class Tape;

/// Storage behind a Tensor. Values are shared so reshape can stay
/// metadata-only; grad belongs to this node alone.
struct TensorData {
  Shape shape;
  std::shared_ptr<std::vector<double>> values;
  bool requires_grad = false;
  std::vector<double> grad;         // empty until backward reaches this node
  const Tape* producer = nullptr;   // tape that recorded the producing op

  std::size_t numel() const { return shape_numel(shape); }
};

/// Dense row-major tensor of doubles, immutable after creation except for
/// grad accumulation during backward and in-place parameter updates between
/// graphs (optimizer steps).
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  /// Leaf with requires_grad set; the unit every parameter is made of.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->numel(); }
  std::size_t extent(std::size_t axis) const { return d_->shape.at(axis); }

  const std::vector<double>& values() const { return *d_->values; }
  double value_at(std::size_t i) const { return (*d_->values)[i]; }
  /// In-place access for optimizer updates and finite-difference probes.
  /// Only valid on leaves between graphs.
  std::vector<double>& mutable_values() { return *d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  bool has_grad() const { return !d_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { d_->grad.clear(); }

  const std::shared_ptr<TensorData>& impl() const { return d_; }
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

 private:
  std::shared_ptr<TensorData> d_;
};

/// Reverse-mode tape: ordered op records, replayed once in reverse creation
/// order by backward(). Construction and replay are single-threaded.
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void()> pull;  // propagate output->grad into input grads
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Node node);
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 and pulls gradients back through every node,
  /// newest first. out must be a scalar recorded on this tape.
  void backward(const Tensor& out);

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
};

/// RAII guard that makes a tape the recording target for ops on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Grad buffer of t, allocated as zeros on first touch.
std::vector<double>& grad_buffer(TensorData& t);

}  // namespace masm
