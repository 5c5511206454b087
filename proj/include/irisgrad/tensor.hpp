#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace irisgrad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  // Empty until a backward pass touches this tensor.
  std::vector<double> grad;
  bool requires_grad = false;
  // True when produced by an operation captured in a computation record.
  bool recorded = false;
};

// Dense row-major float64 array. Copies share storage; use clone() or
// detach() for an independent buffer.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorImpl> impl);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  // Writable view; refused on tensors that carry recorded history.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  TensorImpl& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered list of recorded operations (define-by-run). Each forward pass
// appends nodes; backward() walks them in reverse and then clears the
// record, so one record serves one forward/backward cycle at a time.
class ComputationRecord {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  struct Node {
    std::string kind;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  void push(Node node);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every tensor
  // with requires_grad. Throws if loss is not a single element.
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

// The record that operations on this thread append to, or nullptr.
ComputationRecord* active_record();

// Makes `record` active on the current thread for the scope's lifetime.
class RecordScope {
 public:
  explicit RecordScope(ComputationRecord& record);
  ~RecordScope();
  RecordScope(const RecordScope&) = delete;
  RecordScope& operator=(const RecordScope&) = delete;

 private:
  ComputationRecord* previous_;
};

// Disables recording on the current thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  ComputationRecord* previous_;
};

// Runs backward on the active record; a loss with no recorded history is a
// no-op (its leaves simply receive no gradient).
void backward(const Tensor& loss);

namespace detail {

// Gradient buffer of `t`, allocated as zeros on first use.
std::span<double> grad_buffer(TensorImpl& t);

// True if recording is active and any input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

// Wraps freshly computed values in a tensor and, when recording, appends a
// node whose backward rule is `fn`.
Tensor make_result(const char* kind, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs,
                   ComputationRecord::BackwardFn fn);

}  // namespace detail

}  // namespace irisgrad
