#include "irisgrad/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace irisgrad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("tensor shape " + shape_string(shape) + " holds " +
                                std::to_string(shape_size(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->values.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::span<const double> Tensor::values() const { return impl_->values; }

std::span<double> Tensor::mutable_values() {
  if (impl_->recorded) throw std::logic_error("cannot mutate a tensor with recorded history");
  return impl_->values;
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() needs a single-element tensor, shape is " +
                                shape_string(shape()));
  }
  return impl_->values[0];
}

double Tensor::at(std::size_t flat) const { return impl_->values.at(flat); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl_->recorded && !flag) throw std::logic_error("cannot clear requires_grad on a recorded tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_->recorded; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->values); }

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->values, impl_->requires_grad && !impl_->recorded);
}

namespace {
thread_local ComputationRecord* g_active = nullptr;
}

ComputationRecord* active_record() { return g_active; }

RecordScope::RecordScope(ComputationRecord& record) : previous_(g_active) { g_active = &record; }
RecordScope::~RecordScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

void ComputationRecord::push(Node node) { nodes_.push_back(std::move(node)); }

void ComputationRecord::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, shape is " +
                                shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    clear();
    return;
  }
  auto seed = detail::grad_buffer(loss.impl());
  seed[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
  clear();
}

void backward(const Tensor& loss) {
  auto* rec = active_record();
  if (rec == nullptr) {
    if (loss.size() != 1) {
      throw std::invalid_argument("backward needs a scalar loss, shape is " +
                                  shape_string(loss.shape()));
    }
    return;
  }
  rec->backward(loss);
}

namespace detail {

std::span<double> grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad;
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (active_record() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

bool should_record(const std::vector<Tensor>& inputs) {
  if (active_record() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

Tensor make_result(const char* kind, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, ComputationRecord::BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values));
  if (fn && should_record(inputs)) {
    out.impl().requires_grad = true;
    out.impl().recorded = true;
    ComputationRecord::Node node;
    node.kind = kind;
    node.inputs.reserve(inputs.size());
    for (const auto& t : inputs) node.inputs.push_back(t.impl_ptr());
    node.output = out.impl_ptr();
    node.backward = std::move(fn);
    active_record()->push(std::move(node));
  }
  return out;
}

}  // namespace detail

}  // namespace irisgrad
