#include "hiss/ndgrad/tensor.hpp"

#include <cmath>
#include <sstream>

#include "hiss/errors.hpp"

namespace hiss::ndgrad {

namespace {
thread_local std::size_t g_values_built = 0;
}  // namespace

namespace detail {
void count_values(std::size_t n) { g_values_built += n; }
}  // namespace detail

std::size_t values_built() { return g_values_built; }
void reset_values_built() { g_values_built = 0; }


namespace {

thread_local Tape* g_active = nullptr;

const Shape& empty_shape() {
  static const Shape s;
  return s;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  if (ndgrad::numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  detail::count_values(values.size());
  node_->data = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor make_result(Shape shape, std::vector<double> values) {
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = ndgrad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_ ? node_->shape : empty_shape(); }

std::size_t Tensor::numel() const { return node_ ? node_->data->size() : 0; }

std::size_t Tensor::dim(long axis) const {
  const long r = static_cast<long>(rank());
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  }
  return shape()[static_cast<std::size_t>(a)];
}

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return {node_->data->data(), node_->data->size()};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return (*node_->data)[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_ || node_->leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::Node>();
  n->shape = shape();
  n->data = node_ ? node_->data : std::make_shared<const std::vector<double>>();
  return Tensor(std::move(n));
}

Tensor Tensor::leaf(bool requires_grad) const {
  Tensor t = detach();
  t.node_->requires_grad = requires_grad;
  return t;
}

Tape::~Tape() { clear(); }

std::vector<Tape::Entry> Tape::entries() const {
  std::vector<Entry> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.entry);
  return out;
}

void Tape::clear() {
  for (auto& r : records_) {
    if (r.output->tape == this) r.output->tape = nullptr;
  }
  records_.clear();
  ids_.clear();
  next_id_ = 0;
}

long Tape::id_of(const std::shared_ptr<detail::Node>& node) {
  auto [it, inserted] = ids_.try_emplace(node.get(), next_id_);
  if (inserted) ++next_id_;
  return it->second;
}

void Tape::record(std::string tag, const std::vector<Tensor>& inputs, const Tensor& output,
                  GradFn fn) {
  Record r;
  r.entry.tag = std::move(tag);
  for (const auto& in : inputs) {
    r.entry.inputs.push_back(id_of(in.node()));
    r.inputs.push_back(in.node());
  }
  r.entry.output = id_of(output.node());
  r.output = output.node();
  r.output->requires_grad = true;
  r.output->leaf = false;
  r.output->tape = this;
  r.fn = std::move(fn);
  records_.push_back(std::move(r));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  const auto& root = loss.node();
  if (!root || root->tape != this) {
    throw GraphError("backward on a tensor that is not recorded on this tape");
  }
  root->grad.assign(1, 1.0);

  std::vector<std::vector<double>*> slots;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Record& r = *it;
    if (r.output->grad.empty()) continue;
    slots.assign(r.inputs.size(), nullptr);
    for (std::size_t i = 0; i < r.inputs.size(); ++i) {
      auto& in = *r.inputs[i];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad.assign(in.data->size(), 0.0);
      slots[i] = &in.grad;
    }
    r.fn(std::span<const double>(r.output->grad), std::span<std::vector<double>* const>(slots));
    // Interior gradients are not needed once propagated.
    if (r.output != root) std::vector<double>().swap(r.output->grad);
  }
  clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

Tape* active_tape() { return g_active; }

Tensor finish(const std::string& tag, Shape shape, std::vector<double> values,
              const std::vector<Tensor>& inputs, GradFn fn) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError(tag + " produced a non-finite value at flat index " + std::to_string(i));
    }
  }
  Tensor out = make_result(std::move(shape), std::move(values));
  Tape* tape = active_tape();
  if (tape == nullptr) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) tape->record(tag, inputs, out, std::move(fn));
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.node()->tape == nullptr) {
    if (loss.defined() && loss.numel() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    throw GraphError("backward on a detached tensor (no computation record)");
  }
  loss.node()->tape->backward(loss);
}

}  // namespace hiss::ndgrad
