#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hiss::ndgrad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<const std::vector<double>> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  Tape* tape = nullptr;  // producing record for non-leaf nodes, reset once consumed
};

}  // namespace detail

/// Dense row-major array of doubles. Values are immutable once built; only
/// the gradient buffer changes, and only through backward().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Size of an axis; negative axes count from the back.
  std::size_t dim(long axis) const;

  std::span<const double> data() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no gradient tracking.
  Tensor detach() const;
  /// Fresh leaf sharing this tensor's storage, with its own gradient buffer.
  Tensor leaf(bool requires_grad = true) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, std::vector<double>);
};

/// Values materialized by tensors built on this thread since the last reset;
/// a memory proxy for benchmarks.
std::size_t values_built();
void reset_values_built();

/// Unrecorded tensor built from an op's output values.
Tensor make_result(Shape shape, std::vector<double> values);

/// Accumulates into per-input gradient buffers; a null pointer marks an input
/// that does not need its gradient.
using GradFn = std::function<void(std::span<const double> grad_out,
                                  std::span<std::vector<double>* const> grad_in)>;

/// The computation record: an append-only list of operations, each naming its
/// inputs and output by node id. Ids are handed out in creation order, so an
/// output id is always larger than its input ids.
class Tape {
 public:
  struct Entry {
    std::string tag;
    std::vector<long> inputs;
    long output;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::size_t size() const { return records_.size(); }
  std::vector<Entry> entries() const;
  void clear();

  void record(std::string tag, const std::vector<Tensor>& inputs, const Tensor& output, GradFn fn);
  void backward(const Tensor& loss);

 private:
  struct Record {
    Entry entry;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    GradFn fn;
  };

  long id_of(const std::shared_ptr<detail::Node>& node);

  std::vector<Record> records_;
  std::unordered_map<const detail::Node*, long> ids_;
  long next_id_ = 0;
};

/// Makes a tape the recording target of the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Finishes an op: rejects non-finite output, then records it on the active
/// tape when some input requires a gradient.
Tensor finish(const std::string& tag, Shape shape, std::vector<double> values,
              const std::vector<Tensor>& inputs, GradFn fn);

/// Populates gradients of every leaf reachable from a scalar loss and
/// consumes the record.
void backward(const Tensor& loss);

}  // namespace hiss::ndgrad
