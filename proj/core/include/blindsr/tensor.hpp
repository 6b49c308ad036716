#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace blindsr {

// Dense row-major f64 tensors with define-by-run reverse-mode autodiff.
// Everything is f64: gradient-check tolerances assume it, and correctness
// outranks speed at this scale.

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
std::vector<int64_t> row_major_strides(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;   // empty until the backward pass touches it
  int64_t tape_index = -1;    // node that produced this value; -1 for leaves
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  int64_t numel() const;
  int64_t extent(int64_t axis) const;  // negative axes allowed

  double* data();
  const double* data() const;
  const std::vector<double>& vec() const;
  double item() const;  // scalar tensors only
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  bool has_grad() const;
  const std::vector<double>& grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  Tensor clone() const;    // deep copy, detached leaf
  Tensor detach() const;   // shares data, drops tape linkage and grad flag

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---- tape ----------------------------------------------------------------

struct TapeNode {
  const char* op = nullptr;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> out;
  // reads out->grad, accumulates into inputs' grads
  std::function<void(TapeNode&)> backward;
};

// One tape per thread, in forward execution order. A tape and its tensors
// are confined to the thread that built them.
class Tape {
 public:
  static Tape& current();
  std::vector<TapeNode> nodes;
  size_t size() const { return nodes.size(); }
  void clear();
};

bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Backpropagate from a scalar root through the thread's tape. Every
// requires_grad leaf reachable from the root receives its accumulated
// gradient; the tape is consumed.
void backward(const Tensor& root);

// Accumulates g (length n) into t's grad if t requires it.
void accumulate_grad(const std::shared_ptr<TensorImpl>& t, const double* g,
                     int64_t n);

// Op builder used by all differentiable operations: computes requires_grad,
// optionally records a tape node, and runs finiteness checks when enabled.
Tensor make_op_result(Shape shape, std::vector<double> data, const char* op,
                      std::initializer_list<Tensor> inputs,
                      std::function<void(TapeNode&)> backward_fn);

void check_all_finite(const Tensor& t, const char* what);

}  // namespace blindsr
