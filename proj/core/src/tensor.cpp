#include "blindsr/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "blindsr/common.hpp"

namespace blindsr {

bool finite_checks_enabled() {
  static const bool enabled = [] {
    const char* v = std::getenv("BD_CHECK_FINITE");
    if (v != nullptr) return v[0] == '1';
#ifdef NDEBUG
    return false;
#else
    return true;
#endif
  }();
  return enabled;
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) oss << ",";
    oss << s[i];
  }
  oss << "]";
  return oss.str();
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  int64_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl()->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  BSR_CHECK(shape_numel(shape) == static_cast<int64_t>(data.size()),
            "from_data: shape " << shape_str(shape) << " wants "
                                << shape_numel(shape) << " values, got "
                                << data.size());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  BSR_CHECK(impl_ != nullptr, "use of undefined tensor");
  return impl_->shape;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }

int64_t Tensor::extent(int64_t axis) const {
  int64_t r = rank();
  if (axis < 0) axis += r;
  BSR_CHECK(axis >= 0 && axis < r, "axis out of range");
  return shape()[static_cast<size_t>(axis)];
}

double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }
const std::vector<double>& Tensor::vec() const { return impl_->data; }

double Tensor::item() const {
  BSR_CHECK(numel() == 1, "item(): tensor has " << numel() << " elements");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  BSR_CHECK(idx.size() == impl_->shape.size(), "at(): rank mismatch");
  auto strides = row_major_strides(impl_->shape);
  int64_t off = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    BSR_CHECK(i >= 0 && i < impl_->shape[d], "at(): index out of range");
    off += i * strides[d];
    ++d;
  }
  return impl_->data[static_cast<size_t>(off)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  BSR_CHECK(impl_ != nullptr, "set_requires_grad on undefined tensor");
  impl_->requires_grad = rg;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  BSR_CHECK(has_grad(), "tensor has no gradient");
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  BSR_CHECK(has_grad(), "tensor has no gradient");
  return Tensor::from_data(impl_->shape, impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
  return Tensor::from_data(impl_->shape, impl_->data, false);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = false;
  return Tensor(impl);
}

// ---- tape ------------------------------------------------------------------

namespace {
thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
}  // namespace

Tape& Tape::current() { return g_tape; }

void Tape::clear() {
  for (auto& n : nodes) {
    if (n.out) n.out->tape_index = -1;
  }
  nodes.clear();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void accumulate_grad(const std::shared_ptr<TensorImpl>& t, const double* g,
                     int64_t n) {
  if (!t->requires_grad) return;
  BSR_CHECK(static_cast<int64_t>(t->data.size()) == n,
            "gradient size mismatch");
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  double* dst = t->grad.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

void check_all_finite(const Tensor& t, const char* what) {
  for (double v : t.vec()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value produced by ") +
                               what);
    }
  }
}

Tensor make_op_result(Shape shape, std::vector<double> data, const char* op,
                      std::initializer_list<Tensor> inputs,
                      std::function<void(TapeNode&)> backward_fn) {
  bool rg = false;
  if (g_grad_enabled) {
    for (const Tensor& in : inputs) rg = rg || in.requires_grad();
  }
  Tensor out = Tensor::from_data(std::move(shape), std::move(data), rg);
  if (finite_checks_enabled()) check_all_finite(out, op);
  if (rg) {
    TapeNode node;
    node.op = op;
    node.inputs.reserve(inputs.size());
    for (const Tensor& in : inputs) node.inputs.push_back(in.impl());
    node.out = out.impl();
    node.backward = std::move(backward_fn);
    out.impl()->tape_index = static_cast<int64_t>(g_tape.nodes.size());
    g_tape.nodes.push_back(std::move(node));
  }
  return out;
}

void backward(const Tensor& root) {
  BSR_CHECK(root.defined(), "backward: undefined root");
  BSR_CHECK(root.rank() == 0, "backward: root must be a scalar, got shape "
                                  << shape_str(root.shape()));
  auto& tape = Tape::current();
  root.impl()->grad.assign(1, 1.0);
  int64_t start = root.impl()->tape_index;
  // The tape is in forward execution order, so its reverse is a valid
  // topological order of the graph.
  for (int64_t i = start; i >= 0; --i) {
    TapeNode& node = tape.nodes[static_cast<size_t>(i)];
    if (!node.out || node.out->grad.empty()) continue;
    node.backward(node);
  }
  tape.clear();
}

}  // namespace blindsr
