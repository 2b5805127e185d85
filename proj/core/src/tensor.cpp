#include "metaseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace metaseg {

namespace {
Dtype g_default_dtype = Dtype::f64;
}

Dtype default_dtype() { return g_default_dtype; }
void set_default_dtype(Dtype d) { g_default_dtype = d; }

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::shared_ptr<TensorImpl> make_impl(const Shape& s, bool requires_grad) {
  for (int64_t d : s) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got shape " + shape_str(s));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = s;
  impl->dtype = g_default_dtype;
  impl->requires_grad = requires_grad;
  int64_t n = impl->numel();
  if (impl->dtype == Dtype::f32)
    impl->data32.assign(static_cast<size_t>(n), 0.0f);
  else
    impl->data64.assign(static_cast<size_t>(n), 0.0);
  return impl;
}

}  // namespace

void TensorImpl::ensure_grad() {
  if (has_grad()) return;
  int64_t n = numel();
  if (dtype == Dtype::f32)
    grad32.assign(static_cast<size_t>(n), 0.0f);
  else
    grad64.assign(static_cast<size_t>(n), 0.0);
}

void TensorImpl::drop_grad() {
  grad32.clear();
  grad64.clear();
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  return Tensor(make_impl(s, requires_grad));
}

Tensor Tensor::zeros_like(const Tensor& t) { return zeros(t.shape()); }

Tensor Tensor::full(const Shape& s, double value, bool requires_grad) {
  Tensor t(make_impl(s, requires_grad));
  if (t.dtype() == Dtype::f32)
    std::fill(t.impl()->data32.begin(), t.impl()->data32.end(), static_cast<float>(value));
  else
    std::fill(t.impl()->data64.begin(), t.impl()->data64.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(const Shape& s, const std::vector<double>& values, bool requires_grad) {
  Tensor t(make_impl(s, requires_grad));
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw ShapeError("from(): " + std::to_string(values.size()) + " values for shape " + shape_str(s));
  t.copy_from(values);
  return t;
}

Tensor Tensor::randn(const Shape& s, Rng& rng, double stddev, bool requires_grad) {
  Tensor t(make_impl(s, requires_grad));
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, rng.normal() * stddev);
  return t;
}

Tensor Tensor::rand_uniform(const Shape& s, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(make_impl(s, requires_grad));
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

Tensor Tensor::trunc_normal(const Shape& s, Rng& rng, double stddev, bool requires_grad) {
  Tensor t(make_impl(s, requires_grad));
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, rng.trunc_normal(stddev));
  return t;
}

int64_t Tensor::dim(int i) const {
  int nd = ndim();
  if (i < 0) i += nd;
  if (i < 0 || i >= nd)
    throw ShapeError("dim index " + std::to_string(i) + " out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<size_t>(i)];
}

double Tensor::at(int64_t flat) const {
  return impl_->dtype == Dtype::f32 ? static_cast<double>(impl_->data32[static_cast<size_t>(flat)])
                                    : impl_->data64[static_cast<size_t>(flat)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != ndim())
    throw ShapeError("index rank mismatch for " + shape_str(shape()));
  int64_t flat = 0;
  auto it = idx.begin();
  for (size_t d = 0; d < impl_->shape.size(); ++d, ++it) {
    if (*it < 0 || *it >= impl_->shape[d]) throw ShapeError("index out of bounds");
    flat = flat * impl_->shape[d] + *it;
  }
  return at(flat);
}

void Tensor::set(int64_t flat, double v) {
  if (impl_->dtype == Dtype::f32)
    impl_->data32[static_cast<size_t>(flat)] = static_cast<float>(v);
  else
    impl_->data64[static_cast<size_t>(flat)] = v;
}

std::vector<double> Tensor::to_vector() const {
  int64_t n = numel();
  std::vector<double> out(static_cast<size_t>(n));
  if (impl_->dtype == Dtype::f32)
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = impl_->data32[static_cast<size_t>(i)];
  else
    out = impl_->data64;
  return out;
}

void Tensor::copy_from(const std::vector<double>& values) {
  if (static_cast<int64_t>(values.size()) != numel())
    throw ShapeError("copy_from(): size mismatch");
  if (impl_->dtype == Dtype::f32)
    for (size_t i = 0; i < values.size(); ++i) impl_->data32[i] = static_cast<float>(values[i]);
  else
    impl_->data64 = values;
}

std::vector<double> Tensor::grad_vector() const {
  int64_t n = numel();
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  if (!has_grad()) return out;
  if (impl_->dtype == Dtype::f32)
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = impl_->grad32[static_cast<size_t>(i)];
  else
    out = impl_->grad64;
  return out;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad32.begin(), impl_->grad32.end(), 0.0f);
  std::fill(impl_->grad64.begin(), impl_->grad64.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data32 = impl_->data32;
  impl->data64 = impl_->data64;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(impl);
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.impl()->requires_grad = false;
  return t;
}

void Tensor::check_finite(const std::string& context) const {
  int64_t n = numel();
  for (int64_t i = 0; i < n; ++i) {
    double v = at(i);
    if (!std::isfinite(v))
      throw NumericError(context + ": non-finite value " + std::to_string(v) + " at flat index " +
                         std::to_string(i));
  }
}

}  // namespace metaseg
