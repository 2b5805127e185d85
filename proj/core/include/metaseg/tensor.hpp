#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metaseg/common.hpp"

namespace metaseg {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// Flat row-major storage plus an optional gradient of the same shape.
// Exactly one of data32/data64 is active, selected by dtype.
struct TensorImpl {
  Shape shape;
  Dtype dtype = Dtype::f64;
  std::vector<float> data32;
  std::vector<double> data64;
  bool requires_grad = false;
  std::vector<float> grad32;
  std::vector<double> grad64;

  int64_t numel() const { return numel_of(shape); }
  bool has_grad() const { return !grad32.empty() || !grad64.empty(); }

  template <typename T>
  std::vector<T>& data();
  template <typename T>
  const std::vector<T>& data() const;
  template <typename T>
  std::vector<T>& grad();

  void ensure_grad();   // allocate zero-filled grad if absent
  void drop_grad();
};

template <>
inline std::vector<float>& TensorImpl::data<float>() { return data32; }
template <>
inline std::vector<double>& TensorImpl::data<double>() { return data64; }
template <>
inline const std::vector<float>& TensorImpl::data<float>() const { return data32; }
template <>
inline const std::vector<double>& TensorImpl::data<double>() const { return data64; }
template <>
inline std::vector<float>& TensorImpl::grad<float>() { return grad32; }
template <>
inline std::vector<double>& TensorImpl::grad<double>() { return grad64; }

// Value-semantic handle onto shared storage. Copies alias; clone() deep-copies.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor zeros_like(const Tensor& t);
  static Tensor full(const Shape& s, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from(const Shape& s, const std::vector<double>& values,
                     bool requires_grad = false);
  static Tensor randn(const Shape& s, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor rand_uniform(const Shape& s, Rng& rng, double lo, double hi,
                             bool requires_grad = false);
  static Tensor trunc_normal(const Shape& s, Rng& rng, double stddev,
                             bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->numel(); }
  int64_t dim(int i) const;  // supports negative indexing
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  Dtype dtype() const { return impl_->dtype; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  double at(int64_t flat) const;
  double at(std::initializer_list<int64_t> idx) const;
  void set(int64_t flat, double v);
  std::vector<double> to_vector() const;
  void copy_from(const std::vector<double>& values);

  bool has_grad() const { return impl_->has_grad(); }
  std::vector<double> grad_vector() const;
  void zero_grad();

  Tensor clone() const;   // deep copy of values (grad not copied)
  Tensor detach() const;  // deep copy with requires_grad = false

  void check_finite(const std::string& context) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// --------------------------------------------------------------------------
// Autograd tape. Single-threaded: ops append nodes in execution order, which
// is already topological; backward() replays them once in reverse and clears.
// --------------------------------------------------------------------------

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

void tape_push(std::function<void()> node);
size_t tape_size();
void tape_clear();

// Populates grads of every requires_grad tensor reachable from loss, then
// clears the tape. loss must be a scalar (numel 1).
void backward(const Tensor& loss);

// --------------------------------------------------------------------------
// Operations. All record backward rules when grad is enabled and any input
// requires grad. Binary elementwise ops broadcast numpy-style (right-aligned,
// size-1 dims expand), intended for leading batch dimensions.
// --------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor rsqrt(const Tensor& a, double eps = 0.0);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum_all(const Tensor& a);                       // -> shape {1}
Tensor sum(const Tensor& a, int axis, bool keepdim);
Tensor mean(const Tensor& a, int axis, bool keepdim);

Tensor reshape(const Tensor& a, const Shape& s);       // one dim may be -1
Tensor permute(const Tensor& a, const std::vector<int>& dims);
Tensor transpose_last2(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);

// Batched matrix product a[..,m,k] x b[..,k,n]; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Two linear layers in->4*in->in with GELU between.
Tensor mlp_block(const Tensor& x, const Tensor& w1, const Tensor& b1,
                 const Tensor& w2, const Tensor& b2);

// x[..,in] * w[in,out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Row gather: table[V,C], ids -> [ids.size(),C]; backward scatter-adds.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& row_idx);
Tensor gather_elems(const Tensor& x, const std::vector<int64_t>& elem_idx,
                    const Shape& out_shape);

// x[B,K,h,w] -> [B,K,H,W], align-corners bilinear (exact on affine ramps).
Tensor bilinear_upsample(const Tensor& x, int64_t out_h, int64_t out_w);

// --------------------------------------------------------------------------
// Finite-difference gradient checker.
// --------------------------------------------------------------------------

struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t coords_checked = 0;
  int64_t worst_coord = -1;
  bool pass = false;
};

// Central differences of a scalar-valued f at x against the analytic grad.
// max_coords > 0 samples that many coordinates (seeded); 0 checks all.
FdReport fd_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h = 1e-5, double tol = 1e-4, int64_t max_coords = 0,
                  uint64_t coord_seed = 0);

}  // namespace metaseg
