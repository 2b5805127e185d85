#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "metaseg/tensor.hpp"

namespace metaseg {

namespace {

#define MS_DISPATCH(DT, ...)                        \
  do {                                              \
    if ((DT) == Dtype::f64) {                       \
      using scalar_t = double;                      \
      __VA_ARGS__;                                  \
    } else {                                        \
      using scalar_t = float;                       \
      __VA_ARGS__;                                  \
    }                                               \
  } while (0)

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Tensor make_with_dtype(const Shape& s, Dtype dt) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = s;
  impl->dtype = dt;
  int64_t n = impl->numel();
  if (dt == Dtype::f32)
    impl->data32.assign(static_cast<size_t>(n), 0.0f);
  else
    impl->data64.assign(static_cast<size_t>(n), 0.0);
  return Tensor(impl);
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()) + ")");
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (size_t i = 0; i < nd; ++i) {
    int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes not broadcastable " + shape_str(a) + " vs " +
                       shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `s` right-aligned to rank `nd`, 0 for broadcast dims.
std::vector<int64_t> bcast_strides(const Shape& s, size_t nd) {
  std::vector<int64_t> strides(nd, 0);
  int64_t acc = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    size_t src = s.size() - 1 - i;
    size_t dst = nd - 1 - i;
    strides[dst] = (s[src] == 1) ? 0 : acc;
    acc *= s[src];
  }
  return strides;
}

// Odometer walk over `os`, yielding flat output index plus the two input
// offsets under broadcast strides.
template <typename F>
void bcast_iterate(const Shape& os, const std::vector<int64_t>& sa,
                   const std::vector<int64_t>& sb, F&& f) {
  int nd = static_cast<int>(os.size());
  int64_t total = numel_of(os);
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  int64_t ia = 0, ib = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    f(flat, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      ia += sa[static_cast<size_t>(d)];
      ib += sb[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
      ia -= sa[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
      ib -= sb[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

bool want_grad(const Tensor& a) { return grad_enabled() && a.requires_grad(); }
bool want_grad(const Tensor& a, const Tensor& b) {
  return grad_enabled() && (a.requires_grad() || b.requires_grad());
}

// Generic binary elementwise op with broadcast.
// fwd(av, bv) -> out value; bwd_a(go, av, bv), bwd_b(go, av, bv) -> grad terms.
template <typename FwdOp, typename BwdA, typename BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdOp fwd, BwdA bwd_a,
                 BwdB bwd_b) {
  check_same_dtype(a, b, name);
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  auto sa = bcast_strides(a.shape(), os.size());
  auto sb = bcast_strides(b.shape(), os.size());
  Tensor out = make_with_dtype(os, a.dtype());
  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    const auto& bd = b.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    bcast_iterate(os, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
      od[static_cast<size_t>(o)] =
          fwd(ad[static_cast<size_t>(ia)], bd[static_cast<size_t>(ib)]);
    });
  });
  if (want_grad(a, b)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape_push([ai, bi, oi, os, sa, sb, bwd_a, bwd_b]() {
      if (!oi->has_grad()) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        const auto& ad = ai->data<scalar_t>();
        const auto& bd = bi->data<scalar_t>();
        if (ai->requires_grad) ai->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        auto* ga = ai->requires_grad ? ai->grad<scalar_t>().data() : nullptr;
        auto* gb = bi->requires_grad ? bi->grad<scalar_t>().data() : nullptr;
        bcast_iterate(os, sa, sb, [&](int64_t o, int64_t ia2, int64_t ib2) {
          double g = static_cast<double>(go[static_cast<size_t>(o)]);
          double av = static_cast<double>(ad[static_cast<size_t>(ia2)]);
          double bv = static_cast<double>(bd[static_cast<size_t>(ib2)]);
          if (ga) ga[ia2] += static_cast<scalar_t>(bwd_a(g, av, bv));
          if (gb) gb[ib2] += static_cast<scalar_t>(bwd_b(g, av, bv));
        });
      });
    });
  }
  return out;
}

// Generic unary elementwise op. bwd(go, xv, yv) -> grad term.
template <typename FwdOp, typename BwdOp>
Tensor unary_op(const Tensor& a, FwdOp fwd, BwdOp bwd) {
  Tensor out = make_with_dtype(a.shape(), a.dtype());
  int64_t n = a.numel();
  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (int64_t i = 0; i < n; ++i)
      od[static_cast<size_t>(i)] =
          static_cast<scalar_t>(fwd(static_cast<double>(ad[static_cast<size_t>(i)])));
  });
  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    tape_push([ai, oi, n, bwd]() {
      if (!oi->has_grad()) return;
      if (!ai->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        const auto& ad = ai->data<scalar_t>();
        const auto& od = oi->data<scalar_t>();
        ai->ensure_grad();
        auto& ga = ai->grad<scalar_t>();
        for (int64_t i = 0; i < n; ++i) {
          size_t k = static_cast<size_t>(i);
          ga[k] += static_cast<scalar_t>(bwd(static_cast<double>(go[k]),
                                             static_cast<double>(ad[k]),
                                             static_cast<double>(od[k])));
        }
      });
    });
  }
  return out;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double g, double, double) { return g * s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double g, double x, double) { return g / x; });
}

Tensor gelu(const Tensor& a) {
  return unary_op(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double g, double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return g * (cdf + x * pdf);
      });
}

Tensor rsqrt(const Tensor& a, double eps) {
  return unary_op(
      a, [eps](double x) { return 1.0 / std::sqrt(x + eps); },
      [](double g, double, double y) { return g * (-0.5) * y * y * y; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  // Gradient passes on the closed interval [lo, hi].
  return unary_op(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double g, double x, double) { return (x >= lo && x <= hi) ? g : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  Tensor out = make_with_dtype({1}, a.dtype());
  int64_t n = a.numel();
  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    scalar_t acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += ad[static_cast<size_t>(i)];
    out.impl()->data<scalar_t>()[0] = acc;
  });
  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    tape_push([ai, oi, n]() {
      if (!oi->has_grad() || !ai->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        scalar_t g = oi->grad<scalar_t>()[0];
        ai->ensure_grad();
        auto& ga = ai->grad<scalar_t>();
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g;
      });
    });
  }
  return out;
}

namespace {

void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& n, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim)
    throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  axis = normalize_axis(axis, a.ndim(), "sum");
  int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  Shape os = a.shape();
  if (keepdim)
    os[static_cast<size_t>(axis)] = 1;
  else
    os.erase(os.begin() + axis);
  if (os.empty()) os = {1};
  Tensor out = make_with_dtype(os, a.dtype());
  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < inner; ++i)
          od[static_cast<size_t>(o * inner + i)] +=
              ad[static_cast<size_t>((o * n + j) * inner + i)];
  });
  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    tape_push([ai, oi, outer, n, inner]() {
      if (!oi->has_grad() || !ai->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        ai->ensure_grad();
        auto& ga = ai->grad<scalar_t>();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t j = 0; j < n; ++j)
            for (int64_t i = 0; i < inner; ++i)
              ga[static_cast<size_t>((o * n + j) * inner + i)] +=
                  go[static_cast<size_t>(o * inner + i)];
      });
    });
  }
  return out;
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  int ax = normalize_axis(axis, a.ndim(), "mean");
  double inv = 1.0 / static_cast<double>(a.shape()[static_cast<size_t>(ax)]);
  return mul_scalar(sum(a, axis, keepdim), inv);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& s_in) {
  Shape s = s_in;
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 dim");
      infer = static_cast<int>(i);
    } else {
      known *= s[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0)
      throw ShapeError("reshape: cannot infer dim for " + shape_str(a.shape()) + " -> " +
                       shape_str(s_in));
    s[static_cast<size_t>(infer)] = a.numel() / known;
  }
  if (numel_of(s) != a.numel())
    throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                     shape_str(s));
  Tensor out = make_with_dtype(s, a.dtype());
  out.impl()->data32 = a.impl()->data32;
  out.impl()->data64 = a.impl()->data64;
  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    tape_push([ai, oi]() {
      if (!oi->has_grad() || !ai->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        ai->ensure_grad();
        auto& ga = ai->grad<scalar_t>();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      });
    });
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& dims) {
  int nd = a.ndim();
  if (static_cast<int>(dims.size()) != nd) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  Shape os(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    int d = dims[static_cast<size_t>(i)];
    if (d < 0 || d >= nd || seen[static_cast<size_t>(d)]) throw ShapeError("permute: bad dims");
    seen[static_cast<size_t>(d)] = true;
    os[static_cast<size_t>(i)] = a.shape()[static_cast<size_t>(d)];
  }
  // in strides, then reordered so walking the output picks the right input.
  std::vector<int64_t> in_strides(static_cast<size_t>(nd));
  int64_t acc = 1;
  for (int i = nd - 1; i >= 0; --i) {
    in_strides[static_cast<size_t>(i)] = acc;
    acc *= a.shape()[static_cast<size_t>(i)];
  }
  std::vector<int64_t> walk(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i)
    walk[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(dims[static_cast<size_t>(i)])];

  Tensor out = make_with_dtype(os, a.dtype());
  std::vector<int64_t> zero(static_cast<size_t>(nd), 0);
  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    bcast_iterate(os, walk, zero, [&](int64_t o, int64_t ia, int64_t) {
      od[static_cast<size_t>(o)] = ad[static_cast<size_t>(ia)];
    });
  });
  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    tape_push([ai, oi, os, walk, zero]() {
      if (!oi->has_grad() || !ai->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        ai->ensure_grad();
        auto& ga = ai->grad<scalar_t>();
        bcast_iterate(os, walk, zero, [&](int64_t o, int64_t ia, int64_t) {
          ga[static_cast<size_t>(ia)] += go[static_cast<size_t>(o)];
        });
      });
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& a) {
  int nd = a.ndim();
  if (nd < 2) throw ShapeError("transpose_last2: need rank >= 2");
  std::vector<int> dims(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) dims[static_cast<size_t>(i)] = i;
  std::swap(dims[static_cast<size_t>(nd - 1)], dims[static_cast<size_t>(nd - 2)]);
  return permute(a, dims);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  int nd = parts[0].ndim();
  int ax = normalize_axis(axis, nd, "concat");
  Shape os = parts[0].shape();
  int64_t total_axis = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
    check_same_dtype(parts[0], p, "concat");
    for (int i = 0; i < nd; ++i)
      if (i != ax && p.shape()[static_cast<size_t>(i)] != os[static_cast<size_t>(i)])
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(os));
    total_axis += p.shape()[static_cast<size_t>(ax)];
  }
  os[static_cast<size_t>(ax)] = total_axis;
  Tensor out = make_with_dtype(os, parts[0].dtype());

  int64_t outer, n_out, inner;
  axis_split(os, ax, outer, n_out, inner);
  bool rec = false;
  for (const auto& p : parts) rec = rec || want_grad(p);

  int64_t axis_off = 0;
  for (const auto& p : parts) {
    int64_t np = p.shape()[static_cast<size_t>(ax)];
    MS_DISPATCH(out.dtype(), {
      const auto& pd = p.impl()->data<scalar_t>();
      auto& od = out.impl()->data<scalar_t>();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < np; ++j)
          std::copy_n(pd.data() + (o * np + j) * inner, inner,
                      od.data() + (o * n_out + axis_off + j) * inner);
    });
    if (rec && grad_enabled()) {
      auto pi = p.impl();
      auto oi = out.impl();
      int64_t off = axis_off;
      tape_push([pi, oi, outer, n_out, inner, np, off]() {
        if (!oi->has_grad() || !pi->requires_grad) return;
        MS_DISPATCH(oi->dtype, {
          const auto& go = oi->grad<scalar_t>();
          pi->ensure_grad();
          auto& gp = pi->grad<scalar_t>();
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < np; ++j) {
              const scalar_t* src = go.data() + (o * n_out + off + j) * inner;
              scalar_t* dst = gp.data() + (o * np + j) * inner;
              for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
        });
      });
    }
    axis_off += np;
  }
  if (rec) out.set_requires_grad(true);
  return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  int ax = normalize_axis(axis, a.ndim(), "slice");
  int64_t n = a.shape()[static_cast<size_t>(ax)];
  if (start < 0 || len <= 0 || start + len > n)
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of bounds for axis size " + std::to_string(n));
  Shape os = a.shape();
  os[static_cast<size_t>(ax)] = len;
  int64_t outer, n_in, inner;
  axis_split(a.shape(), ax, outer, n_in, inner);
  Tensor out = make_with_dtype(os, a.dtype());
  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < len; ++j)
        std::copy_n(ad.data() + (o * n_in + start + j) * inner, inner,
                    od.data() + (o * len + j) * inner);
  });
  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    tape_push([ai, oi, outer, n_in, inner, start, len]() {
      if (!oi->has_grad() || !ai->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        ai->ensure_grad();
        auto& ga = ai->grad<scalar_t>();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t j = 0; j < len; ++j) {
            const scalar_t* src = go.data() + (o * len + j) * inner;
            scalar_t* dst = ga.data() + (o * n_in + start + j) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "matmul");
  if (a.ndim() < 2 || b.ndim() < 2)
    throw ShapeError("matmul: need rank >= 2, got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  int64_t m = a.dim(-2), ka = a.dim(-1);
  int64_t kb = b.dim(-2), n = b.dim(-1);
  if (ka != kb)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shape(a_batch, b_batch, "matmul");
  auto sa = bcast_strides(a_batch, batch.size());
  auto sb = bcast_strides(b_batch, batch.size());

  Shape os = batch;
  os.push_back(m);
  os.push_back(n);
  Tensor out = make_with_dtype(os, a.dtype());

  Shape batch_or_one = batch.empty() ? Shape{1} : batch;
  std::vector<int64_t> sa_w = batch.empty() ? std::vector<int64_t>{0} : sa;
  std::vector<int64_t> sb_w = batch.empty() ? std::vector<int64_t>{0} : sb;

  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    const auto& bd = b.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    bcast_iterate(batch_or_one, sa_w, sb_w, [&](int64_t o, int64_t ia, int64_t ib) {
      ConstMatMap<scalar_t> A(ad.data() + ia * m * ka, m, ka);
      ConstMatMap<scalar_t> B(bd.data() + ib * ka * n, ka, n);
      MatMap<scalar_t> C(od.data() + o * m * n, m, n);
      C.noalias() = A * B;
    });
  });

  if (want_grad(a, b)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape_push([ai, bi, oi, batch_or_one, sa_w, sb_w, m, ka, n]() {
      if (!oi->has_grad()) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        const auto& ad = ai->data<scalar_t>();
        const auto& bd = bi->data<scalar_t>();
        if (ai->requires_grad) ai->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        bcast_iterate(batch_or_one, sa_w, sb_w, [&](int64_t o, int64_t ia, int64_t ib) {
          ConstMatMap<scalar_t> G(go.data() + o * m * n, m, n);
          if (ai->requires_grad) {
            ConstMatMap<scalar_t> B(bd.data() + ib * ka * n, ka, n);
            MatMap<scalar_t> GA(ai->grad<scalar_t>().data() + ia * m * ka, m, ka);
            GA.noalias() += G * B.transpose();
          }
          if (bi->requires_grad) {
            ConstMatMap<scalar_t> A(ad.data() + ia * m * ka, m, ka);
            MatMap<scalar_t> GB(bi->grad<scalar_t>().data() + ib * ka * n, ka, n);
            GB.noalias() += A.transpose() * G;
          }
        });
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / composite blocks
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  int ax = normalize_axis(axis, a.ndim(), "softmax");
  int64_t outer, n, inner;
  axis_split(a.shape(), ax, outer, n, inner);
  Tensor out = make_with_dtype(a.shape(), a.dtype());
  MS_DISPATCH(a.dtype(), {
    const auto& ad = a.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * n * inner + i;
        scalar_t mx = ad[static_cast<size_t>(base)];
        for (int64_t j = 1; j < n; ++j)
          mx = std::max(mx, ad[static_cast<size_t>(base + j * inner)]);
        scalar_t total = 0;
        for (int64_t j = 0; j < n; ++j) {
          scalar_t e = std::exp(ad[static_cast<size_t>(base + j * inner)] - mx);
          od[static_cast<size_t>(base + j * inner)] = e;
          total += e;
        }
        scalar_t inv = scalar_t(1) / total;
        for (int64_t j = 0; j < n; ++j) od[static_cast<size_t>(base + j * inner)] *= inv;
      }
  });
  if (want_grad(a)) {
    out.set_requires_grad(true);
    auto ai = a.impl(), oi = out.impl();
    tape_push([ai, oi, outer, n, inner]() {
      if (!oi->has_grad() || !ai->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        const auto& y = oi->data<scalar_t>();
        ai->ensure_grad();
        auto& ga = ai->grad<scalar_t>();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * n * inner + i;
            scalar_t dot = 0;
            for (int64_t j = 0; j < n; ++j) {
              size_t k = static_cast<size_t>(base + j * inner);
              dot += go[k] * y[k];
            }
            for (int64_t j = 0; j < n; ++j) {
              size_t k = static_cast<size_t>(base + j * inner);
              ga[k] += y[k] * (go[k] - dot);
            }
          }
      });
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_same_dtype(x, gamma, "layer_norm");
  check_same_dtype(x, beta, "layer_norm");
  int64_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(c) + " elements");
  int64_t rows = x.numel() / c;
  Tensor out = make_with_dtype(x.shape(), x.dtype());
  // xhat and rstd are needed by the backward pass.
  auto saved_xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto saved_rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  MS_DISPATCH(x.dtype(), {
    const auto& xd = x.impl()->data<scalar_t>();
    const auto& gd = gamma.impl()->data<scalar_t>();
    const auto& bd = beta.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (int64_t r = 0; r < rows; ++r) {
      const scalar_t* xr = xd.data() + r * c;
      scalar_t* orow = od.data() + r * c;
      double mu = 0;
      for (int64_t j = 0; j < c; ++j) mu += static_cast<double>(xr[j]);
      mu /= static_cast<double>(c);
      double var = 0;
      for (int64_t j = 0; j < c; ++j) {
        double d = static_cast<double>(xr[j]) - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      double rstd = 1.0 / std::sqrt(var + eps);
      (*saved_rstd)[static_cast<size_t>(r)] = rstd;
      for (int64_t j = 0; j < c; ++j) {
        double xh = (static_cast<double>(xr[j]) - mu) * rstd;
        (*saved_xhat)[static_cast<size_t>(r * c + j)] = xh;
        orow[j] = static_cast<scalar_t>(xh * static_cast<double>(gd[static_cast<size_t>(j)]) +
                                        static_cast<double>(bd[static_cast<size_t>(j)]));
      }
    }
  });
  bool rec = grad_enabled() &&
             (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  if (rec) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    tape_push([xi, gi, bi, oi, saved_xhat, saved_rstd, rows, c]() {
      if (!oi->has_grad()) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        const auto& gd = gi->data<scalar_t>();
        if (xi->requires_grad) xi->ensure_grad();
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const scalar_t* gor = go.data() + r * c;
          const double* xh = saved_xhat->data() + r * c;
          double rstd = (*saved_rstd)[static_cast<size_t>(r)];
          if (gi->requires_grad || bi->requires_grad) {
            for (int64_t j = 0; j < c; ++j) {
              if (gi->requires_grad)
                gi->grad<scalar_t>()[static_cast<size_t>(j)] +=
                    static_cast<scalar_t>(static_cast<double>(gor[j]) * xh[j]);
              if (bi->requires_grad) bi->grad<scalar_t>()[static_cast<size_t>(j)] += gor[j];
            }
          }
          if (xi->requires_grad) {
            double mean_gy = 0, mean_gyxh = 0;
            for (int64_t j = 0; j < c; ++j) {
              double gy = static_cast<double>(gor[j]) * static_cast<double>(gd[static_cast<size_t>(j)]);
              mean_gy += gy;
              mean_gyxh += gy * xh[j];
            }
            mean_gy /= static_cast<double>(c);
            mean_gyxh /= static_cast<double>(c);
            auto& gx = xi->grad<scalar_t>();
            for (int64_t j = 0; j < c; ++j) {
              double gy = static_cast<double>(gor[j]) * static_cast<double>(gd[static_cast<size_t>(j)]);
              gx[static_cast<size_t>(r * c + j)] +=
                  static_cast<scalar_t>(rstd * (gy - mean_gy - xh[j] * mean_gyxh));
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2)
    throw ShapeError("linear: weight must be 2-d, got " + shape_str(w.shape()));
  if (x.dim(-1) != w.dim(0))
    throw ShapeError("linear: input width " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  if (b.numel() != w.dim(1))
    throw ShapeError("linear: bias size " + std::to_string(b.numel()) + " does not match weight " +
                     shape_str(w.shape()));
  return add(matmul(x, w), b);
}

Tensor mlp_block(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                 const Tensor& b2) {
  if (w1.dim(0) != x.dim(-1) || w2.dim(1) != x.dim(-1) || w1.dim(1) != w2.dim(0))
    throw ShapeError("mlp_block: parameter shapes " + shape_str(w1.shape()) + "/" +
                     shape_str(w2.shape()) + " do not fit input " + shape_str(x.shape()));
  return linear(gelu(linear(x, w1, b1)), w2, b2);
}

// ---------------------------------------------------------------------------
// Gathers
// ---------------------------------------------------------------------------

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& row_idx) {
  if (x.ndim() != 2) throw ShapeError("gather_rows: need 2-d input");
  int64_t rows = x.dim(0), c = x.dim(1);
  for (int64_t r : row_idx)
    if (r < 0 || r >= rows) throw ValueError("gather_rows: row index out of range");
  Tensor out = make_with_dtype({static_cast<int64_t>(row_idx.size()), c}, x.dtype());
  MS_DISPATCH(x.dtype(), {
    const auto& xd = x.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (size_t i = 0; i < row_idx.size(); ++i)
      std::copy_n(xd.data() + row_idx[i] * c, c, od.data() + static_cast<int64_t>(i) * c);
  });
  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    tape_push([xi, oi, row_idx, c]() {
      if (!oi->has_grad() || !xi->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        xi->ensure_grad();
        auto& gx = xi->grad<scalar_t>();
        for (size_t i = 0; i < row_idx.size(); ++i) {
          const scalar_t* src = go.data() + static_cast<int64_t>(i) * c;
          scalar_t* dst = gx.data() + row_idx[i] * c;
          for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      });
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ShapeError("embedding: table must be 2-d");
  int64_t vocab = table.dim(0);
  std::vector<int64_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= vocab)
      throw ValueError("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    rows.push_back(id);
  }
  return gather_rows(table, rows);
}

Tensor gather_elems(const Tensor& x, const std::vector<int64_t>& elem_idx, const Shape& out_shape) {
  if (numel_of(out_shape) != static_cast<int64_t>(elem_idx.size()))
    throw ShapeError("gather_elems: index count does not match output shape");
  int64_t n = x.numel();
  for (int64_t e : elem_idx)
    if (e < 0 || e >= n) throw ValueError("gather_elems: index out of range");
  Tensor out = make_with_dtype(out_shape, x.dtype());
  MS_DISPATCH(x.dtype(), {
    const auto& xd = x.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (size_t i = 0; i < elem_idx.size(); ++i) od[i] = xd[static_cast<size_t>(elem_idx[i])];
  });
  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    tape_push([xi, oi, elem_idx]() {
      if (!oi->has_grad() || !xi->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        xi->ensure_grad();
        auto& gx = xi->grad<scalar_t>();
        for (size_t i = 0; i < elem_idx.size(); ++i)
          gx[static_cast<size_t>(elem_idx[i])] += go[i];
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (align-corners)
// ---------------------------------------------------------------------------

Tensor bilinear_upsample(const Tensor& x, int64_t out_h, int64_t out_w) {
  if (x.ndim() != 4) throw ShapeError("bilinear_upsample: need [B,K,h,w] input");
  int64_t b = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("bilinear_upsample: bad target size");
  Tensor out = make_with_dtype({b, k, out_h, out_w}, x.dtype());

  auto src_pos = [](int64_t o, int64_t out_n, int64_t in_n) {
    if (out_n == 1 || in_n == 1) return 0.0;
    return static_cast<double>(o) * static_cast<double>(in_n - 1) /
           static_cast<double>(out_n - 1);
  };

  MS_DISPATCH(x.dtype(), {
    const auto& xd = x.impl()->data<scalar_t>();
    auto& od = out.impl()->data<scalar_t>();
    for (int64_t bc = 0; bc < b * k; ++bc) {
      const scalar_t* plane = xd.data() + bc * h * w;
      scalar_t* oplane = od.data() + bc * out_h * out_w;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        double fy = src_pos(oy, out_h, h);
        int64_t y0 = static_cast<int64_t>(fy);
        int64_t y1 = std::min(y0 + 1, h - 1);
        double wy = fy - static_cast<double>(y0);
        for (int64_t ox = 0; ox < out_w; ++ox) {
          double fx = src_pos(ox, out_w, w);
          int64_t x0 = static_cast<int64_t>(fx);
          int64_t x1 = std::min(x0 + 1, w - 1);
          double wx = fx - static_cast<double>(x0);
          double v = (1 - wy) * (1 - wx) * static_cast<double>(plane[y0 * w + x0]) +
                     (1 - wy) * wx * static_cast<double>(plane[y0 * w + x1]) +
                     wy * (1 - wx) * static_cast<double>(plane[y1 * w + x0]) +
                     wy * wx * static_cast<double>(plane[y1 * w + x1]);
          oplane[oy * out_w + ox] = static_cast<scalar_t>(v);
        }
      }
    }
  });
  if (want_grad(x)) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    tape_push([xi, oi, b, k, h, w, out_h, out_w, src_pos]() {
      if (!oi->has_grad() || !xi->requires_grad) return;
      MS_DISPATCH(oi->dtype, {
        const auto& go = oi->grad<scalar_t>();
        xi->ensure_grad();
        auto& gx = xi->grad<scalar_t>();
        for (int64_t bc = 0; bc < b * k; ++bc) {
          const scalar_t* gplane = go.data() + bc * out_h * out_w;
          scalar_t* xplane = gx.data() + bc * h * w;
          for (int64_t oy = 0; oy < out_h; ++oy) {
            double fy = src_pos(oy, out_h, h);
            int64_t y0 = static_cast<int64_t>(fy);
            int64_t y1 = std::min(y0 + 1, h - 1);
            double wy = fy - static_cast<double>(y0);
            for (int64_t ox = 0; ox < out_w; ++ox) {
              double fx = src_pos(ox, out_w, w);
              int64_t x0 = static_cast<int64_t>(fx);
              int64_t x1 = std::min(x0 + 1, w - 1);
              double wx = fx - static_cast<double>(x0);
              double g = static_cast<double>(gplane[oy * out_w + ox]);
              xplane[y0 * w + x0] += static_cast<scalar_t>((1 - wy) * (1 - wx) * g);
              xplane[y0 * w + x1] += static_cast<scalar_t>((1 - wy) * wx * g);
              xplane[y1 * w + x0] += static_cast<scalar_t>(wy * (1 - wx) * g);
              xplane[y1 * w + x1] += static_cast<scalar_t>(wy * wx * g);
            }
          }
        }
      });
    });
  }
  return out;
}

}  // namespace metaseg
