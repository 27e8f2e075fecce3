#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "lmaml/tensor.hpp"
#include "tape_internal.hpp"

namespace lmaml {

namespace {

using detail::OpAttrs;
using detail::record;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

[[noreturn]] void mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T, typename F>
Tensor<T> binary(OpKind kind, const Tensor<T>& a, const Tensor<T>& b, F f) {
  if (a.shape() != b.shape()) mismatch(op_name(kind), a.shape(), b.shape());
  const auto x = a.values();
  const auto y = b.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return record<T>(kind, {&a, &b}, a.shape(), std::move(out));
}

template <typename T, typename F>
Tensor<T> unary(OpKind kind, const Tensor<T>& a, F f, OpAttrs<T> attrs = {}) {
  const auto x = a.values();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return record<T>(kind, {&a}, a.shape(), std::move(out), std::move(attrs));
}

void require_rank(std::string_view op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

struct ConvGeom {
  std::size_t n, ci, h, w, co, k, pad, ho, wo;
};

ConvGeom conv_geom(std::string_view op, const Shape& x, const Shape& w, std::size_t pad) {
  require_rank(op, x, 4);
  require_rank(op, w, 4);
  if (w[1] != x[1] || w[2] != w[3]) mismatch(op, x, w);
  const std::size_t k = w[2];
  if (x[2] + 2 * pad < k || x[3] + 2 * pad < k) mismatch(op, x, w);
  return {x[0], x[1], x[2], x[3], w[0], k, pad, x[2] + 2 * pad - k + 1, x[3] + 2 * pad - k + 1};
}

// col: (ci*k*k, ho*wo) for one image.
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* img) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          const T* src = row + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Strides for the (outer, axis, inner) view of `shape` around `axis`.
struct AxisView {
  std::size_t outer, len, inner;
};

AxisView axis_view(std::string_view op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, shape[axis], inner};
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(OpKind::Add, a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(OpKind::Sub, a, b, [](T x, T y) { return x - y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(OpKind::Mul, a, b, [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary(OpKind::Neg, a, [](T x) { return -x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  OpAttrs<T> attrs;
  attrs.scalar = factor;
  return unary(OpKind::Scale, a, [factor](T x) { return x * factor; }, std::move(attrs));
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  OpAttrs<T> attrs;
  attrs.scalar = offset;
  return unary(OpKind::AddScalar, a, [offset](T x) { return x + offset; }, std::move(attrs));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(OpKind::Exp, a, [](T x) { return std::exp(x); });
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& a) {
  return unary(OpKind::Rsqrt, a, [](T x) { return T{1} / std::sqrt(x); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const auto x = a.values();
  std::vector<T> out(x.size());
  std::vector<T> mask(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool pos = x[i] > T{0};
    out[i] = pos ? x[i] : T{0};
    mask[i] = pos ? T{1} : T{0};
  }
  OpAttrs<T> attrs;
  if (a.on_tape()) attrs.mask = std::make_shared<const std::vector<T>>(std::move(mask));
  return record<T>(OpKind::Relu, {&a}, a.shape(), std::move(out), std::move(attrs));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::size_t ka = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (ka != kb) mismatch("matmul", a.shape(), b.shape());

  std::vector<T> out(m * n);
  MapC<T> A(a.values().data(), static_cast<Eigen::Index>(a.shape()[0]),
            static_cast<Eigen::Index>(a.shape()[1]));
  MapC<T> B(b.values().data(), static_cast<Eigen::Index>(b.shape()[0]),
            static_cast<Eigen::Index>(b.shape()[1]));
  Map<T> C(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!trans_a && !trans_b) C.noalias() = A * B;
  else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  OpAttrs<T> attrs;
  attrs.trans_a = trans_a;
  attrs.trans_b = trans_b;
  return record<T>(OpKind::MatMul, {&a, &b}, Shape{m, n}, std::move(out), std::move(attrs));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t pad) {
  const ConvGeom g = conv_geom("conv2d", x.shape(), w.shape(), pad);
  const std::size_t kk = g.ci * g.k * g.k, hw = g.ho * g.wo;
  std::vector<T> out(g.n * g.co * hw);
  std::vector<T> col(kk * hw);
  MapC<T> W(w.values().data(), static_cast<Eigen::Index>(g.co), static_cast<Eigen::Index>(kk));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.values().data() + n * g.ci * g.h * g.w, g, col.data());
    MapC<T> C(col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
    Map<T> Y(out.data() + n * g.co * hw, static_cast<Eigen::Index>(g.co),
             static_cast<Eigen::Index>(hw));
    Y.noalias() = W * C;
  }
  OpAttrs<T> attrs;
  attrs.pad = pad;
  attrs.kernel = g.k;
  return record<T>(OpKind::Conv2d, {&x, &w}, Shape{g.n, g.co, g.ho, g.wo}, std::move(out),
                   std::move(attrs));
}

template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const Shape& input_shape,
                            std::size_t pad) {
  const ConvGeom g = conv_geom("conv2d_input_grad", input_shape, w.shape(), pad);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    mismatch("conv2d_input_grad", gy.shape(), Shape{g.n, g.co, g.ho, g.wo});
  }
  const std::size_t kk = g.ci * g.k * g.k, hw = g.ho * g.wo;
  std::vector<T> out(shape_numel(input_shape), T{0});
  std::vector<T> col(kk * hw);
  MapC<T> W(w.values().data(), static_cast<Eigen::Index>(g.co), static_cast<Eigen::Index>(kk));
  for (std::size_t n = 0; n < g.n; ++n) {
    MapC<T> G(gy.values().data() + n * g.co * hw, static_cast<Eigen::Index>(g.co),
              static_cast<Eigen::Index>(hw));
    Map<T> C(col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
    C.noalias() = W.transpose() * G;
    col2im_add(col.data(), g, out.data() + n * g.ci * g.h * g.w);
  }
  OpAttrs<T> attrs;
  attrs.pad = pad;
  attrs.kernel = g.k;
  return record<T>(OpKind::Conv2dInputGrad, {&gy, &w}, input_shape, std::move(out),
                   std::move(attrs));
}

template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, std::size_t kernel,
                             std::size_t pad) {
  require_rank("conv2d_weight_grad", gy.shape(), 4);
  const Shape w_shape{gy.shape()[1], x.shape().size() == 4 ? x.shape()[1] : 0, kernel, kernel};
  const ConvGeom g = conv_geom("conv2d_weight_grad", x.shape(), w_shape, pad);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    mismatch("conv2d_weight_grad", gy.shape(), Shape{g.n, g.co, g.ho, g.wo});
  }
  const std::size_t kk = g.ci * g.k * g.k, hw = g.ho * g.wo;
  std::vector<T> out(g.co * kk, T{0});
  std::vector<T> col(kk * hw);
  Map<T> DW(out.data(), static_cast<Eigen::Index>(g.co), static_cast<Eigen::Index>(kk));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.values().data() + n * g.ci * g.h * g.w, g, col.data());
    MapC<T> C(col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
    MapC<T> G(gy.values().data() + n * g.co * hw, static_cast<Eigen::Index>(g.co),
              static_cast<Eigen::Index>(hw));
    DW.noalias() += G * C.transpose();
  }
  OpAttrs<T> attrs;
  attrs.pad = pad;
  attrs.kernel = kernel;
  return record<T>(OpKind::Conv2dWeightGrad, {&x, &gy}, w_shape, std::move(out),
                   std::move(attrs));
}

template <typename T>
Tensor<T> broadcast_axis(const Tensor<T>& v, const Shape& shape, std::size_t axis) {
  const AxisView av = axis_view("broadcast_axis", shape, axis);
  if (v.shape() != Shape{av.len}) mismatch("broadcast_axis", v.shape(), Shape{av.len});
  const auto src = v.values();
  std::vector<T> out(shape_numel(shape));
  T* dst = out.data();
  for (std::size_t o = 0; o < av.outer; ++o) {
    for (std::size_t c = 0; c < av.len; ++c) {
      std::fill(dst, dst + av.inner, src[c]);
      dst += av.inner;
    }
  }
  OpAttrs<T> attrs;
  attrs.axis = axis;
  return record<T>(OpKind::BroadcastAxis, {&v}, shape, std::move(out), std::move(attrs));
}

template <typename T>
Tensor<T> sum_keep_axis(const Tensor<T>& x, std::size_t axis) {
  const AxisView av = axis_view("sum_keep_axis", x.shape(), axis);
  const auto src = x.values();
  std::vector<T> out(av.len, T{0});
  const T* p = src.data();
  for (std::size_t o = 0; o < av.outer; ++o) {
    for (std::size_t c = 0; c < av.len; ++c) {
      T acc = T{0};
      for (std::size_t i = 0; i < av.inner; ++i) acc += p[i];
      out[c] += acc;
      p += av.inner;
    }
  }
  OpAttrs<T> attrs;
  attrs.axis = axis;
  return record<T>(OpKind::SumKeepAxis, {&x}, Shape{av.len}, std::move(out), std::move(attrs));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T{0};
  for (T v : x.values()) acc += v;
  return record<T>(OpKind::SumAll, {&x}, Shape{}, std::vector<T>{acc});
}

template <typename T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, const Shape& shape) {
  const T v = s.item();
  return record<T>(OpKind::BroadcastScalar, {&s}, shape, std::vector<T>(shape_numel(shape), v));
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, IndexList index, const Shape& out_shape) {
  if (!index || index->size() != shape_numel(out_shape)) {
    throw ShapeError("gather: index count does not match output shape " + shape_str(out_shape));
  }
  const auto src = x.values();
  std::vector<T> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = (*index)[i];
    if (j >= src.size()) throw ShapeError("gather: index out of range for " + shape_str(x.shape()));
    out[i] = src[j];
  }
  OpAttrs<T> attrs;
  attrs.index = std::move(index);
  return record<T>(OpKind::Gather, {&x}, out_shape, std::move(out), std::move(attrs));
}

template <typename T>
Tensor<T> scatter_add(const Tensor<T>& g, IndexList index, const Shape& shape) {
  if (!index || index->size() != g.numel()) {
    throw ShapeError("scatter_add: index count does not match source " + shape_str(g.shape()));
  }
  const auto src = g.values();
  std::vector<T> out(shape_numel(shape), T{0});
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t j = (*index)[i];
    if (j >= out.size()) throw ShapeError("scatter_add: index out of range for " + shape_str(shape));
    out[j] += src[i];
  }
  OpAttrs<T> attrs;
  attrs.index = std::move(index);
  return record<T>(OpKind::ScatterAdd, {&g}, shape, std::move(out), std::move(attrs));
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  require_rank("log_softmax", x.shape(), 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  const auto src = x.values();
  std::vector<T> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = src.data() + r * cols;
    const T m = *std::max_element(row, row + cols);
    T s = T{0};
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - m);
    const T lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  return record<T>(OpKind::LogSoftmax, {&x}, x.shape(), std::move(out));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) mismatch("reshape", x.shape(), shape);
  return record<T>(OpKind::Reshape, {&x}, shape, x.to_vector());
}

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  require_rank("max_pool2", x.shape(), 4);
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("max_pool2: input too small " + shape_str(x.shape()));
  const auto src = x.values();
  auto index = std::make_shared<std::vector<std::size_t>>(n * c * ho * wo);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = base + (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t at = base + (2 * i + di) * w + 2 * j + dj;
            if (src[at] > src[best]) best = at;
          }
        }
        (*index)[o++] = best;
      }
    }
  }
  return gather(x, IndexList(std::move(index)), Shape{n, c, ho, wo});
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank("batch_norm", x.shape(), 4);
  const Shape& s = x.shape();
  if (gamma.shape() != Shape{s[1]}) mismatch("batch_norm", gamma.shape(), Shape{s[1]});
  if (beta.shape() != Shape{s[1]}) mismatch("batch_norm", beta.shape(), Shape{s[1]});
  const T inv_count = T{1} / static_cast<T>(s[0] * s[2] * s[3]);
  const auto mean = scale(sum_keep_axis(x, 1), inv_count);
  const auto centered = sub(x, broadcast_axis(mean, s, 1));
  const auto var = scale(sum_keep_axis(mul(centered, centered), 1), inv_count);
  const auto inv_std = rsqrt(add_scalar(var, eps));
  const auto normalized = mul(centered, broadcast_axis(inv_std, s, 1));
  return add(mul(normalized, broadcast_axis(gamma, s, 1)), broadcast_axis(beta, s, 1));
}

#define LMAML_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> neg(const Tensor<T>&);                                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                         \
  template Tensor<T> exp(const Tensor<T>&);                                                   \
  template Tensor<T> rsqrt(const Tensor<T>&);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t);                 \
  template Tensor<T> conv2d_input_grad(const Tensor<T>&, const Tensor<T>&, const Shape&,      \
                                       std::size_t);                                          \
  template Tensor<T> conv2d_weight_grad(const Tensor<T>&, const Tensor<T>&, std::size_t,      \
                                        std::size_t);                                         \
  template Tensor<T> broadcast_axis(const Tensor<T>&, const Shape&, std::size_t);             \
  template Tensor<T> sum_keep_axis(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> sum_all(const Tensor<T>&);                                               \
  template Tensor<T> broadcast_scalar(const Tensor<T>&, const Shape&);                        \
  template Tensor<T> gather(const Tensor<T>&, IndexList, const Shape&);                       \
  template Tensor<T> scatter_add(const Tensor<T>&, IndexList, const Shape&);                  \
  template Tensor<T> log_softmax(const Tensor<T>&);                                           \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                 \
  template Tensor<T> max_pool2(const Tensor<T>&);                                             \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

LMAML_INSTANTIATE_OPS(double)
LMAML_INSTANTIATE_OPS(float)

}  // namespace lmaml
