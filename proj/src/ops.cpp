#include "attn_tutor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace attn_tutor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::string operand(const char* name, const Tensor& t) { return std::string(name) + "=" + shape_string(t.shape()); }

const std::vector<double>& parent_value(detail::Node& out, std::size_t i) { return out.parents[i]->value; }

bool parent_wants(detail::Node& out, std::size_t i) { return out.parents[i]->requires_grad; }

std::span<double> parent_grad(detail::Node& out, std::size_t i) { return out.parents[i]->grad_buffer(); }

// ---------------------------------------------------------------------------
// broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) strides[d - 1] = strides[d] * shape[d];
  return strides;
}

BroadcastPlan plan_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  BroadcastPlan plan;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) {
    plan.out = sa;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(sa.size(), sb.size());
  plan.out.assign(rank, 1);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  const auto ra = row_major_strides(sa);
  const auto rb = row_major_strides(sb);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t ea_off = rank - sa.size();
    const std::size_t eb_off = rank - sb.size();
    const std::size_t ea = d >= ea_off ? sa[d - ea_off] : 1;
    const std::size_t eb = d >= eb_off ? sb[d - eb_off] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      shape_fail(op, "cannot broadcast " + operand("a", a) + " with " + operand("b", b) +
                         "; expected equal extents or 1 on every aligned axis");
    }
    plan.out[d] = std::max(ea, eb);
    if (d >= ea_off && ea != 1) plan.stride_a[d] = ra[d - ea_off];
    if (d >= eb_off && eb != 1) plan.stride_b[d] = rb[d - eb_off];
  }
  return plan;
}

template <class F>
void walk(const BroadcastPlan& plan, F&& f) {
  const std::size_t n = element_count(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = plan.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

template <class Fwd, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA dfa, DB dfb) {
  auto plan = plan_broadcast(op, a, b);
  std::vector<double> out(element_count(plan.out));
  const auto av = a.values();
  const auto bv = b.values();
  walk(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  Shape shape = plan.out;
  return Tensor::from_op(op, std::move(shape), std::move(out), {a, b},
                         [plan = std::move(plan), dfa, dfb](detail::Node& node) {
                           const auto& g = node.grad;
                           const auto& x = parent_value(node, 0);
                           const auto& y = parent_value(node, 1);
                           if (parent_wants(node, 0)) {
                             auto ga = parent_grad(node, 0);
                             walk(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                               ga[ia] += g[i] * dfa(x[ia], y[ib]);
                             });
                           }
                           if (parent_wants(node, 1)) {
                             auto gb = parent_grad(node, 1);
                             walk(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                               gb[ib] += g[i] * dfb(x[ia], y[ib]);
                             });
                           }
                         });
}

// dfdx receives (input, output).
template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv dfdx) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::from_op(op, x.shape(), std::move(out), {x}, [dfdx](detail::Node& node) {
    const auto& in = parent_value(node, 0);
    auto gx = parent_grad(node, 0);
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] += node.grad[i] * dfdx(in[i], node.value[i]);
  });
}

// Splits a shape around one axis into outer * extent * inner.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + operand("x", x));
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.extent = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lower bound exceeds upper bound");
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  double total = 0.0;
  for (double v : xv) total += v;
  return Tensor::from_op("sum", Shape{}, {total}, {x}, [](detail::Node& node) {
    auto gx = parent_grad(node, 0);
    const double g = node.grad[0];
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  if (n == 0) shape_fail("mean", "empty operand " + operand("x", x));
  const auto xv = x.values();
  double total = 0.0;
  for (double v : xv) total += v;
  return Tensor::from_op("mean", Shape{}, {total / n}, {x}, [n](detail::Node& node) {
    auto gx = parent_grad(node, 0);
    const double g = node.grad[0] / n;
    for (auto& v : gx) v += g;
  });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto split = split_axis("sum", x, axis);
  const auto xv = x.values();
  std::vector<double> out(split.outer * split.inner, 0.0);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t e = 0; e < split.extent; ++e) {
      const double* src = xv.data() + (o * split.extent + e) * split.inner;
      double* dst = out.data() + o * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
    }
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return Tensor::from_op("sum_axis", std::move(shape), std::move(out), {x}, [split](detail::Node& node) {
    auto gx = parent_grad(node, 0);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t e = 0; e < split.extent; ++e) {
        double* dst = gx.data() + (o * split.extent + e) * split.inner;
        const double* g = node.grad.data() + o * split.inner;
        for (std::size_t i = 0; i < split.inner; ++i) dst[i] += g[i];
      }
  });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto extent = split_axis("mean", x, axis).extent;
  if (extent == 0) shape_fail("mean", "empty axis in " + operand("x", x));
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(extent));
}

// ---------------------------------------------------------------------------
// shape plumbing

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + operand("x", x) + " as " + shape_string(shape));
  }
  const auto xv = x.values();
  return Tensor::from_op("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                         [](detail::Node& node) {
                           auto gx = parent_grad(node, 0);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
                         });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  if (order.size() != s.size()) shape_fail("permute", "order has wrong length for " + operand("x", x));
  std::vector<bool> used(s.size(), false);
  for (auto d : order) {
    if (d >= s.size() || used[d]) shape_fail("permute", "order is not a permutation of the axes of " + operand("x", x));
    used[d] = true;
  }
  Shape out_shape(s.size());
  const auto in_strides = row_major_strides(s);
  std::vector<std::size_t> gather_strides(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) {
    out_shape[d] = s[order[d]];
    gather_strides[d] = in_strides[order[d]];
  }
  // Source offset for each output element, shared by forward and backward.
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  {
    BroadcastPlan plan;
    plan.out = out_shape;
    plan.stride_a = gather_strides;
    plan.stride_b.assign(s.size(), 0);
    walk(plan, [&](std::size_t i, std::size_t ia, std::size_t) { (*source)[i] = ia; });
  }
  const auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*source)[i]];
  return Tensor::from_op("permute", std::move(out_shape), std::move(out), {x}, [source](detail::Node& node) {
    auto gx = parent_grad(node, 0);
    for (std::size_t i = 0; i < source->size(); ++i) gx[(*source)[i]] += node.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no operands");
  const auto& first = parts.front().shape();
  if (axis >= first.size()) shape_fail("concat", "axis out of range for " + operand("parts[0]", parts.front()));
  std::vector<std::size_t> extents;
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& s = parts[p].shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      shape_fail("concat", "operand parts[" + std::to_string(p) + "]=" + shape_string(s) +
                               " does not match " + shape_string(first) + " off axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].values();
    const std::size_t block = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * block, block, out.data() + o * row + offset);
    offset += block;
  }
  return Tensor::from_op("concat", std::move(out_shape), std::move(out), parts,
                         [extents, outer, inner, row](detail::Node& node) {
                           std::size_t offset = 0;
                           for (std::size_t p = 0; p < extents.size(); ++p) {
                             const std::size_t block = extents[p] * inner;
                             if (parent_wants(node, p)) {
                               auto gp = parent_grad(node, p);
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t i = 0; i < block; ++i)
                                   gp[o * block + i] += node.grad[o * row + offset + i];
                             }
                             offset += block;
                           }
                         });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto split = split_axis("slice", x, axis);
  if (start + length > split.extent) {
    shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") exceeds axis " + std::to_string(axis) + " of " + operand("x", x));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xv = x.values();
  const std::size_t block = length * split.inner;
  std::vector<double> out(split.outer * block);
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(xv.data() + (o * split.extent + start) * split.inner, block, out.data() + o * block);
  return Tensor::from_op("slice", std::move(out_shape), std::move(out), {x},
                         [split, start, block](detail::Node& node) {
                           auto gx = parent_grad(node, 0);
                           for (std::size_t o = 0; o < split.outer; ++o) {
                             double* dst = gx.data() + (o * split.extent + start) * split.inner;
                             const double* g = node.grad.data() + o * block;
                             for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
                           }
                         });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool shared_rhs = false;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0], k = sa[1], n = sb[1];
    if (sb[0] != k) shape_fail("matmul", operand("a", a) + " and " + operand("b", b) + " need a[1] == b[0]");
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    if (sb[0] != batch || sb[1] != k) {
      shape_fail("matmul", operand("a", a) + " and " + operand("b", b) + " need matching batch and a[2] == b[1]");
    }
  } else if (sa.size() == 3 && sb.size() == 2) {
    // [B,M,K]x[K,N] is a single [B*M,K]x[K,N] product.
    m = sa[0] * sa[1], k = sa[2], n = sb[1];
    shared_rhs = true;
    if (sb[0] != k) shape_fail("matmul", operand("a", a) + " and " + operand("b", b) + " need a[2] == b[0]");
  } else {
    shape_fail("matmul", "unsupported ranks " + operand("a", a) + ", " + operand("b", b) +
                             "; expected 2x2, 3x3 or 3x2");
  }
  Shape out_shape;
  if (sa.size() == 2) {
    out_shape = {m, n};
  } else if (shared_rhs) {
    out_shape = {sa[0], sa[1], n};
  } else {
    out_shape = {batch, m, n};
  }
  std::vector<double> out(batch * m * n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t p = 0; p < batch; ++p) {
    MutMap(out.data() + p * m * n, m, n).noalias() =
        ConstMap(av.data() + p * m * k, m, k) * ConstMap(bv.data() + p * k * n, k, n);
  }
  return Tensor::from_op("matmul", std::move(out_shape), std::move(out), {a, b},
                         [batch, m, k, n](detail::Node& node) {
                           const auto& av = parent_value(node, 0);
                           const auto& bv = parent_value(node, 1);
                           for (std::size_t p = 0; p < batch; ++p) {
                             ConstMap g(node.grad.data() + p * m * n, m, n);
                             if (parent_wants(node, 0)) {
                               auto ga = parent_grad(node, 0);
                               MutMap(ga.data() + p * m * k, m, k).noalias() +=
                                   g * ConstMap(bv.data() + p * k * n, k, n).transpose();
                             }
                             if (parent_wants(node, 1)) {
                               auto gb = parent_grad(node, 1);
                               MutMap(gb.data() + p * k * n, k, n).noalias() +=
                                   ConstMap(av.data() + p * m * k, m, k).transpose() * g;
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// convolution and pooling

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width, out_channels, kh, kw, pad, out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
};

// cols is [C*kh*kw, out_h*out_w] for one sample.
void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const auto P = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* image) {
  const auto P = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1]) {
    shape_fail("conv2d", operand("x", x) + ", " + operand("weight", weight) +
                             "; expected x [N,C,H,W] and weight [O,C,kh,kw] with matching C");
  }
  if (bias.defined() && bias.shape() != Shape{sw[0]}) {
    shape_fail("conv2d", operand("bias", bias) + " must be [" + std::to_string(sw[0]) + "]");
  }
  if (sx[2] + 2 * padding < sw[2] || sx[3] + 2 * padding < sw[3]) {
    shape_fail("conv2d", "kernel " + operand("weight", weight) + " larger than padded " + operand("x", x));
  }
  ConvGeometry g{sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], padding, 0, 0};
  g.out_h = g.height + 2 * padding - g.kh + 1;
  g.out_w = g.width + 2 * padding - g.kw + 1;
  const auto P = g.pixels();
  const auto K = g.patch();
  const auto in_size = g.channels * g.height * g.width;
  auto cols = std::make_shared<std::vector<double>>(g.batch * K * P);
  std::vector<double> out(g.batch * g.out_channels * P);
  const auto xv = x.values();
  ConstMap w(weight.values().data(), g.out_channels, K);
  for (std::size_t n = 0; n < g.batch; ++n) {
    double* c = cols->data() + n * K * P;
    im2col(g, xv.data() + n * in_size, c);
    MutMap o(out.data() + n * g.out_channels * P, g.out_channels, P);
    o.noalias() = w * ConstMap(c, K, P);
    if (bias.defined()) {
      const auto bv = bias.values();
      for (std::size_t oc = 0; oc < g.out_channels; ++oc) o.row(oc).array() += bv[oc];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op(
      "conv2d", Shape{g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, cols](detail::Node& node) {
        const auto P = g.pixels();
        const auto K = g.patch();
        const auto in_size = g.channels * g.height * g.width;
        const auto& wv = parent_value(node, 1);
        ConstMap w(wv.data(), g.out_channels, K);
        const bool want_x = parent_wants(node, 0);
        const bool want_w = parent_wants(node, 1);
        const bool want_b = node.parents.size() > 2 && parent_wants(node, 2);
        std::vector<double> dcols(want_x ? K * P : 0);
        for (std::size_t n = 0; n < g.batch; ++n) {
          ConstMap gout(node.grad.data() + n * g.out_channels * P, g.out_channels, P);
          if (want_w) {
            auto gw = parent_grad(node, 1);
            MutMap(gw.data(), g.out_channels, K).noalias() +=
                gout * ConstMap(cols->data() + n * K * P, K, P).transpose();
          }
          if (want_b) {
            auto gb = parent_grad(node, 2);
            for (std::size_t oc = 0; oc < g.out_channels; ++oc) gb[oc] += gout.row(oc).sum();
          }
          if (want_x) {
            MutMap(dcols.data(), K, P).noalias() = w.transpose() * gout;
            auto gx = parent_grad(node, 0);
            col2im_add(g, dcols.data(), gx.data() + n * in_size);
          }
        }
      });
}

Tensor avg_pool2(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() < 2 || s[s.size() - 2] < 2 || s[s.size() - 1] < 2) {
    shape_fail("avg_pool2", operand("x", x) + " needs trailing spatial extents >= 2");
  }
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t oh = h / 2, ow = w / 2;
  const std::size_t planes = x.numel() / (h * w);
  Shape out_shape = s;
  out_shape[s.size() - 2] = oh;
  out_shape[s.size() - 1] = ow;
  const auto xv = x.values();
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* src = xv.data() + p * h * w + (2 * y) * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = 0.25 * (src[0] + src[1] + src[w] + src[w + 1]);
      }
  return Tensor::from_op("avg_pool2", std::move(out_shape), std::move(out), {x},
                         [planes, h, w, oh, ow](detail::Node& node) {
                           auto gx = parent_grad(node, 0);
                           for (std::size_t p = 0; p < planes; ++p)
                             for (std::size_t y = 0; y < oh; ++y)
                               for (std::size_t xx = 0; xx < ow; ++xx) {
                                 const double g = 0.25 * node.grad[(p * oh + y) * ow + xx];
                                 double* dst = gx.data() + p * h * w + (2 * y) * w + 2 * xx;
                                 dst[0] += g;
                                 dst[1] += g;
                                 dst[w] += g;
                                 dst[w + 1] += g;
                               }
                         });
}

// ---------------------------------------------------------------------------
// softmax family

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) shape_fail("softmax", "needs at least one axis, got " + operand("x", x));
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double peak = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (dst[c] = std::exp(src[c] - peak));
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  return Tensor::from_op("softmax", x.shape(), std::move(out), {x}, [rows, cols](detail::Node& node) {
    auto gx = parent_grad(node, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = node.value.data() + r * cols;
      const double* g = node.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) shape_fail("log_softmax", "needs at least one axis, got " + operand("x", x));
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double peak = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(src[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] - lse;
  }
  return Tensor::from_op("log_softmax", x.shape(), std::move(out), {x}, [rows, cols](detail::Node& node) {
    auto gx = parent_grad(node, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = node.value.data() + r * cols;
      const double* g = node.grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += g[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] - std::exp(y[c]) * total;
    }
  });
}

// ---------------------------------------------------------------------------
// indexing

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) shape_fail("embedding", operand("table", table) + " must be [V,E]");
  const std::size_t vocab = table.size(0), dim = table.size(1);
  std::vector<int> rows(ids.begin(), ids.end());
  for (int id : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      shape_fail("embedding", "id " + std::to_string(id) + " outside vocabulary of " + operand("table", table));
    }
  }
  const auto tv = table.values();
  std::vector<double> out(rows.size() * dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(rows[i]) * dim, dim, out.data() + i * dim);
  const std::size_t n = rows.size();
  return Tensor::from_op("embedding", Shape{n, dim}, std::move(out), {table},
                         [rows = std::move(rows), dim](detail::Node& node) {
                           auto gt = parent_grad(node, 0);
                           for (std::size_t i = 0; i < rows.size(); ++i) {
                             double* dst = gt.data() + static_cast<std::size_t>(rows[i]) * dim;
                             for (std::size_t e = 0; e < dim; ++e) dst[e] += node.grad[i * dim + e];
                           }
                         });
}

Tensor gather(const Tensor& x, std::span<const int> index) {
  if (x.rank() != 2 || x.size(0) != index.size()) {
    shape_fail("gather", operand("x", x) + " must be [N,C] with N == " + std::to_string(index.size()));
  }
  const std::size_t rows = x.size(0), cols = x.size(1);
  std::vector<int> idx(index.begin(), index.end());
  for (int c : idx) {
    if (c < 0 || static_cast<std::size_t>(c) >= cols) {
      shape_fail("gather", "index " + std::to_string(c) + " outside " + std::to_string(cols) + " columns of " +
                               operand("x", x));
    }
  }
  const auto xv = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = xv[r * cols + static_cast<std::size_t>(idx[r])];
  return Tensor::from_op("gather", Shape{rows}, std::move(out), {x}, [idx = std::move(idx), cols](detail::Node& node) {
    auto gx = parent_grad(node, 0);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[r * cols + static_cast<std::size_t>(idx[r])] += node.grad[r];
  });
}

// ---------------------------------------------------------------------------
// composites

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return neg(mean(gather(log_softmax(logits), labels)));
}

LstmState lstm_step(const Tensor& x, const LstmState& state, const Tensor& input_weight,
                    const Tensor& hidden_weight, const Tensor& bias) {
  const std::size_t hidden = state.hidden.shape().back();
  if (input_weight.rank() != 2 || input_weight.size(1) != 4 * hidden || hidden_weight.shape() != Shape{hidden, 4 * hidden}) {
    shape_fail("lstm_step", operand("input_weight", input_weight) + ", " + operand("hidden_weight", hidden_weight) +
                                " must be [E," + std::to_string(4 * hidden) + "] and [" + std::to_string(hidden) + "," +
                                std::to_string(4 * hidden) + "]");
  }
  const auto gates = add(add(matmul(x, input_weight), matmul(state.hidden, hidden_weight)), bias);
  const auto in_gate = sigmoid(slice(gates, 1, 0, hidden));
  const auto forget_gate = sigmoid(slice(gates, 1, hidden, hidden));
  const auto candidate = tanh(slice(gates, 1, 2 * hidden, hidden));
  const auto out_gate = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  auto cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
  auto hidden_state = mul(out_gate, tanh(cell));
  return {std::move(hidden_state), std::move(cell)};
}

}  // namespace attn_tutor
