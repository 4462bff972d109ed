#include "v2m/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "v2m/core/error.hpp"

namespace v2m {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::size_t norm_axis(int axis, std::size_t ndim) {
  int a = axis < 0 ? axis + static_cast<int>(ndim) : axis;
  if (a < 0 || a >= static_cast<int>(ndim)) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(ndim));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

// Index maps from each output element to its source element in a and b.
// kind: 0 general (index maps), 1 same shape, 2 operand repeats with period
// `period` (index i % period), 3 operand holds one value per block of `period`
// (index i / period).
struct Broadcast {
  Shape out;
  bool same = false;
  int kind_a = 0, kind_b = 0;
  std::size_t period_a = 1, period_b = 1;
  std::vector<std::size_t> ia, ib;

  std::size_t a(std::size_t i) const { return index(kind_a, period_a, ia, i); }
  std::size_t b(std::size_t i) const { return index(kind_b, period_b, ib, i); }

  static std::size_t index(int kind, std::size_t period, const std::vector<std::size_t>& map, std::size_t i) {
    switch (kind) {
      case 1: return i;
      case 2: return i % period;
      case 3: return i / period;
      default: return map[i];
    }
  }
};

// Classifies src against out without building an index map when possible.
void classify(const Shape& src, const Shape& out, int& kind, std::size_t& period) {
  const std::size_t nd = out.size(), off = nd - src.size();
  Shape full(nd, 1);
  for (std::size_t d = 0; d < src.size(); ++d) full[d + off] = src[d];
  if (full == out) {
    kind = 1;
    return;
  }
  // Suffix: leading dims of size 1, then equal to out.
  std::size_t lead = 0;
  while (lead < nd && full[lead] == 1 && out[lead] != 1) ++lead;
  bool suffix = true;
  for (std::size_t d = lead; d < nd; ++d) suffix &= full[d] == out[d];
  if (suffix) {
    kind = 2;
    period = shape_numel(full);
    return;
  }
  // Prefix: equal to out, then trailing dims of size 1.
  std::size_t tail = nd;
  while (tail > 0 && full[tail - 1] == 1 && out[tail - 1] != 1) --tail;
  bool prefix = true;
  for (std::size_t d = 0; d < tail; ++d) prefix &= full[d] == out[d];
  if (prefix) {
    kind = 3;
    period = 1;
    for (std::size_t d = tail; d < nd; ++d) period *= out[d];
    return;
  }
  kind = 0;
}

std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t nd = out.size();
  const std::size_t off = nd - src.size();
  std::vector<std::size_t> stride(nd, 0);
  std::size_t s = 1;
  for (std::size_t d = src.size(); d-- > 0;) {
    stride[d + off] = src[d] == 1 ? 0 : s;
    s *= src[d];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(nd, 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = cur;
    for (std::size_t d = nd; d-- > 0;) {
      ++counter[d];
      cur += stride[d];
      if (counter[d] < out[d]) break;
      cur -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

std::shared_ptr<const Broadcast> plan_broadcast(const Shape& a, const Shape& b) {
  auto p = std::make_shared<Broadcast>();
  if (a == b) {
    p->out = a;
    p->same = true;
    return p;
  }
  const std::size_t nd = std::max(a.size(), b.size());
  p->out.assign(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p->out[i] = std::max(da, db);
  }
  classify(a, p->out, p->kind_a, p->period_a);
  classify(b, p->out, p->kind_b, p->period_b);
  if (p->kind_a == 0) p->ia = broadcast_index(a, p->out);
  if (p->kind_b == 0) p->ib = broadcast_index(b, p->out);
  return p;
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Var binary(BinOp op, Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto plan = plan_broadcast(av.shape(), bv.shape());
  Tensor out(plan->out);
  const std::size_t n = out.size();
  auto apply = [op](double x, double y) {
    switch (op) {
      case BinOp::kAdd: return x + y;
      case BinOp::kSub: return x - y;
      case BinOp::kMul: return x * y;
      case BinOp::kDiv: return x / y;
    }
    return 0.0;
  };
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[plan->a(i)], bv[plan->b(i)]);
  }
  static constexpr const char* kNames[] = {"add", "sub", "mul", "div"};
  const std::size_t ida = a.id(), idb = b.id();
  return g.record(kNames[static_cast<int>(op)], std::move(out), {ida, idb},
                  [op, plan, ida, idb](Graph& gr, std::size_t self) {
                    const Tensor& go = gr.out_grad(self);
                    const Tensor& x = gr.value(ida);
                    const Tensor& y = gr.value(idb);
                    const std::size_t n = go.size();
                    auto ia = [&](std::size_t i) { return plan->same ? i : plan->a(i); };
                    auto ib = [&](std::size_t i) { return plan->same ? i : plan->b(i); };
                    if (gr.requires_grad(ida)) {
                      Tensor& ga = gr.grad_buffer(ida);
                      for (std::size_t i = 0; i < n; ++i) {
                        double d = go[i];
                        if (op == BinOp::kMul) d *= y[ib(i)];
                        if (op == BinOp::kDiv) d /= y[ib(i)];
                        ga[ia(i)] += d;
                      }
                    }
                    if (gr.requires_grad(idb)) {
                      Tensor& gb = gr.grad_buffer(idb);
                      for (std::size_t i = 0; i < n; ++i) {
                        double d = go[i];
                        if (op == BinOp::kSub) d = -d;
                        if (op == BinOp::kMul) d *= x[ia(i)];
                        if (op == BinOp::kDiv) {
                          const double yv = y[ib(i)];
                          d *= -x[ia(i)] / (yv * yv);
                        }
                        gb[ib(i)] += d;
                      }
                    }
                  });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(const char* name, Var x, F f, D dfdx) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const std::size_t idx = x.id();
  return g.record(name, std::move(out), {idx}, [idx, dfdx](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    const Tensor& xin = gr.value(idx);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * dfdx(xin[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(BinOp::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(BinOp::kSub, a, b); }
Var mul(Var a, Var b) { return binary(BinOp::kMul, a, b); }
Var div(Var a, Var b) { return binary(BinOp::kDiv, a, b); }

Var scale(Var x, double c) {
  return unary("scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sigmoid(Var x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var silu(Var x) { return mul(x, sigmoid(x)); }

Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  const std::size_t idx = x.id();
  return x.graph().record("sum", Tensor::scalar(s), {idx}, [idx](Graph& gr, std::size_t self) {
    const double go = gr.out_grad(self)[0];
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var sum_axis(Var x, int axis, bool keepdim) {
  const Tensor& xv = x.value();
  const std::size_t ax = norm_axis(axis, xv.ndim());
  const AxisSplit sp = split_at(xv.shape(), ax);
  Shape os = xv.shape();
  if (keepdim) {
    os[ax] = 1;
  } else {
    os.erase(os.begin() + static_cast<long>(ax));
  }
  Tensor out(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.len; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.len + k) * sp.inner + i];
  const std::size_t idx = x.id();
  return x.graph().record("sum_axis", std::move(out), {idx}, [idx, sp](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.len; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.len + k) * sp.inner + i] += go[o * sp.inner + i];
  });
}

Var mean_axis(Var x, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, x.ndim());
  const double n = static_cast<double>(x.dim(ax));
  return scale(sum_axis(x, axis, keepdim), 1.0 / n);
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t idx = x.id();
  return x.graph().record("reshape", std::move(out), {idx}, [idx](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

Var permute(Var x, std::vector<std::size_t> perm) {
  const Tensor& xv = x.value();
  const std::size_t nd = xv.ndim();
  if (perm.size() != nd) throw DimensionError("permute rank mismatch for " + shape_str(xv.shape()));
  std::vector<std::size_t> in_stride(nd);
  std::size_t s = 1;
  for (std::size_t d = nd; d-- > 0;) {
    in_stride[d] = s;
    s *= xv.dim(d);
  }
  Shape os(nd);
  std::vector<std::size_t> src_stride(nd);
  for (std::size_t d = 0; d < nd; ++d) {
    os[d] = xv.dim(perm.at(d));
    src_stride[d] = in_stride[perm[d]];
  }
  // Output element i reads input element map[i].
  auto map = std::make_shared<std::vector<std::size_t>>(xv.size());
  {
    std::vector<std::size_t> counter(nd, 0);
    std::size_t cur = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      (*map)[i] = cur;
      for (std::size_t d = nd; d-- > 0;) {
        ++counter[d];
        cur += src_stride[d];
        if (counter[d] < os[d]) break;
        cur -= src_stride[d] * counter[d];
        counter[d] = 0;
      }
    }
  }
  Tensor out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
  const std::size_t idx = x.id();
  return x.graph().record("permute", std::move(out), {idx}, [idx, map](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*map)[i]] += go[i];
  });
}

Var transpose(Var x) {
  const std::size_t nd = x.ndim();
  if (nd < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> perm(nd);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[nd - 1], perm[nd - 2]);
  return permute(x, std::move(perm));
}

Var slice(Var x, int axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const std::size_t ax = norm_axis(axis, xv.ndim());
  if (begin > end || end > xv.dim(ax)) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_str(xv.shape()));
  }
  const AxisSplit sp = split_at(xv.shape(), ax);
  Shape os = xv.shape();
  os[ax] = end - begin;
  Tensor out(os);
  const std::size_t w = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data().begin() + static_cast<long>((o * sp.len + begin) * sp.inner), w,
                out.data().begin() + static_cast<long>(o * w));
  }
  const std::size_t idx = x.id();
  return x.graph().record("slice", std::move(out), {idx}, [idx, sp, begin, w](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < w; ++i) gx[(o * sp.len + begin) * sp.inner + i] += go[o * w + i];
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Graph& g = parts[0].graph();
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size());
  Shape os = s0;
  os[ax] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> lens;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != s0[d]) {
        throw DimensionError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
      }
    }
    os[ax] += s[ax];
    ids.push_back(p.id());
    lens.push_back(s[ax]);
  }
  const AxisSplit sp = split_at(os, ax);
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    const std::size_t w = lens[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.data().begin() + static_cast<long>(o * w), w,
                  out.data().begin() + static_cast<long>((o * sp.len + off) * sp.inner));
    }
    off += lens[k];
  }
  return g.record("concat", std::move(out), ids, [ids, lens, sp](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = lens[k] * sp.inner;
      if (gr.requires_grad(ids[k])) {
        Tensor& gx = gr.grad_buffer(ids[k]);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < w; ++i) gx[o * w + i] += go[(o * sp.len + off) * sp.inner + i];
      }
      off += lens[k];
    }
  });
}

Var gather_rows(Var table, std::vector<long> index) {
  const Tensor& tv = table.value();
  if (tv.ndim() != 2) throw DimensionError("gather_rows needs a 2-D table, got " + shape_str(tv.shape()));
  const std::size_t rows = tv.dim(0), cols = tv.dim(1);
  Tensor out(Shape{index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    const long src = index[r];
    if (src < -1 || src >= static_cast<long>(rows)) {
      throw DimensionError("gather index " + std::to_string(src) + " out of range for " + shape_str(tv.shape()));
    }
    if (src < 0) continue;
    std::copy_n(tv.data().begin() + src * static_cast<long>(cols), cols,
                out.data().begin() + static_cast<long>(r * cols));
  }
  const std::size_t idx = table.id();
  auto shared = std::make_shared<std::vector<long>>(std::move(index));
  return table.graph().record("gather_rows", std::move(out), {idx}, [idx, shared, cols](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.grad_buffer(idx);
    const auto& ix = *shared;
    for (std::size_t r = 0; r < ix.size(); ++r) {
      if (ix[r] < 0) continue;
      const std::size_t base = static_cast<std::size_t>(ix[r]) * cols;
      for (std::size_t c = 0; c < cols; ++c) gx[base + c] += go[r * cols + c];
    }
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() < 2 || bv.ndim() != 2 || av.dim(av.ndim() - 1) != bv.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  const std::size_t k = bv.dim(0), n = bv.dim(1);
  const std::size_t m = av.size() / k;
  Shape os = av.shape();
  os.back() = n;
  Tensor out(os);
  MapMat(out.data().data(), m, n).noalias() = CMapMat(av.data().data(), m, k) * CMapMat(bv.data().data(), k, n);
  const std::size_t ida = a.id(), idb = b.id();
  return a.graph().record("matmul", std::move(out), {ida, idb}, [ida, idb, m, k, n](Graph& gr, std::size_t self) {
    CMapMat go(gr.out_grad(self).data().data(), m, n);
    if (gr.requires_grad(ida)) {
      MapMat(gr.grad_buffer(ida).data().data(), m, k).noalias() +=
          go * CMapMat(gr.value(idb).data().data(), k, n).transpose();
    }
    if (gr.requires_grad(idb)) {
      MapMat(gr.grad_buffer(idb).data().data(), k, n).noalias() +=
          CMapMat(gr.value(ida).data().data(), m, k).transpose() * go;
    }
  });
}

Var bmm(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
    throw DimensionError("bmm shape mismatch: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  const std::size_t B = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out(Shape{B, m, n});
  for (std::size_t i = 0; i < B; ++i) {
    MapMat(out.data().data() + i * m * n, m, n).noalias() =
        CMapMat(av.data().data() + i * m * k, m, k) * CMapMat(bv.data().data() + i * k * n, k, n);
  }
  const std::size_t ida = a.id(), idb = b.id();
  return a.graph().record("bmm", std::move(out), {ida, idb}, [ida, idb, B, m, k, n](Graph& gr, std::size_t self) {
    const double* go = gr.out_grad(self).data().data();
    const bool need_a = gr.requires_grad(ida), need_b = gr.requires_grad(idb);
    double* ga = need_a ? gr.grad_buffer(ida).data().data() : nullptr;
    double* gb = need_b ? gr.grad_buffer(idb).data().data() : nullptr;
    const double* x = gr.value(ida).data().data();
    const double* y = gr.value(idb).data().data();
    for (std::size_t i = 0; i < B; ++i) {
      CMapMat g(go + i * m * n, m, n);
      if (need_a) MapMat(ga + i * m * k, m, k).noalias() += g * CMapMat(y + i * k * n, k, n).transpose();
      if (need_b) MapMat(gb + i * k * n, k, n).noalias() += CMapMat(x + i * m * k, m, k).transpose() * g;
    }
  });
}

Var softmax(Var x, int axis) {
  const Tensor& xv = x.value();
  const std::size_t ax = norm_axis(axis, xv.ndim());
  const AxisSplit sp = split_at(xv.shape(), ax);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < sp.len; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        const double e = std::exp(xv[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.len; ++k) out[base + k * sp.inner] /= z;
    }
  }
  const std::size_t idx = x.id();
  return x.graph().record("softmax", std::move(out), {idx}, [idx, sp](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.len; ++k) dot += go[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.len; ++k) {
          const std::size_t j = base + k * sp.inner;
          gx[j] += y[j] * (go[j] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, int axis) {
  const Tensor& xv = x.value();
  const std::size_t ax = norm_axis(axis, xv.ndim());
  const AxisSplit sp = split_at(xv.shape(), ax);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < sp.len; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) z += std::exp(xv[base + k * sp.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < sp.len; ++k) out[base + k * sp.inner] = xv[base + k * sp.inner] - lse;
    }
  }
  const std::size_t idx = x.id();
  return x.graph().record("log_softmax", std::move(out), {idx}, [idx, sp](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double gsum = 0.0;
        for (std::size_t k = 0; k < sp.len; ++k) gsum += go[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.len; ++k) {
          const std::size_t j = base + k * sp.inner;
          gx[j] += go[j] - std::exp(y[j]) * gsum;
        }
      }
    }
  });
}

Var rms_norm(Var x, Var gain, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  if (xv.ndim() < 1 || gv.ndim() != 1 || gv.dim(0) != xv.shape().back() || gv.dim(0) == 0) {
    throw DimensionError("rms_norm shape mismatch: " + shape_str(xv.shape()) + " with gain " + shape_str(gv.shape()));
  }
  const std::size_t C = gv.dim(0);
  const std::size_t rows = xv.size() / C;
  Tensor out(xv.shape());
  auto inv = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < C; ++c) ms += xv[r * C + c] * xv[r * C + c];
    ms /= static_cast<double>(C);
    const double s = 1.0 / std::sqrt(ms + eps);
    (*inv)[r] = s;
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] * s * gv[c];
  }
  const std::size_t idx = x.id(), idg = gain.id();
  return x.graph().record("rms_norm", std::move(out), {idx, idg}, [idx, idg, inv, C, rows](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    const Tensor& xv = gr.value(idx);
    const Tensor& gv = gr.value(idg);
    const bool need_x = gr.requires_grad(idx), need_g = gr.requires_grad(idg);
    for (std::size_t r = 0; r < rows; ++r) {
      const double s = (*inv)[r];
      if (need_g) {
        Tensor& gg = gr.grad_buffer(idg);
        for (std::size_t c = 0; c < C; ++c) gg[c] += go[r * C + c] * xv[r * C + c] * s;
      }
      if (need_x) {
        // y_c = g_c x_c s, ds/dx_j = -s^3 x_j / C
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c) dot += go[r * C + c] * gv[c] * xv[r * C + c];
        Tensor& gx = gr.grad_buffer(idx);
        const double k = s * s * s * dot / static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += go[r * C + c] * gv[c] * s - k * xv[r * C + c];
      }
    }
  });
}

Var rope_apply(Var x, std::span<const long> positions, double base) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 3) throw DimensionError("rope_apply expects [N, heads, d], got " + shape_str(xv.shape()));
  const std::size_t N = xv.dim(0), H = xv.dim(1), d = xv.dim(2);
  if (d % 2 != 0) throw ConfigError("rope_apply needs an even head dimension, got " + std::to_string(d));
  if (positions.size() != N) throw DimensionError("rope_apply: positions length does not match sequence");
  const std::size_t half = d / 2;
  auto cs = std::make_shared<std::vector<double>>(N * half * 2);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t j = 0; j < half; ++j) {
      const double theta = static_cast<double>(positions[n]) *
                           std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
      (*cs)[(n * half + j) * 2] = std::cos(theta);
      (*cs)[(n * half + j) * 2 + 1] = std::sin(theta);
    }
  }
  Tensor out(xv.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t j = 0; j < half; ++j) {
        const std::size_t p = (n * H + h) * d + 2 * j;
        const double c = (*cs)[(n * half + j) * 2], s = (*cs)[(n * half + j) * 2 + 1];
        out[p] = c * xv[p] - s * xv[p + 1];
        out[p + 1] = s * xv[p] + c * xv[p + 1];
      }
  const std::size_t idx = x.id();
  return x.graph().record("rope_apply", std::move(out), {idx}, [idx, cs, N, H, d, half](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t j = 0; j < half; ++j) {
          const std::size_t p = (n * H + h) * d + 2 * j;
          const double c = (*cs)[(n * half + j) * 2], s = (*cs)[(n * half + j) * 2 + 1];
          gx[p] += c * go[p] + s * go[p + 1];
          gx[p + 1] += -s * go[p] + c * go[p + 1];
        }
  });
}

Var l2_normalize(Var x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t C = xv.shape().back();
  const std::size_t rows = C ? xv.size() / C : 0;
  Tensor out(xv.shape());
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < C; ++c) ss += xv[r * C + c] * xv[r * C + c];
    const double nrm = std::sqrt(ss);
    (*norms)[r] = nrm;
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] / std::max(nrm, eps);
  }
  const std::size_t idx = x.id();
  return x.graph().record("l2_normalize", std::move(out), {idx}, [idx, norms, C, rows, eps](Graph& gr, std::size_t self) {
    const Tensor& go = gr.out_grad(self);
    const Tensor& xv = gr.value(idx);
    Tensor& gx = gr.grad_buffer(idx);
    for (std::size_t r = 0; r < rows; ++r) {
      const double nrm = (*norms)[r];
      if (!(nrm > eps)) {
        for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += go[r * C + c] / eps;
        continue;
      }
      const double den = nrm;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += go[r * C + c] * xv[r * C + c];
      const double k = dot / (nrm * nrm * nrm);
      for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += go[r * C + c] / den - k * xv[r * C + c];
    }
  });
}

Var cosine_similarity(Var a, Var b, double eps) {
  return sum_axis(mul(l2_normalize(a, eps), l2_normalize(b, eps)), -1);
}

Var linear(Var x, Var w) { return matmul(x, w); }
Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

}  // namespace v2m
