#include "bimanual/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace bimanual {

namespace {

using detail::ImplPtr;
using detail::TensorImpl;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b, const std::string& detail = "") {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!detail.empty()) msg += " (" + detail + ")";
  throw std::invalid_argument(msg);
}

std::size_t normalize_axis(const char* op, int axis, std::size_t rank) {
  const int n = static_cast<int>(rank);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// ---------------------------------------------------------------- broadcasting

struct Broadcast {
  enum Kind { Same, ScalarB, ScalarA, SuffixB, SuffixA, RowB, RowA, General };
  std::size_t inner = 1;  // RowA/RowB: run length sharing one element of the small operand
  Kind kind = Same;
  Shape out;
  std::size_t na = 0, nb = 0, n = 0;
  std::vector<std::size_t> stride_a, stride_b;  // General only, 0 on broadcast axes
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// small == big on leading axes and 1 on a trailing block; returns the block size.
std::size_t row_block(const Shape& small, const Shape& big) {
  if (small.size() != big.size()) return 0;
  std::size_t k = big.size();
  std::size_t inner = 1;
  while (k > 0 && small[k - 1] == 1) inner *= big[--k];
  for (std::size_t i = 0; i < k; ++i) {
    if (small[i] != big[i]) return 0;
  }
  return inner;
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  p.na = shape_numel(a);
  p.nb = shape_numel(b);
  if (a == b) {
    p.kind = Broadcast::Same;
    p.out = a;
  } else if (p.nb == 1 && b.size() <= a.size()) {
    p.kind = Broadcast::ScalarB;
    p.out = a;
  } else if (p.na == 1 && a.size() <= b.size()) {
    p.kind = Broadcast::ScalarA;
    p.out = b;
  } else if (is_suffix(b, a)) {
    p.kind = Broadcast::SuffixB;
    p.out = a;
  } else if (is_suffix(a, b)) {
    p.kind = Broadcast::SuffixA;
    p.out = b;
  } else if (std::size_t r = row_block(b, a); r > 0) {
    p.kind = Broadcast::RowB;
    p.inner = r;
    p.out = a;
  } else if (std::size_t r2 = row_block(a, b); r2 > 0) {
    p.kind = Broadcast::RowA;
    p.inner = r2;
    p.out = b;
  } else {
    p.kind = Broadcast::General;
    const std::size_t rank = std::max(a.size(), b.size());
    p.out.assign(rank, 1);
    std::vector<std::size_t> ea(rank, 1), eb(rank, 1);
    std::copy(a.begin(), a.end(), ea.begin() + static_cast<long>(rank - a.size()));
    std::copy(b.begin(), b.end(), eb.begin() + static_cast<long>(rank - b.size()));
    for (std::size_t i = 0; i < rank; ++i) {
      if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1) shape_error(op, a, b);
      p.out[i] = std::max(ea[i], eb[i]);
    }
    p.stride_a.assign(rank, 0);
    p.stride_b.assign(rank, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = rank; i-- > 0;) {
      p.stride_a[i] = ea[i] == 1 ? 0 : sa;
      p.stride_b[i] = eb[i] == 1 ? 0 : sb;
      sa *= ea[i];
      sb *= eb[i];
    }
  }
  p.n = shape_numel(p.out);
  return p;
}

template <class F>
void for_each_pair(const Broadcast& p, F&& f) {
  switch (p.kind) {
    case Broadcast::Same:
      for (std::size_t i = 0; i < p.n; ++i) f(i, i, i);
      return;
    case Broadcast::ScalarB:
      for (std::size_t i = 0; i < p.n; ++i) f(i, i, std::size_t{0});
      return;
    case Broadcast::ScalarA:
      for (std::size_t i = 0; i < p.n; ++i) f(i, std::size_t{0}, i);
      return;
    case Broadcast::SuffixB:
      for (std::size_t i = 0; i < p.n; ++i) f(i, i, i % p.nb);
      return;
    case Broadcast::SuffixA:
      for (std::size_t i = 0; i < p.n; ++i) f(i, i % p.na, i);
      return;
    case Broadcast::RowB:
      for (std::size_t i = 0; i < p.n; ++i) f(i, i, i / p.inner);
      return;
    case Broadcast::RowA:
      for (std::size_t i = 0; i < p.n; ++i) f(i, i / p.inner, i);
      return;
    case Broadcast::General: {
      const std::size_t rank = p.out.size();
      std::vector<std::size_t> counter(rank, 0);
      std::size_t ia = 0, ib = 0;
      for (std::size_t i = 0; i < p.n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
          ++counter[d];
          ia += p.stride_a[d];
          ib += p.stride_b[d];
          if (counter[d] < p.out[d]) break;
          ia -= p.stride_a[d] * counter[d];
          ib -= p.stride_b[d] * counter[d];
          counter[d] = 0;
        }
      }
      return;
    }
  }
}

template <class Fwd, class Da, class Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd f, Da da, Db db) {
  if (!a.defined() || !b.defined()) throw std::invalid_argument(std::string(op) + ": undefined operand");
  Broadcast plan = plan_broadcast(op, a.shape(), b.shape());
  std::vector<double> out(plan.n);
  const auto xa = a.data();
  const auto xb = b.data();
  for_each_pair(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(xa[ia], xb[ib]); });
  Shape shape = plan.out;
  return make_result(op, std::move(shape), std::move(out), {a, b},
                     [plan = std::move(plan), da, db](const TensorImpl& o, std::span<const ImplPtr> in) {
                       const auto& va = in[0]->data;
                       const auto& vb = in[1]->data;
                       const auto& g = o.grad;
                       const bool ga_on = in[0]->requires_grad;
                       const bool gb_on = in[1]->requires_grad;
                       double* ga = ga_on ? in[0]->grad_buffer().data() : nullptr;
                       double* gb = gb_on ? in[1]->grad_buffer().data() : nullptr;
                       for_each_pair(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         if (ga) ga[ia] += g[i] * da(va[ia], vb[ib], o.data[i]);
                         if (gb) gb[ib] += g[i] * db(va[ia], vb[ib], o.data[i]);
                       });
                     });
}

template <class Fwd, class Df>
Tensor unary(const char* op, const Tensor& x, Fwd f, Df df) {
  if (!x.defined()) throw std::invalid_argument(std::string(op) + ": undefined operand");
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [df](const TensorImpl& o, std::span<const ImplPtr> in) {
    if (!in[0]->requires_grad) return;
    auto& gx = in[0]->grad_buffer();
    const auto& xv = in[0]->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(xv[i], o.data[i]);
  });
}

void accumulate(const ImplPtr& target, const std::vector<double>& g) {
  if (!target->requires_grad) return;
  auto& buf = target->grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator+(const Tensor& a, double b) {
  return unary("add_scalar", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}
Tensor operator-(const Tensor& a, double b) { return a + (-b); }
Tensor operator*(const Tensor& a, double b) {
  return unary("mul_scalar", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}
Tensor operator/(const Tensor& a, double b) { return a * (1.0 / b); }
Tensor operator*(double a, const Tensor& b) { return b * a; }
Tensor operator-(double a, const Tensor& b) {
  return unary("rsub_scalar", b, [a](double x) { return a - x; }, [](double, double) { return -1.0; });
}
Tensor operator-(const Tensor& a) { return neg(a); }

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sin(const Tensor& x) {
  return unary("sin", x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary("cos", x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  const auto v = x.data();
  double s = 0.0;
  for (double e : v) s += e;
  return make_result("sum", {}, {s}, {x}, [](const TensorImpl& o, std::span<const ImplPtr> in) {
    if (!in[0]->requires_grad) return;
    auto& g = in[0]->grad_buffer();
    for (double& e : g) e += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return sum(x) * (1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis("sum", axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  Shape out_shape = s;
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  }
  std::vector<double> out(outer * inner, 0.0);
  const auto v = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* row = v.data() + (o * n + k) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  }
  return make_result("sum_axis", std::move(out_shape), std::move(out), {x},
                     [outer, inner, n](const TensorImpl& o, std::span<const ImplPtr> in) {
                       if (!in[0]->requires_grad) return;
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t oo = 0; oo < outer; ++oo) {
                         const double* src = o.grad.data() + oo * inner;
                         for (std::size_t k = 0; k < n; ++k) {
                           double* dst = g.data() + (oo * n + k) * inner;
                           for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t n = x.size(axis);
  if (n == 0) throw std::invalid_argument("mean: empty axis");
  return sum(x, axis, keepdim) * (1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) shape_error("matmul", sa, sb, "operands need rank >= 2");
  const std::size_t M = sa[sa.size() - 2], K = sa.back();
  const std::size_t K2 = sb[sb.size() - 2], N = sb.back();
  if (K != K2) shape_error("matmul", sa, sb, "inner extents differ");

  Shape out_shape;
  std::size_t batch = 1;
  enum { SharedB, SharedA, Batched } mode;
  if (sb.size() == 2) {
    mode = SharedB;
    out_shape.assign(sa.begin(), sa.end() - 1);
    out_shape.push_back(N);
    batch = shape_numel(sa) / (M * K);
  } else if (sa.size() == 2) {
    mode = SharedA;
    out_shape.assign(sb.begin(), sb.end() - 2);
    out_shape.push_back(M);
    out_shape.push_back(N);
    batch = shape_numel(sb) / (K * N);
  } else {
    if (!std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) {
      shape_error("matmul", sa, sb, "batch extents differ");
    }
    mode = Batched;
    out_shape.assign(sa.begin(), sa.end() - 2);
    out_shape.push_back(M);
    out_shape.push_back(N);
    batch = shape_numel(sa) / (M * K);
  }

  std::vector<double> out(shape_numel(out_shape));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (mode == SharedB) {
    Map(out.data(), static_cast<long>(batch * M), static_cast<long>(N)).noalias() =
        MapC(pa, static_cast<long>(batch * M), static_cast<long>(K)) * MapC(pb, static_cast<long>(K), static_cast<long>(N));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const double* ai = mode == SharedA ? pa : pa + i * M * K;
      const double* bi = pb + i * K * N;
      Map(out.data() + i * M * N, static_cast<long>(M), static_cast<long>(N)).noalias() =
          MapC(ai, static_cast<long>(M), static_cast<long>(K)) * MapC(bi, static_cast<long>(K), static_cast<long>(N));
    }
  }

  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [mode, batch, M, K, N](const TensorImpl& o, std::span<const ImplPtr> in) {
                       const long m = static_cast<long>(M), k = static_cast<long>(K), n = static_cast<long>(N);
                       const double* g = o.grad.data();
                       const double* va = in[0]->data.data();
                       const double* vb = in[1]->data.data();
                       const bool ga_on = in[0]->requires_grad, gb_on = in[1]->requires_grad;
                       if (mode == SharedB) {
                         const long bm = static_cast<long>(batch) * m;
                         if (ga_on) Map(in[0]->grad_buffer().data(), bm, k).noalias() += MapC(g, bm, n) * MapC(vb, k, n).transpose();
                         if (gb_on) Map(in[1]->grad_buffer().data(), k, n).noalias() += MapC(va, bm, k).transpose() * MapC(g, bm, n);
                         return;
                       }
                       double* ga = ga_on ? in[0]->grad_buffer().data() : nullptr;
                       double* gb = gb_on ? in[1]->grad_buffer().data() : nullptr;
                       for (std::size_t i = 0; i < batch; ++i) {
                         const std::size_t a_off = mode == SharedA ? 0 : i * M * K;
                         const double* gi = g + i * M * N;
                         if (ga) Map(ga + a_off, m, k).noalias() += MapC(gi, m, n) * MapC(vb + i * K * N, k, n).transpose();
                         if (gb) Map(gb + i * K * N, k, n).noalias() += MapC(va + a_off, m, k).transpose() * MapC(gi, m, n);
                       }
                     });
}

// ---------------------------------------------------------------- shape ops

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape, "element counts differ");
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x},
                     [](const TensorImpl& o, std::span<const ImplPtr> in) { accumulate(in[0], o.grad); });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  const std::size_t rank = s.size();
  if (order.size() != rank) throw std::invalid_argument("permute: order rank mismatch for " + shape_str(s));
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw std::invalid_argument("permute: invalid axis order");
    seen[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank);
  std::size_t st = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = st;
    st *= s[i];
  }
  // Stride of source for each output axis.
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[order[i]];
    src_stride[i] = in_strides[order[i]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  {
    std::vector<std::size_t> counter(rank, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < n; ++i) {
      map[i] = src;
      for (std::size_t d = rank; d-- > 0;) {
        ++counter[d];
        src += src_stride[d];
        if (counter[d] < out_shape[d]) break;
        src -= src_stride[d] * counter[d];
        counter[d] = 0;
      }
    }
  }
  std::vector<double> out(n);
  const auto v = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = v[map[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [map = std::move(map)](const TensorImpl& o, std::span<const ImplPtr> in) {
                       if (!in[0]->requires_grad) return;
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
                     });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  const std::size_t rank = x.dim();
  std::vector<std::size_t> order(rank);
  for (std::size_t i = 0; i < rank; ++i) order[i] = i;
  std::swap(order[normalize_axis("transpose", axis0, rank)], order[normalize_axis("transpose", axis1, rank)]);
  return permute(x, order);
}

Tensor unsqueeze(const Tensor& x, int axis) {
  Shape s = x.shape();
  const int n = static_cast<int>(s.size()) + 1;
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) throw std::invalid_argument("unsqueeze: axis out of range");
  s.insert(s.begin() + a, 1);
  return reshape(x, std::move(s));
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis("slice", axis, s.size());
  if (begin > end || end > s[ax]) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                ") invalid for axis extent " + std::to_string(s[ax]) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax], w = end - begin;
  Shape out_shape = s;
  out_shape[ax] = w;
  std::vector<double> out(outer * w * inner);
  const auto v = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(v.data() + (o * n + begin) * inner, w * inner, out.data() + o * w * inner);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x},
                     [outer, inner, n, w, begin](const TensorImpl& o, std::span<const ImplPtr> in) {
                       if (!in[0]->requires_grad) return;
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t oo = 0; oo < outer; ++oo) {
                         const double* src = o.grad.data() + oo * w * inner;
                         double* dst = g.data() + (oo * n + begin) * inner;
                         for (std::size_t i = 0; i < w * inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis("concat", axis, s0.size());
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s, "rank differs");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != s0[i]) shape_error("concat", s0, s, "non-concat extents differ");
    }
    widths.push_back(s[ax]);
    total += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[ax] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].data();
    const std::size_t w = widths[p];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * w * inner, w * inner, out.data() + (o * total + offset) * inner);
    }
    offset += w;
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [widths = std::move(widths), outer, inner, total](const TensorImpl& o, std::span<const ImplPtr> in) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < in.size(); ++p) {
                         const std::size_t w = widths[p];
                         if (in[p]->requires_grad) {
                           auto& g = in[p]->grad_buffer();
                           for (std::size_t oo = 0; oo < outer; ++oo) {
                             const double* src = o.grad.data() + (oo * total + off) * inner;
                             double* dst = g.data() + oo * w * inner;
                             for (std::size_t i = 0; i < w * inner; ++i) dst[i] += src[i];
                           }
                         }
                         off += w;
                       }
                     });
}

Tensor stack(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("stack: no inputs");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  const int rank = static_cast<int>(parts[0].dim()) + 1;
  const int a = axis < 0 ? axis + rank : axis;
  for (const Tensor& p : parts) expanded.push_back(unsqueeze(p, a));
  return concat(expanded, a);
}

// ---------------------------------------------------------------- fused layers

Tensor softmax(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw std::invalid_argument("softmax: scalar input");
  const std::size_t n = s.back();
  const std::size_t rows = x.numel() / n;
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = v.data() + r * n;
    double* dst = out.data() + r * n;
    const double mx = *std::max_element(src, src + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (dst[i] = std::exp(src[i] - mx));
    for (std::size_t i = 0; i < n; ++i) dst[i] /= z;
  }
  return make_result("softmax", s, std::move(out), {x}, [rows, n](const TensorImpl& o, std::span<const ImplPtr> in) {
    if (!in[0]->requires_grad) return;
    auto& g = in[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* gy = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += y[i] * gy[i];
      double* gx = g.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw std::invalid_argument("layer_norm: scalar input");
  const std::size_t n = s.back();
  const bool affine = gamma.defined();
  if (affine && (gamma.shape() != Shape{n} || !beta.defined() || beta.shape() != Shape{n})) {
    shape_error("layer_norm", s, gamma.shape(), "affine parameters must match the last extent");
  }
  const std::size_t rows = x.numel() / n;
  const auto v = x.data();
  std::vector<double> xhat(v.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = v.data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += src[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) xhat[r * n + i] = (src[i] - mu) * inv_std[r];
  }
  std::vector<double> out = xhat;
  if (affine) {
    const auto gm = gamma.data();
    const auto bt = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xhat[r * n + i] * gm[i] + bt[i];
    }
  }
  std::vector<Tensor> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_result("layer_norm", s, std::move(out), inputs,
                     [rows, n, affine, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         const TensorImpl& o, std::span<const ImplPtr> in) {
                       const double* gm = affine ? in[1]->data.data() : nullptr;
                       std::vector<double> dxhat(n);
                       double* gx = in[0]->requires_grad ? in[0]->grad_buffer().data() : nullptr;
                       double* gg = affine && in[1]->requires_grad ? in[1]->grad_buffer().data() : nullptr;
                       double* gb = affine && in[2]->requires_grad ? in[2]->grad_buffer().data() : nullptr;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gy = o.grad.data() + r * n;
                         const double* xh = xhat.data() + r * n;
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t i = 0; i < n; ++i) {
                           dxhat[i] = gm ? gy[i] * gm[i] : gy[i];
                           m1 += dxhat[i];
                           m2 += dxhat[i] * xh[i];
                           if (gg) gg[i] += gy[i] * xh[i];
                           if (gb) gb[i] += gy[i];
                         }
                         if (!gx) continue;
                         m1 /= static_cast<double>(n);
                         m2 /= static_cast<double>(n);
                         for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += inv_std[r] * (dxhat[i] - m1 - xh[i] * m2);
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : scale;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

Tensor cross(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.shape().empty() || a.shape().back() != 3) {
    shape_error("cross", a.shape(), b.shape(), "need equal shapes with last extent 3");
  }
  const std::size_t rows = a.numel() / 3;
  const auto va = a.data();
  const auto vb = b.data();
  std::vector<double> out(va.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = va.data() + 3 * r;
    const double* q = vb.data() + 3 * r;
    double* c = out.data() + 3 * r;
    c[0] = p[1] * q[2] - p[2] * q[1];
    c[1] = p[2] * q[0] - p[0] * q[2];
    c[2] = p[0] * q[1] - p[1] * q[0];
  }
  return make_result("cross", a.shape(), std::move(out), {a, b}, [rows](const TensorImpl& o, std::span<const ImplPtr> in) {
    // d(a x b) . g : grad_a = b x g, grad_b = g x a
    const double* pa = in[0]->data.data();
    const double* pb = in[1]->data.data();
    double* ga = in[0]->requires_grad ? in[0]->grad_buffer().data() : nullptr;
    double* gb = in[1]->requires_grad ? in[1]->grad_buffer().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = pa + 3 * r;
      const double* q = pb + 3 * r;
      const double* g = o.grad.data() + 3 * r;
      if (ga) {
        ga[3 * r + 0] += q[1] * g[2] - q[2] * g[1];
        ga[3 * r + 1] += q[2] * g[0] - q[0] * g[2];
        ga[3 * r + 2] += q[0] * g[1] - q[1] * g[0];
      }
      if (gb) {
        gb[3 * r + 0] += g[1] * p[2] - g[2] * p[1];
        gb[3 * r + 1] += g[2] * p[0] - g[0] * p[2];
        gb[3 * r + 2] += g[0] * p[1] - g[1] * p[0];
      }
    }
  });
}

}  // namespace bimanual
