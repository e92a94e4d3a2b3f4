#include "clipvos/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>
#include <numeric>
#include <string>

namespace clipvos {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m x n] (+)= op(A) * op(B), all row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, Eigen::Index m, Eigen::Index n, Eigen::Index k,
          bool trans_a, bool trans_b, bool accumulate) {
  Eigen::Map<const RowMat<T>> A(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const RowMat<T>> B(b, trans_b ? n : k, trans_b ? k : n);
  Eigen::Map<RowMat<T>> C(c, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      C.noalias() += lhs * rhs;
    } else {
      C.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(A, B);
  } else if (trans_a && !trans_b) {
    run(A.transpose(), B);
  } else if (!trans_a && trans_b) {
    run(A, B.transpose());
  } else {
    run(A.transpose(), B.transpose());
  }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks_enabled()) return;
  // Exponent-bit test; vectorizes where an isfinite loop does not.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exp_mask = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  const auto data = t.data();
  Bits bad = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Bits b;
    std::memcpy(&b, &data[i], sizeof b);
    bad |= static_cast<Bits>((b & exp_mask) == exp_mask);
  }
  if (bad) {
    throw NonFiniteError(std::string(op) + ": non-finite value in output " +
                         shape_str(t.shape()));
  }
}

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (GradTape::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Marks `out` as differentiable and records `fn(out_grad)` on the active tape.
template <typename T, typename F>
void attach(Tensor<T>& out, F fn) {
  out.set_requires_grad(true);
  auto node = out.node_ptr();
  GradTape::active()->record([node, fn = std::move(fn)]() mutable {
    if (node->grad.empty()) return;
    fn(node->grad);
  });
}

template <typename T>
Tensor<T> finish(Tensor<T> out, const char* op) {
  check_finite(out, op);
  return out;
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b,
                             const std::string& what = "shape mismatch") {
  throw ShapeError(op + ": " + what + " " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const std::string& what) {
  throw ShapeError(op + ": " + what + " " + shape_str(a));
}

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T, typename F>
Tensor<T> elementwise_binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i]);
  return Tensor<T>(a.shape(), std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) shape_fail("matmul", a.shape(), b.shape(), "expects rank-2 operands");
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) shape_fail("matmul", a.shape(), b.shape(), "inner dimension mismatch");
  std::vector<T> out(m * n);
  gemm(a.data().data(), b.data().data(), out.data(), m, n, k, trans_a, trans_b, false);
  Tensor<T> result({m, n}, std::move(out));
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(result, [an, bn, m, n, k, trans_a, trans_b](const std::vector<T>& g) {
      if (an->requires_grad) {
        an->ensure_grad();
        if (!trans_a) {
          gemm(g.data(), bn->data.data(), an->grad.data(), m, k, n, false, !trans_b, true);
        } else {
          gemm(bn->data.data(), g.data(), an->grad.data(), k, m, n, trans_b, true, true);
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        if (!trans_b) {
          gemm(an->data.data(), g.data(), bn->grad.data(), k, n, m, !trans_a, false, true);
        } else {
          gemm(g.data(), an->data.data(), bn->grad.data(), n, k, m, true, trans_a, true);
        }
      }
    });
  }
  return finish(std::move(result), "matmul");
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3) shape_fail("bmm", a.shape(), b.shape(), "expects rank-3 operands");
  if (a.dim(0) != b.dim(0)) shape_fail("bmm", a.shape(), b.shape(), "batch mismatch");
  const std::size_t batch = a.dim(0);
  const std::size_t m = trans_a ? a.dim(2) : a.dim(1);
  const std::size_t k = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb) shape_fail("bmm", a.shape(), b.shape(), "inner dimension mismatch");
  const std::size_t as = m * k, bs = k * n, cs = m * n;
  std::vector<T> out(batch * cs);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(a.data().data() + i * as, b.data().data() + i * bs, out.data() + i * cs, m, n, k, trans_a,
         trans_b, false);
  }
  Tensor<T> result({batch, m, n}, std::move(out));
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(result, [=](const std::vector<T>& g) {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t i = 0; i < batch; ++i) {
        const T* gi = g.data() + i * cs;
        const T* ai = an->data.data() + i * as;
        const T* bi = bn->data.data() + i * bs;
        if (an->requires_grad) {
          T* gai = an->grad.data() + i * as;
          if (!trans_a) {
            gemm(gi, bi, gai, m, k, n, false, !trans_b, true);
          } else {
            gemm(bi, gi, gai, k, m, n, trans_b, true, true);
          }
        }
        if (bn->requires_grad) {
          T* gbi = bn->grad.data() + i * bs;
          if (!trans_b) {
            gemm(ai, gi, gbi, k, n, m, !trans_a, false, true);
          } else {
            gemm(gi, ai, gbi, n, k, m, true, trans_a, true);
          }
        }
      }
    });
  }
  return finish(std::move(result), "bmm");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = elementwise_binary("add", a, b, [](T x, T y) { return x + y; });
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(out, [an, bn](const std::vector<T>& g) {
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
      }
    });
  }
  return finish(std::move(out), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = elementwise_binary("sub", a, b, [](T x, T y) { return x - y; });
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(out, [an, bn](const std::vector<T>& g) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
      }
    });
  }
  return finish(std::move(out), "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = elementwise_binary("mul", a, b, [](T x, T y) { return x * y; });
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(out, [an, bn](const std::vector<T>& g) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->data[i];
      }
    });
  }
  return finish(std::move(out), "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  Tensor<T> result(x.shape(), std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn, factor](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i] * factor;
    });
  }
  return finish(std::move(result), "scale");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v += value;
  Tensor<T> result(x.shape(), std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
    });
  }
  return finish(std::move(result), "add_scalar");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  Tensor<T> result(x.shape(), std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xn->data[i] > T(0)) xn->grad[i] += g[i];
      }
    });
  }
  return finish(std::move(result), "relu");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xd[i]));
  Tensor<T> result(x.shape(), std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    NodePtr<T> yn = result.node_ptr();
    std::weak_ptr<TensorNode<T>> weak_y = yn;
    attach(result, [xn, weak_y](const std::vector<T>& g) {
      auto y = weak_y.lock();
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        xn->grad[i] += g[i] * y->data[i] * (T(1) - y->data[i]);
      }
    });
  }
  return finish(std::move(result), "sigmoid");
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xd[i]);
  Tensor<T> result(x.shape(), std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i] / xn->data[i];
    });
  }
  return finish(std::move(result), "log");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = elementwise_binary("div", a, b, [](T x, T y) { return x / y; });
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(out, [an, bn](const std::vector<T>& g) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] / bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          bn->grad[i] -= g[i] * an->data[i] / (bn->data[i] * bn->data[i]);
        }
      }
    });
  }
  return finish(std::move(out), "div");
}

template <typename T>
Tensor<T> row_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("row_matmul", a.shape(), b.shape(), "inner dimension mismatch");
  }
  const std::size_t n = a.dim(0), m = a.dim(1), c = b.dim(1);
  std::vector<T> out(n * c, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * c;
    for (std::size_t j = 0; j < m; ++j) {
      const T w = ad[i * m + j];
      if (w == T(0)) continue;
      const T* src = bd + j * c;
      for (std::size_t k = 0; k < c; ++k) row[k] += w * src[k];
    }
  }
  Tensor<T> result({n, c}, std::move(out));
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(result, [an, bn, n, m, c](const std::vector<T>& g) {
      if (an->requires_grad) {
        an->ensure_grad();
        gemm(g.data(), bn->data.data(), an->grad.data(), n, m, c, false, true, true);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        gemm(an->data.data(), g.data(), bn->grad.data(), m, c, n, true, false, true);
      }
    });
  }
  return finish(std::move(result), "row_matmul");
}

namespace {

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = xc + iy * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* xc = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          const T* src = row + oy * g.out_w;
          T* dst = xc + iy * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 4) {
    shape_fail("conv2d", x.shape(), weight.shape(), "expects [B x C x H x W] input and rank-4 weight");
  }
  if (x.dim(1) != weight.dim(1)) shape_fail("conv2d", x.shape(), weight.shape(), "channel mismatch");
  if (stride == 0) shape_fail("conv2d", x.shape(), "stride must be positive");
  const std::size_t batch = x.dim(0), out_c = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), stride, pad, 0, 0};
  if (g.height + 2 * pad < g.kh || g.width + 2 * pad < g.kw) {
    shape_fail("conv2d", x.shape(), weight.shape(), "kernel larger than padded input");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_c)) {
    shape_fail("conv2d", weight.shape(), bias.shape(), "bias mismatch");
  }
  g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t patch = g.channels * g.kh * g.kw;
  const std::size_t in_size = g.channels * g.height * g.width;
  const bool direct = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;
  const bool grad = tracking({&x, &weight, &bias});

  std::vector<T> out(batch * out_c * plane);
  std::vector<T> cols;
  if (!direct) cols.resize((grad ? batch : 1) * patch * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x.data().data() + b * in_size;
    const T* col = xb;
    if (!direct) {
      T* dst = cols.data() + (grad ? b * patch * plane : 0);
      im2col(xb, g, dst);
      col = dst;
    }
    T* ob = out.data() + b * out_c * plane;
    gemm(weight.data().data(), col, ob, out_c, plane, patch, false, false, false);
    if (bias.defined()) {
      for (std::size_t o = 0; o < out_c; ++o) {
        const T bo = bias.data()[o];
        T* row = ob + o * plane;
        for (std::size_t p = 0; p < plane; ++p) row[p] += bo;
      }
    }
  }
  Tensor<T> result({batch, out_c, g.out_h, g.out_w}, std::move(out));
  if (grad) {
    NodePtr<T> xn = x.node_ptr(), wn = weight.node_ptr();
    NodePtr<T> bn = bias.defined() ? bias.node_ptr() : nullptr;
    attach(result, [=, cols = std::move(cols)](const std::vector<T>& gout) {
      if (wn->requires_grad) wn->ensure_grad();
      if (bn && bn->requires_grad) bn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      std::vector<T> gcol(direct ? 0 : patch * plane);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* gb = gout.data() + b * out_c * plane;
        const T* col = direct ? xn->data.data() + b * in_size : cols.data() + b * patch * plane;
        if (wn->requires_grad) {
          gemm(gb, col, wn->grad.data(), out_c, patch, plane, false, true, true);
        }
        if (bn && bn->requires_grad) {
          for (std::size_t o = 0; o < out_c; ++o) {
            T acc = 0;
            const T* row = gb + o * plane;
            for (std::size_t p = 0; p < plane; ++p) acc += row[p];
            bn->grad[o] += acc;
          }
        }
        if (xn->requires_grad) {
          T* gx = xn->grad.data() + b * in_size;
          if (direct) {
            gemm(wn->data.data(), gb, gx, patch, plane, out_c, true, false, true);
          } else {
            gemm(wn->data.data(), gb, gcol.data(), patch, plane, out_c, true, false, false);
            col2im(gcol.data(), g, gx);
          }
        }
      }
    });
  }
  return finish(std::move(result), "conv2d");
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> upsample_taps(std::size_t in) {
  std::vector<Tap> taps(2 * in);
  for (std::size_t o = 0; o < 2 * in; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear_2x(const Tensor<T>& x) {
  if (x.rank() != 4) shape_fail("upsample_bilinear_2x", x.shape(), "expects [B x C x H x W]");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = upsample_taps(h), tx = upsample_taps(w);
  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<T> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data().data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const Tap& a = ty[oy];
      const T* r0 = src + a.i0 * w;
      const T* r1 = src + a.i1 * w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const Tap& b = tx[ox];
        dst[oy * ow + ox] =
            static_cast<T>(a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                           a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]));
      }
    }
  }
  Tensor<T> result({x.dim(0), x.dim(1), oh, ow}, std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [=](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p) {
        T* gx = xn->grad.data() + p * h * w;
        const T* go = g.data() + p * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const Tap& a = ty[oy];
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const Tap& b = tx[ox];
            const double v = go[oy * ow + ox];
            gx[a.i0 * w + b.i0] += static_cast<T>(v * a.w0 * b.w0);
            gx[a.i0 * w + b.i1] += static_cast<T>(v * a.w0 * b.w1);
            gx[a.i1 * w + b.i0] += static_cast<T>(v * a.w1 * b.w0);
            gx[a.i1 * w + b.i1] += static_cast<T>(v * a.w1 * b.w1);
          }
        }
      }
    });
  }
  return finish(std::move(result), "upsample_bilinear_2x");
}

namespace {

// Softmax along a strided axis. `keep` may be null (every entry kept); both
// paths run the same arithmetic so an all-true mask is bitwise identical.
template <typename T>
void softmax_kernel(const T* x, T* y, std::size_t outer, std::size_t len, std::size_t inner,
                    const std::uint8_t* keep) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = base + j * inner;
        if (keep && !keep[idx]) continue;
        any = true;
        mx = std::max(mx, x[idx]);
      }
      if (!any) {
        for (std::size_t j = 0; j < len; ++j) y[base + j * inner] = T(0);
        continue;
      }
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = base + j * inner;
        const T e = (keep && !keep[idx]) ? T(0) : std::exp(x[idx] - mx);
        y[idx] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= total;
    }
  }
}

template <typename T>
void softmax_backward(const T* y, const T* g, T* gx, std::size_t outer, std::size_t len,
                      std::size_t inner) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T dot = 0;
      for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = base + j * inner;
        gx[idx] += y[idx] * (g[idx] - dot);
      }
    }
  }
}

template <typename T>
Tensor<T> softmax_impl(const char* op, const Tensor<T>& x, std::size_t axis,
                       const std::uint8_t* keep) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<T> out(x.numel());
  softmax_kernel(x.data().data(), out.data(), outer, len, inner, keep);
  Tensor<T> result(x.shape(), std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    std::weak_ptr<TensorNode<T>> weak_y = result.node_ptr();
    attach(result, [=](const std::vector<T>& g) {
      auto y = weak_y.lock();
      xn->ensure_grad();
      softmax_backward(y->data.data(), g.data(), xn->grad.data(), outer, len, inner);
    });
  }
  return finish(std::move(result), op);
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) shape_fail("softmax", x.shape(), "axis out of range for");
  return softmax_impl("softmax", x, axis, nullptr);
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const std::vector<std::uint8_t>& keep) {
  if (keep.size() != x.numel()) {
    throw ShapeError("masked_softmax: mask of " + std::to_string(keep.size()) +
                     " entries for input " + shape_str(x.shape()));
  }
  return softmax_impl("masked_softmax", x, x.rank() - 1, keep.data());
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    shape_fail("layer_norm", x.shape(), gamma.shape(), "affine parameters do not match last axis");
  }
  const std::size_t rows = x.numel() / c;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const T* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xr[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  if (tracking({&x, &gamma, &beta})) {
    NodePtr<T> xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
    attach(result, [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](const std::vector<T>& g) {
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      std::vector<T> gh(c);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * c;
        const T* hr = xhat.data() + r * c;
        T mean_gh = 0, mean_ghh = 0;
        for (std::size_t j = 0; j < c; ++j) {
          if (gn->requires_grad) gn->grad[j] += gr[j] * hr[j];
          if (bn->requires_grad) bn->grad[j] += gr[j];
          gh[j] = gr[j] * gn->data[j];
          mean_gh += gh[j];
          mean_ghh += gh[j] * hr[j];
        }
        if (!xn->requires_grad) continue;
        mean_gh /= static_cast<T>(c);
        mean_ghh /= static_cast<T>(c);
        T* gx = xn->grad.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) {
          gx[j] += inv_std[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
        }
      }
    });
  }
  return finish(std::move(result), "layer_norm");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(1)) {
    shape_fail("linear", x.shape(), weight.shape(), "input width does not match weight");
  }
  const std::size_t in = weight.dim(1), out_w = weight.dim(0);
  if (bias.defined() && bias.numel() != out_w) shape_fail("linear", weight.shape(), bias.shape(), "bias mismatch");
  const std::size_t rows = x.numel() / in;
  std::vector<T> out(rows * out_w);
  gemm(x.data().data(), weight.data().data(), out.data(), rows, out_w, in, false, true, false);
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out_w; ++o) out[r * out_w + o] += bias.data()[o];
    }
  }
  Shape shape = x.shape();
  shape.back() = out_w;
  Tensor<T> result(shape, std::move(out));
  if (tracking({&x, &weight, &bias})) {
    NodePtr<T> xn = x.node_ptr(), wn = weight.node_ptr();
    NodePtr<T> bn = bias.defined() ? bias.node_ptr() : nullptr;
    attach(result, [=](const std::vector<T>& g) {
      if (xn->requires_grad) {
        xn->ensure_grad();
        gemm(g.data(), wn->data.data(), xn->grad.data(), rows, in, out_w, false, false, true);
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        gemm(g.data(), xn->data.data(), wn->grad.data(), out_w, in, rows, true, false, true);
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t o = 0; o < out_w; ++o) bn->grad[o] += g[r * out_w + o];
        }
      }
    });
  }
  return finish(std::move(result), "linear");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_fail("concat", first, "axis out of range for");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_fail("concat", first, p.shape(), "rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) shape_fail("concat", first, p.shape());
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_block = shape[axis] * inner;
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(axis) * inner;
    offsets.push_back(offset);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * block, block, out.data() + o * out_block + offset);
    }
    offset += block;
  }
  Tensor<T> result(shape, std::move(out));
  bool grad = false;
  for (const auto& p : parts) grad = grad || tracking({&p});
  if (grad) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    attach(result, [=](const std::vector<T>& g) {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        auto& n = nodes[k];
        if (!n->requires_grad) continue;
        n->ensure_grad();
        const std::size_t block = n->data.size() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.data() + o * out_block + offsets[k];
          T* dst = n->grad.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return finish(std::move(result), "concat");
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t in_block = x.dim(axis) * inner;
  const std::size_t block = (end - begin) * inner;
  const std::size_t offset = begin * inner;
  std::vector<T> out(outer * block);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + o * in_block + offset, block, out.data() + o * block);
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor<T> result(shape, std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [=](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        T* dst = xn->grad.data() + o * in_block + offset;
        const T* src = g.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    });
  }
  return finish(std::move(result), "slice");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape, "element count mismatch");
  Tensor<T> result(shape, std::vector<T>(x.data().begin(), x.data().end()));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) shape_fail("permute", x.shape(), "order rank mismatch for");
  std::vector<bool> seen(r, false);
  for (std::size_t a : order) {
    if (a >= r || seen[a]) shape_fail("permute", x.shape(), "order is not a permutation for");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  Shape shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    shape[i] = x.dim(order[i]);
    src_stride[i] = in_stride[order[i]];
  }
  // Flat source offset for every destination element, walked odometer-style.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src_index(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src_index[i] = offset;
    for (std::size_t a = r; a-- > 0;) {
      if (++counter[a] < shape[a]) {
        offset += src_stride[a];
        break;
      }
      offset -= src_stride[a] * (shape[a] - 1);
      counter[a] = 0;
    }
  }
  std::vector<T> out(n);
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[src_index[i]];
  Tensor<T> result(shape, std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn, src_index = std::move(src_index)](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[src_index[i]] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> result = Tensor<T>::scalar(acc);
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn](const std::vector<T>& g) {
      xn->ensure_grad();
      for (T& v : xn->grad) v += g[0];
    });
  }
  return finish(std::move(result), "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) shape_fail("sum_axis", x.shape(), "axis out of range for");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<T> out(outer * inner, T(0));
  const T* xd = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      const T* src = xd + (o * len + j) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Shape shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) shape.push_back(x.dim(i));
  }
  if (shape.empty()) shape.push_back(1);
  Tensor<T> result(shape, std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [=](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < len; ++j) {
          T* dst = xn->grad.data() + (o * len + j) * inner;
          const T* src = g.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return finish(std::move(result), "sum_axis");
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& index) {
  if (x.rank() != 2) shape_fail("gather_rows", x.shape(), "expects a [n x c] matrix, got");
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<T> out(index.size() * c, T(0));
  for (std::size_t r = 0; r < index.size(); ++r) {
    const std::int64_t src = index[r];
    if (src < 0) continue;
    if (static_cast<std::size_t>(src) >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(src) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(x.data().data() + src * c, c, out.data() + r * c);
  }
  Tensor<T> result({index.size(), c}, std::move(out));
  if (tracking({&x})) {
    NodePtr<T> xn = x.node_ptr();
    attach(result, [xn, index, c](const std::vector<T>& g) {
      xn->ensure_grad();
      for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0) continue;
        T* dst = xn->grad.data() + index[r] * c;
        const T* src = g.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    });
  }
  return finish(std::move(result), "gather_rows");
}

template <typename T>
Tensor<T> neg_sq_dist(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    shape_fail("neg_sq_dist", a.shape(), b.shape(), "channel mismatch");
  }
  const std::size_t n = a.dim(0), m = b.dim(0), c = a.dim(1);
  // Channel-major copy of b so the inner loop runs contiguously over m.
  std::vector<T> bt(c * m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < c; ++k) bt[k * m + j] = b.data()[j * c + k];
  }
  std::vector<T> out(n * m, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * m;
    const T* ai = a.data().data() + i * c;
    for (std::size_t k = 0; k < c; ++k) {
      const T q = ai[k];
      const T* col = bt.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) {
        const T d = q - col[j];
        row[j] -= d * d;
      }
    }
  }
  Tensor<T> result({n, m}, std::move(out));
  if (tracking({&a, &b})) {
    NodePtr<T> an = a.node_ptr(), bn = b.node_ptr();
    attach(result, [=](const std::vector<T>& g) {
      // d/da_i = -2 (rowsum_i a_i - (g b)_i),  d/db_j = 2 ((g^T a)_j - colsum_j b_j)
      if (an->requires_grad) {
        an->ensure_grad();
        std::vector<T> gb(n * c);
        gemm(g.data(), bn->data.data(), gb.data(), n, c, m, false, false, false);
        for (std::size_t i = 0; i < n; ++i) {
          T rs = 0;
          for (std::size_t j = 0; j < m; ++j) rs += g[i * m + j];
          for (std::size_t k = 0; k < c; ++k) {
            an->grad[i * c + k] += T(-2) * (rs * an->data[i * c + k] - gb[i * c + k]);
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        std::vector<T> ga(m * c);
        gemm(g.data(), an->data.data(), ga.data(), m, c, n, true, false, false);
        std::vector<T> cs(m, T(0));
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) cs[j] += g[i * m + j];
        }
        for (std::size_t j = 0; j < m; ++j) {
          for (std::size_t k = 0; k < c; ++k) {
            bn->grad[j * c + k] += T(2) * (ga[j * c + k] - cs[j] * bn->data[j * c + k]);
          }
        }
      }
    });
  }
  return finish(std::move(result), "neg_sq_dist");
}

template <typename T>
Tensor<T> soft_aggregate(const Tensor<T>& probs, T eps) {
  if (probs.rank() < 2) shape_fail("soft_aggregate", probs.shape(), "expects [K x ...], got");
  const std::size_t k_obj = probs.dim(0);
  const std::size_t pixels = probs.numel() / k_obj;
  const std::size_t channels = k_obj + 1;
  const double lo = eps, hi = 1.0 - static_cast<double>(eps);
  std::vector<T> out(channels * pixels);
  const T* pd = probs.data().data();
  std::vector<double> logit(channels);
  for (std::size_t p = 0; p < pixels; ++p) {
    double bg = 1.0;
    for (std::size_t k = 0; k < k_obj; ++k) {
      const double v = std::clamp(static_cast<double>(pd[k * pixels + p]), lo, hi);
      bg *= 1.0 - v;
      logit[k + 1] = std::log(v) - std::log1p(-v);
    }
    bg = std::clamp(bg, lo, hi);
    logit[0] = std::log(bg) - std::log1p(-bg);
    double mx = logit[0];
    for (std::size_t c = 1; c < channels; ++c) mx = std::max(mx, logit[c]);
    double total = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      logit[c] = std::exp(logit[c] - mx);
      total += logit[c];
    }
    for (std::size_t c = 0; c < channels; ++c) out[c * pixels + p] = static_cast<T>(logit[c] / total);
  }
  Shape shape = probs.shape();
  shape[0] = channels;
  Tensor<T> result(shape, std::move(out));
  if (tracking({&probs})) {
    NodePtr<T> pn = probs.node_ptr();
    std::weak_ptr<TensorNode<T>> weak_y = result.node_ptr();
    attach(result, [=](const std::vector<T>& g) {
      auto y = weak_y.lock();
      pn->ensure_grad();
      std::vector<double> gl(channels);
      for (std::size_t p = 0; p < pixels; ++p) {
        double dot = 0;
        for (std::size_t c = 0; c < channels; ++c) {
          dot += static_cast<double>(g[c * pixels + p]) * y->data[c * pixels + p];
        }
        for (std::size_t c = 0; c < channels; ++c) {
          gl[c] = y->data[c * pixels + p] * (g[c * pixels + p] - dot);
        }
        double bg_raw = 1.0;
        for (std::size_t k = 0; k < k_obj; ++k) {
          bg_raw *= 1.0 - std::clamp(static_cast<double>(pn->data[k * pixels + p]), lo, hi);
        }
        const bool bg_free = bg_raw > lo && bg_raw < hi;
        const double dbg = bg_free ? gl[0] / (bg_raw * (1.0 - bg_raw)) : 0.0;
        for (std::size_t k = 0; k < k_obj; ++k) {
          const double v = pn->data[k * pixels + p];
          if (v <= lo || v >= hi) continue;
          // d logit_k / dv = 1 / (v (1 - v)); d bg / dv = -bg / (1 - v)
          const double grad = gl[k + 1] / (v * (1.0 - v)) - dbg * bg_raw / (1.0 - v);
          pn->grad[k * pixels + p] += static_cast<T>(grad);
        }
      }
    });
  }
  return finish(std::move(result), "soft_aggregate");
}

template <typename T>
std::vector<std::uint8_t> topk_mask(const Tensor<T>& x, std::size_t k) {
  if (x.rank() != 2) shape_fail("topk_mask", x.shape(), "expects a matrix, got");
  if (k == 0) throw std::invalid_argument("topk_mask: k must be at least 1");
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<std::uint8_t> keep(n * m, 0);
  if (k >= m) {
    std::fill(keep.begin(), keep.end(), 1);
    return keep;
  }
  std::vector<std::uint32_t> idx(m);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data().data() + i * m;
    std::iota(idx.begin(), idx.end(), 0u);
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(),
                     [row](std::uint32_t a, std::uint32_t b) {
                       return row[a] > row[b] || (row[a] == row[b] && a < b);
                     });
    for (std::size_t j = 0; j < k; ++j) keep[i * m + idx[j]] = 1;
  }
  return keep;
}

template <typename T>
std::vector<std::uint8_t> argmax_axis0(const Tensor<T>& x) {
  const std::size_t c = x.dim(0);
  if (c > 255) shape_fail("argmax_axis0", x.shape(), "too many channels for 8-bit labels in");
  const std::size_t pixels = x.numel() / c;
  std::vector<std::uint8_t> labels(pixels, 0);
  const T* d = x.data().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    T best = d[p];
    for (std::size_t k = 1; k < c; ++k) {
      if (d[k * pixels + p] > best) {
        best = d[k * pixels + p];
        labels[p] = static_cast<std::uint8_t>(k);
      }
    }
  }
  return labels;
}

#define CLIPVOS_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> row_matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> log(const Tensor<T>&);                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                            std::size_t, std::size_t);                                       \
  template Tensor<T> upsample_bilinear_2x(const Tensor<T>&);                                 \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> masked_softmax(const Tensor<T>&, const std::vector<std::uint8_t>&);     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                     \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);         \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::int64_t>&);        \
  template Tensor<T> neg_sq_dist(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> soft_aggregate(const Tensor<T>&, T);                                    \
  template std::vector<std::uint8_t> topk_mask(const Tensor<T>&, std::size_t);               \
  template std::vector<std::uint8_t> argmax_axis0(const Tensor<T>&);

CLIPVOS_INSTANTIATE_OPS(float)
CLIPVOS_INSTANTIATE_OPS(double)

}  // namespace clipvos
