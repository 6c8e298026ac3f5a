#include "pgr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pgr {

namespace detail {

void check_finite(const Tensor& t, const char* op) {
  real acc = 0;
  for (real v : t.data()) acc += v;
  if (!std::isfinite(acc)) {
    // locate for the message
    for (real v : t.data()) {
      if (!std::isfinite(v)) throw std::domain_error(std::string(op) + " produced non-finite values");
    }
    throw std::domain_error(std::string(op) + " overflowed");
  }
}

void gemm(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real* arow = a + static_cast<std::size_t>(i) * k;
    real* crow = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      real av = arow[kk];
      if (av == real(0)) continue;
      const real* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += a[m,n] * b[k,n]^T
static void gemm_nt(const real* a, const real* b, real* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const real* arow = a + static_cast<std::size_t>(i) * n;
    real* crow = c + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const real* brow = b + static_cast<std::size_t>(kk) * n;
      real acc = 0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
static void gemm_tn(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real* arow = a + static_cast<std::size_t>(i) * k;
    const real* brow = b + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      real av = arow[kk];
      if (av == real(0)) continue;
      real* crow = c + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

namespace {

using detail::check_finite;

bool tape_on(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

void record(Tensor& out, std::function<void()> fn, const char* op) {
  out.set_requires_grad(true);
  Tape::active()->record(std::move(fn), op);
}

void require_same_or_scalar(const Tensor& a, const Tensor& b, const char* op) {
  if (a.numel() == 1 || b.numel() == 1) return;
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

// index mapper for the narrow broadcast rules
struct Bcast {
  bool a_scalar, b_scalar;
  std::size_t a_idx(std::size_t i) const { return a_scalar ? 0 : i; }
  std::size_t b_idx(std::size_t i) const { return b_scalar ? 0 : i; }
};

template <typename Fwd, typename Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  require_same_or_scalar(a, b, name);
  Bcast bc{a.numel() == 1, b.numel() == 1};
  const Tensor& shaped = bc.a_scalar ? b : a;
  Tensor out = Tensor::zeros(shaped.shape());
  auto oa = a.data();
  auto ob = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = fwd(oa[bc.a_idx(i)], ob[bc.b_idx(i)]);
  check_finite(out, name);
  if (tape_on({&a, &b})) {
    record(
        out,
        [a, b, out, bc, bwd]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto da = a.requires_grad() ? a.grad() : std::span<real>{};
          auto db = b.requires_grad() ? b.grad() : std::span<real>{};
          auto av = a.data();
          auto bv = b.data();
          for (std::size_t i = 0; i < og.size(); ++i) {
            auto [ga, gb] = bwd(av[bc.a_idx(i)], bv[bc.b_idx(i)], og[i]);
            if (!da.empty()) da[bc.a_idx(i)] += ga;
            if (!db.empty()) db[bc.b_idx(i)] += gb;
          }
        },
        name);
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = fwd(av[i]);
  check_finite(out, name);
  if (tape_on({&a})) {
    record(
        out,
        [a, out, bwd]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto da = a.grad();
          auto av = a.data();
          auto ov = out.data();
          for (std::size_t i = 0; i < og.size(); ++i) da[i] += bwd(av[i], ov[i], og[i]);
        },
        name);
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](real x, real y) { return x + y; },
                   [](real, real, real g) { return std::pair<real, real>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](real x, real y) { return x - y; },
                   [](real, real, real g) { return std::pair<real, real>{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](real x, real y) { return x * y; },
                   [](real x, real y, real g) { return std::pair<real, real>{g * y, g * x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "div", [](real x, real y) { return x / y; },
                   [](real x, real y, real g) {
                     return std::pair<real, real>{g / y, -g * x / (y * y)};
                   });
}

Tensor add_scalar(const Tensor& a, real c) {
  return unary_op(a, "add_scalar", [c](real x) { return x + c; },
                  [](real, real, real g) { return g; });
}

Tensor mul_scalar(const Tensor& a, real c) {
  return unary_op(a, "mul_scalar", [c](real x) { return x * c; },
                  [c](real, real, real g) { return g * c; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, "exp", [](real x) { return std::exp(x); },
                  [](real, real o, real g) { return g * o; });
}

Tensor log(const Tensor& a) {
  return unary_op(a, "log", [](real x) { return std::log(x); },
                  [](real x, real, real g) { return g / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid",
                  [](real x) {
                    if (x >= 0) return real(1) / (real(1) + std::exp(-x));
                    real e = std::exp(x);
                    return e / (real(1) + e);
                  },
                  [](real, real o, real g) { return g * o * (real(1) - o); });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", [](real x) { return x > 0 ? x : real(0); },
                  [](real x, real, real g) { return x > 0 ? g : real(0); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  detail::gemm(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  check_finite(out, "matmul");
  if (tape_on({&a, &b})) {
    record(
        out,
        [a, b, out, m, k, n]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          if (a.requires_grad())
            detail::gemm_nt(og.data(), b.data().data(), a.grad().data(), m, n, k);
          if (b.requires_grad())
            detail::gemm_tn(a.data().data(), og.data(), b.grad().data(), m, k, n);
        },
        "matmul");
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose expects a matrix");
  int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  auto av = a.data();
  auto od = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) od[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
  if (tape_on({&a})) {
    record(
        out,
        [a, out, m, n]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto da = a.grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              da[static_cast<std::size_t>(i) * n + j] += og[static_cast<std::size_t>(j) * m + i];
        },
        "transpose");
  }
  return out;
}

Tensor softmax(const Tensor& a) {
  if (a.rank() < 1 || a.rank() > 2) throw std::invalid_argument("softmax expects a 1-D or 2-D tensor");
  int rows = a.rank() == 2 ? a.dim(0) : 1;
  int cols = a.rank() == 2 ? a.dim(1) : a.dim(0);
  if (cols == 0 || rows == 0) throw std::domain_error("softmax on empty input");
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.data();
  auto od = out.data();
  for (int r = 0; r < rows; ++r) {
    const real* x = av.data() + static_cast<std::size_t>(r) * cols;
    real* y = od.data() + static_cast<std::size_t>(r) * cols;
    real mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    real z = 0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= z;
  }
  check_finite(out, "softmax");
  if (tape_on({&a})) {
    record(
        out,
        [a, out, rows, cols]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto da = a.grad();
          auto ov = out.data();
          for (int r = 0; r < rows; ++r) {
            const real* p = ov.data() + static_cast<std::size_t>(r) * cols;
            const real* g = og.data() + static_cast<std::size_t>(r) * cols;
            real* d = da.data() + static_cast<std::size_t>(r) * cols;
            real dot = 0;
            for (int j = 0; j < cols; ++j) dot += g[j] * p[j];
            for (int j = 0; j < cols; ++j) d[j] += p[j] * (g[j] - dot);
          }
        },
        "softmax");
  }
  return out;
}

namespace {

void im2col(const real* x, int C, int H, int W, int kh, int kw, int stride, int pad, int ho,
            int wo, real* cols) {
  // cols: [C*kh*kw, ho*wo]
  const int patch = ho * wo;
  for (int c = 0; c < C; ++c) {
    const real* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj) {
        real* dst = cols + static_cast<std::size_t>((c * kh + di) * kw + dj) * patch;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + di - pad;
          if (iy < 0 || iy >= H) {
            std::fill(dst + static_cast<std::size_t>(oy) * wo, dst + static_cast<std::size_t>(oy + 1) * wo, real(0));
            continue;
          }
          const real* src = xc + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + dj - pad;
            dst[static_cast<std::size_t>(oy) * wo + ox] = (ix >= 0 && ix < W) ? src[ix] : real(0);
          }
        }
      }
    }
  }
}

// transposed layout [ho*wo, C*kh*kw]; the dW accumulation reads it row-wise
// so the inner loop is an axpy instead of an unvectorizable reduction
void im2col_t(const real* x, int C, int H, int W, int kh, int kw, int stride, int pad, int ho,
              int wo, real* cols_t) {
  const int ckk = C * kh * kw;
  for (int c = 0; c < C; ++c) {
    const real* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj) {
        const int q = (c * kh + di) * kw + dj;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + di - pad;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + dj - pad;
            cols_t[static_cast<std::size_t>(oy * wo + ox) * ckk + q] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W) ? xc[static_cast<std::size_t>(iy) * W + ix] : real(0);
          }
        }
      }
    }
  }
}

void col2im_acc(const real* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
                int ho, int wo, real* dx) {
  const int patch = ho * wo;
  for (int c = 0; c < C; ++c) {
    real* xc = dx + static_cast<std::size_t>(c) * H * W;
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj) {
        const real* src = cols + static_cast<std::size_t>((c * kh + di) * kw + dj) * patch;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + di - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + dj - pad;
            if (ix >= 0 && ix < W) xc[static_cast<std::size_t>(iy) * W + ix] += src[static_cast<std::size_t>(oy) * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d expects x[C,H,W], w[O,C,kh,kw]");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != O)) throw std::invalid_argument("conv2d: bad bias shape");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (kh > H + 2 * pad || kw > W + 2 * pad) throw std::invalid_argument("conv2d: kernel larger than input");
  int ho = (H + 2 * pad - kh) / stride + 1;
  int wo = (W + 2 * pad - kw) / stride + 1;
  int ckk = C * kh * kw;
  std::vector<real> cols(static_cast<std::size_t>(ckk) * ho * wo);
  im2col(x.data().data(), C, H, W, kh, kw, stride, pad, ho, wo, cols.data());
  Tensor out = Tensor::zeros({O, ho, wo});
  detail::gemm(w.data().data(), cols.data(), out.data().data(), O, ckk, ho * wo);
  if (b.defined()) {
    auto od = out.data();
    auto bv = b.data();
    for (int o = 0; o < O; ++o) {
      real bias = bv[o];
      real* row = od.data() + static_cast<std::size_t>(o) * ho * wo;
      for (int p = 0; p < ho * wo; ++p) row[p] += bias;
    }
  }
  check_finite(out, "conv2d");
  if (tape_on({&x, &w, &b})) {
    record(
        out,
        [x, w, b, out, C, H, W, O, kh, kw, stride, pad, ho, wo, ckk]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          const int patch = ho * wo;
          if (w.requires_grad()) {
            std::vector<real> cols_t(static_cast<std::size_t>(patch) * ckk);
            im2col_t(x.data().data(), C, H, W, kh, kw, stride, pad, ho, wo, cols_t.data());
            auto dw = w.grad();
            for (int o = 0; o < O; ++o) {
              const real* grow = og.data() + static_cast<std::size_t>(o) * patch;
              real* dwrow = dw.data() + static_cast<std::size_t>(o) * ckk;
              for (int p = 0; p < patch; ++p) {
                real g = grow[p];
                if (g == real(0)) continue;
                const real* crow = cols_t.data() + static_cast<std::size_t>(p) * ckk;
                for (int q = 0; q < ckk; ++q) dwrow[q] += g * crow[q];
              }
            }
          }
          if (x.requires_grad()) {
            std::vector<real> dcols(static_cast<std::size_t>(ckk) * patch, real(0));
            detail::gemm_tn(w.data().data(), og.data(), dcols.data(), O, ckk, patch);
            col2im_acc(dcols.data(), C, H, W, kh, kw, stride, pad, ho, wo, x.grad().data());
          }
          if (b.defined() && b.requires_grad()) {
            auto db = b.grad();
            for (int o = 0; o < O; ++o) {
              real acc = 0;
              const real* row = og.data() + static_cast<std::size_t>(o) * patch;
              for (int p = 0; p < patch; ++p) acc += row[p];
              db[o] += acc;
            }
          }
        },
        "conv2d");
  }
  return out;
}

Tensor avgpool2x2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("avgpool2x2 expects [C,H,W]");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H < 1 || W < 1) throw std::invalid_argument("avgpool2x2 on empty input");
  int ho = (H + 1) / 2, wo = (W + 1) / 2;
  Tensor out = Tensor::zeros({C, ho, wo});
  auto xv = x.data();
  auto od = out.data();
  for (int c = 0; c < C; ++c) {
    const real* xc = xv.data() + static_cast<std::size_t>(c) * H * W;
    real* oc = od.data() + static_cast<std::size_t>(c) * ho * wo;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        real acc = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            int iy = std::min(2 * i + di, H - 1);  // replication pad on the high side
            int ix = std::min(2 * j + dj, W - 1);
            acc += xc[static_cast<std::size_t>(iy) * W + ix];
          }
        oc[static_cast<std::size_t>(i) * wo + j] = acc * real(0.25);
      }
    }
  }
  if (tape_on({&x})) {
    record(
        out,
        [x, out, C, H, W, ho, wo]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto dx = x.grad();
          for (int c = 0; c < C; ++c) {
            real* dc = dx.data() + static_cast<std::size_t>(c) * H * W;
            const real* gc = og.data() + static_cast<std::size_t>(c) * ho * wo;
            for (int i = 0; i < ho; ++i)
              for (int j = 0; j < wo; ++j) {
                real g = gc[static_cast<std::size_t>(i) * wo + j] * real(0.25);
                for (int di = 0; di < 2; ++di)
                  for (int dj = 0; dj < 2; ++dj) {
                    int iy = std::min(2 * i + di, H - 1);
                    int ix = std::min(2 * j + dj, W - 1);
                    dc[static_cast<std::size_t>(iy) * W + ix] += g;
                  }
              }
          }
        },
        "avgpool2x2");
  }
  return out;
}

Tensor upsample2x_nearest(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("upsample2x_nearest expects [C,H,W]");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out = Tensor::zeros({C, 2 * H, 2 * W});
  auto xv = x.data();
  auto od = out.data();
  for (int c = 0; c < C; ++c) {
    const real* xc = xv.data() + static_cast<std::size_t>(c) * H * W;
    real* oc = od.data() + static_cast<std::size_t>(c) * 4 * H * W;
    for (int i = 0; i < 2 * H; ++i) {
      const real* src = xc + static_cast<std::size_t>(i / 2) * W;
      real* dst = oc + static_cast<std::size_t>(i) * 2 * W;
      for (int j = 0; j < 2 * W; ++j) dst[j] = src[j / 2];
    }
  }
  if (tape_on({&x})) {
    record(
        out,
        [x, out, C, H, W]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto dx = x.grad();
          for (int c = 0; c < C; ++c) {
            real* dc = dx.data() + static_cast<std::size_t>(c) * H * W;
            const real* gc = og.data() + static_cast<std::size_t>(c) * 4 * H * W;
            for (int i = 0; i < 2 * H; ++i)
              for (int j = 0; j < 2 * W; ++j)
                dc[static_cast<std::size_t>(i / 2) * W + j / 2] += gc[static_cast<std::size_t>(i) * 2 * W + j];
          }
        },
        "upsample2x_nearest");
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  real acc = 0;
  for (real v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  check_finite(out, "sum");
  if (tape_on({&a})) {
    record(
        out,
        [a, out]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto da = a.grad();
          for (real& g : da) g += og[0];
        },
        "sum");
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw std::domain_error("mean of empty tensor");
  return mul_scalar(sum_all(a), real(1) / a.numel());
}

Tensor spatial_sum(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("spatial_sum expects [C,H,W]");
  int C = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out = Tensor::zeros({C});
  auto xv = x.data();
  auto od = out.data();
  for (int c = 0; c < C; ++c) {
    real acc = 0;
    const real* xc = xv.data() + static_cast<std::size_t>(c) * hw;
    for (int p = 0; p < hw; ++p) acc += xc[p];
    od[c] = acc;
  }
  check_finite(out, "spatial_sum");
  if (tape_on({&x})) {
    record(
        out,
        [x, out, C, hw]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto dx = x.grad();
          for (int c = 0; c < C; ++c) {
            real g = og[c];
            real* dc = dx.data() + static_cast<std::size_t>(c) * hw;
            for (int p = 0; p < hw; ++p) dc[p] += g;
          }
        },
        "spatial_sum");
  }
  return out;
}

Tensor spatial_mean(const Tensor& x) {
  int hw = x.dim(1) * x.dim(2);
  if (hw == 0) throw std::domain_error("spatial_mean on empty map");
  return mul_scalar(spatial_sum(x), real(1) / hw);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), std::vector<real>(a.data().begin(), a.data().end()));
  if (tape_on({&a})) {
    record(
        out,
        [a, out]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto da = a.grad();
          for (std::size_t i = 0; i < og.size(); ++i) da[i] += og[i];
        },
        "reshape");
  }
  return out;
}

Tensor concat0(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) throw std::invalid_argument("concat0: rank mismatch");
  for (int i = 1; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i)) throw std::invalid_argument("concat0: trailing dims differ");
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  Tensor out = Tensor::zeros(shape);
  auto od = out.data();
  std::copy(a.data().begin(), a.data().end(), od.begin());
  std::copy(b.data().begin(), b.data().end(), od.begin() + a.numel());
  if (tape_on({&a, &b})) {
    record(
        out,
        [a, b, out]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          if (a.requires_grad()) {
            auto da = a.grad();
            for (int i = 0; i < a.numel(); ++i) da[i] += og[i];
          }
          if (b.requires_grad()) {
            auto db = b.grad();
            for (int i = 0; i < b.numel(); ++i) db[i] += og[a.numel() + i];
          }
        },
        "concat0");
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2) throw std::invalid_argument("slice_cols expects a matrix");
  int n = a.dim(0), d = a.dim(1);
  if (c0 < 0 || c1 > d || c0 >= c1) throw std::invalid_argument("slice_cols: bad column range");
  int w = c1 - c0;
  Tensor out = Tensor::zeros({n, w});
  auto av = a.data();
  auto od = out.data();
  for (int i = 0; i < n; ++i)
    std::copy(av.begin() + static_cast<std::size_t>(i) * d + c0, av.begin() + static_cast<std::size_t>(i) * d + c1,
              od.begin() + static_cast<std::size_t>(i) * w);
  if (tape_on({&a})) {
    record(
        out,
        [a, out, n, d, c0, w]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto da = a.grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
              da[static_cast<std::size_t>(i) * d + c0 + j] += og[static_cast<std::size_t>(i) * w + j];
        },
        "slice_cols");
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols on empty list");
  int n = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({n, total});
  auto od = out.data();
  int off = 0;
  for (const Tensor& p : parts) {
    int d = p.dim(1);
    auto pv = p.data();
    for (int i = 0; i < n; ++i)
      std::copy(pv.begin() + static_cast<std::size_t>(i) * d, pv.begin() + static_cast<std::size_t>(i + 1) * d,
                od.begin() + static_cast<std::size_t>(i) * total + off);
    off += d;
  }
  bool need = false;
  for (const Tensor& p : parts) need = need || p.requires_grad();
  if (Tape::active() && need) {
    std::vector<Tensor> captured = parts;
    record(
        out,
        [captured, out, n, total]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          int off = 0;
          for (Tensor& p : captured) {
            int d = p.dim(1);
            if (p.requires_grad()) {
              auto dp = p.grad();
              for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                  dp[static_cast<std::size_t>(i) * d + j] += og[static_cast<std::size_t>(i) * total + off + j];
            }
            off += d;
          }
        },
        "concat_cols");
  }
  return out;
}

Tensor gather_window(const Tensor& x, int y0, int x0, int h, int w) {
  if (x.rank() != 3) throw std::invalid_argument("gather_window expects [C,H,W]");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > H || x0 + w > W)
    throw std::invalid_argument("gather_window: window out of bounds");
  Tensor out = Tensor::zeros({C, h, w});
  auto xv = x.data();
  auto od = out.data();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < h; ++i)
      std::copy(xv.begin() + (static_cast<std::size_t>(c) * H + y0 + i) * W + x0,
                xv.begin() + (static_cast<std::size_t>(c) * H + y0 + i) * W + x0 + w,
                od.begin() + (static_cast<std::size_t>(c) * h + i) * w);
  if (tape_on({&x})) {
    record(
        out,
        [x, out, C, H, W, y0, x0, h, w]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto dx = x.grad();
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < h; ++i)
              for (int j = 0; j < w; ++j)
                dx[(static_cast<std::size_t>(c) * H + y0 + i) * W + x0 + j] +=
                    og[(static_cast<std::size_t>(c) * h + i) * w + j];
        },
        "gather_window");
  }
  return out;
}

Tensor scatter_window(const Tensor& src, int height, int width, int y0, int x0) {
  if (src.rank() != 3) throw std::invalid_argument("scatter_window expects [C,h,w]");
  int C = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (y0 < 0 || x0 < 0 || y0 + h > height || x0 + w > width)
    throw std::invalid_argument("scatter_window: window out of bounds");
  Tensor out = Tensor::zeros({C, height, width});
  auto sv = src.data();
  auto od = out.data();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < h; ++i)
      std::copy(sv.begin() + (static_cast<std::size_t>(c) * h + i) * w,
                sv.begin() + (static_cast<std::size_t>(c) * h + i) * w + w,
                od.begin() + (static_cast<std::size_t>(c) * height + y0 + i) * width + x0);
  if (tape_on({&src})) {
    record(
        out,
        [src, out, C, height, width, y0, x0, h, w]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto ds = src.grad();
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < h; ++i)
              for (int j = 0; j < w; ++j)
                ds[(static_cast<std::size_t>(c) * h + i) * w + j] +=
                    og[(static_cast<std::size_t>(c) * height + y0 + i) * width + x0 + j];
        },
        "scatter_window");
  }
  return out;
}

Tensor select(const Tensor& a, int index) {
  if (a.rank() != 1) throw std::invalid_argument("select expects a vector");
  if (index < 0 || index >= a.numel()) throw std::invalid_argument("select: index out of range");
  Tensor out = Tensor::scalar(a.data()[static_cast<std::size_t>(index)]);
  if (tape_on({&a})) {
    record(
        out,
        [a, out, index]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          a.grad()[static_cast<std::size_t>(index)] += og[0];
        },
        "select");
  }
  return out;
}

Tensor scatter_vec(const Tensor& values, const std::vector<int>& idx, int n) {
  if (values.rank() != 1 || static_cast<std::size_t>(values.numel()) != idx.size())
    throw std::invalid_argument("scatter_vec: values/index length mismatch");
  Tensor out = Tensor::zeros({n});
  auto vv = values.data();
  auto od = out.data();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= n) throw std::invalid_argument("scatter_vec: index out of range");
    od[static_cast<std::size_t>(idx[j])] = vv[j];
  }
  if (tape_on({&values})) {
    record(
        out,
        [values, out, idx]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto dv = values.grad();
          for (std::size_t j = 0; j < idx.size(); ++j) dv[j] += og[static_cast<std::size_t>(idx[j])];
        },
        "scatter_vec");
  }
  return out;
}

Tensor mul_spatial(const Tensor& f, const Tensor& m) {
  if (f.rank() != 3 || m.rank() != 2 || f.dim(1) != m.dim(0) || f.dim(2) != m.dim(1))
    throw std::invalid_argument("mul_spatial: shape mismatch " + shape_str(f.shape()) + " vs " + shape_str(m.shape()));
  int C = f.dim(0), hw = f.dim(1) * f.dim(2);
  Tensor out = Tensor::zeros(f.shape());
  auto fv = f.data();
  auto mv = m.data();
  auto od = out.data();
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < hw; ++p)
      od[static_cast<std::size_t>(c) * hw + p] = fv[static_cast<std::size_t>(c) * hw + p] * mv[p];
  check_finite(out, "mul_spatial");
  if (tape_on({&f, &m})) {
    record(
        out,
        [f, m, out, C, hw]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto fv = f.data();
          auto mv = m.data();
          if (f.requires_grad()) {
            auto df = f.grad();
            for (int c = 0; c < C; ++c)
              for (int p = 0; p < hw; ++p)
                df[static_cast<std::size_t>(c) * hw + p] += og[static_cast<std::size_t>(c) * hw + p] * mv[p];
          }
          if (m.requires_grad()) {
            auto dm = m.grad();
            for (int c = 0; c < C; ++c)
              for (int p = 0; p < hw; ++p)
                dm[p] += og[static_cast<std::size_t>(c) * hw + p] * fv[static_cast<std::size_t>(c) * hw + p];
          }
        },
        "mul_spatial");
  }
  return out;
}

Tensor coverage_blend(const Tensor& num, const Tensor& den, const Tensor& base) {
  if (num.shape() != base.shape() || num.rank() != 3 || den.rank() != 2 || den.dim(0) != num.dim(1) ||
      den.dim(1) != num.dim(2))
    throw std::invalid_argument("coverage_blend: shape mismatch");
  int C = num.dim(0), hw = num.dim(1) * num.dim(2);
  Tensor out = Tensor::zeros(num.shape());
  auto nv = num.data();
  auto dv = den.data();
  auto bv = base.data();
  auto od = out.data();
  for (int p = 0; p < hw; ++p) {
    if (dv[p] > 0) {
      real inv = real(1) / dv[p];
      for (int c = 0; c < C; ++c)
        od[static_cast<std::size_t>(c) * hw + p] = nv[static_cast<std::size_t>(c) * hw + p] * inv;
    } else {
      for (int c = 0; c < C; ++c)
        od[static_cast<std::size_t>(c) * hw + p] = bv[static_cast<std::size_t>(c) * hw + p];
    }
  }
  check_finite(out, "coverage_blend");
  if (tape_on({&num, &den, &base})) {
    record(
        out,
        [num, den, base, out, C, hw]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto nv = num.data();
          auto dv = den.data();
          for (int p = 0; p < hw; ++p) {
            if (dv[p] > 0) {
              real inv = real(1) / dv[p];
              if (num.requires_grad()) {
                auto dn = num.grad();
                for (int c = 0; c < C; ++c)
                  dn[static_cast<std::size_t>(c) * hw + p] += og[static_cast<std::size_t>(c) * hw + p] * inv;
              }
              if (den.requires_grad()) {
                auto dd = den.grad();
                real acc = 0;
                for (int c = 0; c < C; ++c)
                  acc -= og[static_cast<std::size_t>(c) * hw + p] * nv[static_cast<std::size_t>(c) * hw + p];
                dd[p] += acc * inv * inv;
              }
            } else if (base.requires_grad()) {
              auto db = base.grad();
              for (int c = 0; c < C; ++c)
                db[static_cast<std::size_t>(c) * hw + p] += og[static_cast<std::size_t>(c) * hw + p];
            }
          }
        },
        "coverage_blend");
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1))
    throw std::invalid_argument("layer_norm: shape mismatch");
  int n = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<real> inv_std(static_cast<std::size_t>(n));
  std::vector<real> xhat(static_cast<std::size_t>(n) * d);
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  auto od = out.data();
  for (int i = 0; i < n; ++i) {
    const real* row = xv.data() + static_cast<std::size_t>(i) * d;
    real mu = 0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    real var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    real is = real(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      real xh = (row[j] - mu) * is;
      xhat[static_cast<std::size_t>(i) * d + j] = xh;
      od[static_cast<std::size_t>(i) * d + j] = xh * gv[j] + bv[j];
    }
  }
  check_finite(out, "layer_norm");
  if (tape_on({&x, &gain, &bias})) {
    record(
        out,
        [x, gain, bias, out, n, d, inv_std = std::move(inv_std), xhat = std::move(xhat)]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto gv = gain.data();
          for (int i = 0; i < n; ++i) {
            const real* g = og.data() + static_cast<std::size_t>(i) * d;
            const real* xh = xhat.data() + static_cast<std::size_t>(i) * d;
            if (gain.requires_grad()) {
              auto dg = gain.grad();
              for (int j = 0; j < d; ++j) dg[j] += g[j] * xh[j];
            }
            if (bias.requires_grad()) {
              auto db = bias.grad();
              for (int j = 0; j < d; ++j) db[j] += g[j];
            }
            if (x.requires_grad()) {
              real mean_go = 0, mean_goxh = 0;
              for (int j = 0; j < d; ++j) {
                real go = g[j] * gv[j];
                mean_go += go;
                mean_goxh += go * xh[j];
              }
              mean_go /= d;
              mean_goxh /= d;
              auto dx = x.grad();
              real is = inv_std[static_cast<std::size_t>(i)];
              for (int j = 0; j < d; ++j) {
                real go = g[j] * gv[j];
                dx[static_cast<std::size_t>(i) * d + j] += is * (go - mean_go - xh[j] * mean_goxh);
              }
            }
          }
        },
        "layer_norm");
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  if (logits.numel() == 0) throw std::domain_error("bce_with_logits on empty input");
  auto xv = logits.data();
  auto tv = targets.data();
  real acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    real x = xv[i], t = tv[i];
    acc += std::max(x, real(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor out = Tensor::scalar(acc / logits.numel());
  check_finite(out, "bce_with_logits");
  if (tape_on({&logits})) {
    record(
        out,
        [logits, targets, out]() mutable {
          auto og = out.grad_view();
          if (og.empty()) return;
          auto xv = logits.data();
          auto tv = targets.data();
          auto dx = logits.grad();
          real scale = og[0] / logits.numel();
          for (std::size_t i = 0; i < xv.size(); ++i) {
            real x = xv[i];
            real s = x >= 0 ? real(1) / (real(1) + std::exp(-x)) : std::exp(x) / (real(1) + std::exp(x));
            dx[i] += scale * (s - tv[i]);
          }
        },
        "bce_with_logits");
  }
  return out;
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw std::logic_error("backward called with no active tape");
  tape->backward(loss);
}

}  // namespace pgr
