#pragma once

#include "pgr/tensor.hpp"

namespace pgr {

// Differentiable op set. All ops validate shapes, check outputs for
// non-finite values (surfaced as std::domain_error), and register a backward
// rule on the active tape when an input requires grad.
//
// Broadcasting is deliberately narrow: equal shapes, or one operand with
// numel()==1 acting as a scalar.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, real c);
Tensor mul_scalar(const Tensor& a, real c);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// a: [m,k], b: [k,n] -> [m,n]. Accumulates in 64-bit.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // [m,n] -> [n,m]

// Softmax over the last axis of a 1-D or 2-D tensor, max-subtracted.
Tensor softmax(const Tensor& a);

// x: [C,H,W], w: [O,C,kh,kw], b: [O] (may be undefined for no bias).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);

// 2x2 mean pooling; odd extents are replication-padded on the high side.
Tensor avgpool2x2(const Tensor& x);
// Nearest-neighbor 2x upsampling.
Tensor upsample2x_nearest(const Tensor& x);

Tensor sum_all(const Tensor& a);   // -> scalar, 64-bit accumulation
Tensor mean_all(const Tensor& a);  // -> scalar
Tensor spatial_sum(const Tensor& x);   // [C,H,W] -> [C]
Tensor spatial_mean(const Tensor& x);  // [C,H,W] -> [C]

Tensor reshape(const Tensor& a, Shape shape);
// Concatenate along axis 0; trailing dimensions must match.
Tensor concat0(const Tensor& a, const Tensor& b);
// Column slice of a [n,d] matrix: columns [c0, c1).
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);  // [n,di] -> [n,sum di]

// ROI window gather/scatter on [C,H,W] maps.
Tensor gather_window(const Tensor& x, int y0, int x0, int h, int w);
// Place src into an HxW zero canvas at (y0,x0).
Tensor scatter_window(const Tensor& src, int height, int width, int y0, int x0);

// One element of a 1-D tensor as a scalar tensor.
Tensor select(const Tensor& a, int index);
// Scatter values[j] to positions idx[j] in a length-n zero vector.
Tensor scatter_vec(const Tensor& values, const std::vector<int>& idx, int n);

// F: [C,H,W] times m: [H,W], broadcast over channels.
Tensor mul_spatial(const Tensor& f, const Tensor& m);

// out(c,p) = den(p) > 0 ? num(c,p)/den(p) : base(c,p).
// num,base: [C,H,W]; den: [H,W]. Used by window fusion.
Tensor coverage_blend(const Tensor& num, const Tensor& den, const Tensor& base);

// Row-wise layer norm on [n,d] with learnable gain/bias [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps = 1e-5);

// Mean binary cross-entropy on logits (numerically stable); targets are
// constants in [0,1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// Run backward from a scalar loss through the active tape.
// Errors if loss is not scalar or no tape is active.
void backward(const Tensor& loss);

namespace detail {
// 64-bit-accumulated C = A*B with A [m,k], B [k,n].
void gemm(const real* a, const real* b, real* c, int m, int k, int n);
void check_finite(const Tensor& t, const char* op);
}  // namespace detail

}  // namespace pgr
