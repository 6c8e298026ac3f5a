#pragma once

#include <vector>

#include "pgr/checkpoint.hpp"
#include "pgr/ops.hpp"
#include "pgr/random.hpp"

namespace pgr {

// Multi-head retention projections. Per-head slices live in the columns of
// the combined [d_model, d_model] matrices; gamma is fixed per head.
struct RetentionParams {
  int d_model = 0;
  int heads = 1;
  Tensor w_q, w_k, w_v;  // [d_model, d_model]
  Tensor w_o;            // [d_model, d_model]
  std::vector<real> gammas;

  int d_head() const { return d_model / heads; }
};

// Default decay ladder gamma_h = 1 - 2^-(4+h), h = 0..heads-1.
std::vector<real> default_gammas(int heads);

RetentionParams make_retention_params(int d_model, int heads, Rng& rng);

// D[i][j] = gamma^(i-j) for i >= j, 0 otherwise.
Tensor decay_mask(int n, real gamma);

// Single-head parallel retention (Q K^T element-masked by D, applied to V).
// No output projection; this is the per-head core.
Tensor retention_parallel_head(const Tensor& x, const Tensor& w_q, const Tensor& w_k,
                               const Tensor& w_v, real gamma);

// Single-head recurrent evaluation: s_t = gamma s_{t-1} + k_t^T v_t,
// o_t = q_t s_t. Value-level (does not participate in the tape); serves as
// the independent route for the parallel/recurrent duality checks.
Tensor retention_recurrent_head(const Tensor& x, const Tensor& w_q, const Tensor& w_k,
                                const Tensor& w_v, real gamma);

// Heads evaluated on their column slices, concatenated, output-projected.
Tensor multihead_retention_parallel(const Tensor& x, const RetentionParams& params);
Tensor multihead_retention_recurrent(const Tensor& x, const RetentionParams& params);

// Pre-norm block: x + MHR(LN(x)), then + FFN(LN(.)) with a 2x expansion.
struct RetentionBlock {
  RetentionParams retention;
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1;  // [d, 2d], [2d]
  Tensor ffn_w2, ffn_b2;  // [2d, d], [d]
};

RetentionBlock make_retention_block(int d_model, int heads, Rng& rng);
Tensor retention_block_forward(const Tensor& x, const RetentionBlock& block);

// Parameter registry hooks for checkpointing/optimizers.
void append_params(NamedParams& out, const std::string& prefix, const RetentionBlock& block);

}  // namespace pgr
