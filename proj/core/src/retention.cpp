#include "pgr/retention.hpp"

#include <cmath>
#include <stdexcept>

namespace pgr {

std::vector<real> default_gammas(int heads) {
  std::vector<real> g(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) g[static_cast<std::size_t>(h)] = real(1) - std::pow(real(2), real(-4 - h));
  return g;
}

namespace {

Tensor init_matrix(int rows, int cols, Rng& rng) {
  std::vector<real> data(static_cast<std::size_t>(rows) * cols);
  real scale = real(1) / std::sqrt(static_cast<real>(rows));
  for (real& v : data) v = rng.normal() * scale;
  return Tensor::from({rows, cols}, std::move(data), true);
}

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero-init biases would park
// all-background rows exactly on relu kinks
Tensor init_bias(int n, int fan_in, Rng& rng) {
  std::vector<real> data(static_cast<std::size_t>(n));
  real bound = real(1) / std::sqrt(static_cast<real>(fan_in));
  for (real& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from({n}, std::move(data), true);
}

}  // namespace

RetentionParams make_retention_params(int d_model, int heads, Rng& rng) {
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("retention: d_model must be divisible by head count");
  RetentionParams p;
  p.d_model = d_model;
  p.heads = heads;
  p.w_q = init_matrix(d_model, d_model, rng);
  p.w_k = init_matrix(d_model, d_model, rng);
  p.w_v = init_matrix(d_model, d_model, rng);
  p.w_o = init_matrix(d_model, d_model, rng);
  p.gammas = default_gammas(heads);
  return p;
}

Tensor decay_mask(int n, real gamma) {
  if (n < 1) throw std::invalid_argument("decay_mask: n must be >= 1");
  if (!(gamma > 0) || gamma > 1) throw std::domain_error("decay_mask: gamma outside (0,1]");
  Tensor d = Tensor::zeros({n, n});
  auto dd = d.data();
  for (int i = 0; i < n; ++i) {
    real v = 1;
    for (int j = i; j >= 0; --j) {
      dd[static_cast<std::size_t>(i) * n + j] = v;
      v *= gamma;
    }
  }
  return d;
}

Tensor retention_parallel_head(const Tensor& x, const Tensor& w_q, const Tensor& w_k,
                               const Tensor& w_v, real gamma) {
  if (x.rank() != 2) throw std::invalid_argument("retention: x must be [n,d]");
  int n = x.dim(0);
  Tensor q = matmul(x, w_q);
  Tensor k = matmul(x, w_k);
  Tensor v = matmul(x, w_v);
  Tensor scores = matmul(q, transpose(k));
  Tensor masked = mul(scores, decay_mask(n, gamma));
  return matmul(masked, v);
}

Tensor retention_recurrent_head(const Tensor& x, const Tensor& w_q, const Tensor& w_k,
                                const Tensor& w_v, real gamma) {
  if (x.rank() != 2) throw std::invalid_argument("retention: x must be [n,d]");
  if (!(gamma > 0) || gamma > 1) throw std::domain_error("retention: gamma outside (0,1]");
  const int n = x.dim(0), d = x.dim(1);
  const int dh = w_q.dim(1);
  if (w_q.dim(0) != d || w_k.dim(0) != d || w_v.dim(0) != d)
    throw std::invalid_argument("retention: projection shape mismatch");

  auto xv = x.data();
  auto qw = w_q.data();
  auto kw = w_k.data();
  auto vw = w_v.data();
  std::vector<real> state(static_cast<std::size_t>(dh) * dh, 0);  // s: [dh, dh]
  std::vector<real> qt(static_cast<std::size_t>(dh)), kt(static_cast<std::size_t>(dh)), vt(static_cast<std::size_t>(dh));
  Tensor out = Tensor::zeros({n, dh});
  auto od = out.data();

  for (int t = 0; t < n; ++t) {
    const real* xt = xv.data() + static_cast<std::size_t>(t) * d;
    for (int j = 0; j < dh; ++j) {
      real aq = 0, ak = 0, av = 0;
      for (int i = 0; i < d; ++i) {
        aq += xt[i] * qw[static_cast<std::size_t>(i) * dh + j];
        ak += xt[i] * kw[static_cast<std::size_t>(i) * dh + j];
        av += xt[i] * vw[static_cast<std::size_t>(i) * dh + j];
      }
      qt[static_cast<std::size_t>(j)] = aq;
      kt[static_cast<std::size_t>(j)] = ak;
      vt[static_cast<std::size_t>(j)] = av;
    }
    // s = gamma*s + k^T v
    for (int a = 0; a < dh; ++a)
      for (int b = 0; b < dh; ++b)
        state[static_cast<std::size_t>(a) * dh + b] =
            gamma * state[static_cast<std::size_t>(a) * dh + b] + kt[static_cast<std::size_t>(a)] * vt[static_cast<std::size_t>(b)];
    // o_t = q_t s
    real* orow = od.data() + static_cast<std::size_t>(t) * dh;
    for (int b = 0; b < dh; ++b) {
      real acc = 0;
      for (int a = 0; a < dh; ++a) acc += qt[static_cast<std::size_t>(a)] * state[static_cast<std::size_t>(a) * dh + b];
      orow[b] = acc;
    }
  }
  detail::check_finite(out, "retention_recurrent");
  return out;
}

namespace {

template <typename HeadFn>
Tensor multihead_apply(const Tensor& x, const RetentionParams& params, HeadFn head_fn) {
  if (x.dim(1) != params.d_model) throw std::invalid_argument("retention: embedding width mismatch");
  const int dh = params.d_head();
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(params.heads));
  for (int h = 0; h < params.heads; ++h) {
    Tensor wq = slice_cols(params.w_q, h * dh, (h + 1) * dh);
    Tensor wk = slice_cols(params.w_k, h * dh, (h + 1) * dh);
    Tensor wv = slice_cols(params.w_v, h * dh, (h + 1) * dh);
    heads.push_back(head_fn(x, wq, wk, wv, params.gammas[static_cast<std::size_t>(h)]));
  }
  Tensor cat = params.heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(cat, params.w_o);
}

}  // namespace

Tensor multihead_retention_parallel(const Tensor& x, const RetentionParams& params) {
  return multihead_apply(x, params, retention_parallel_head);
}

Tensor multihead_retention_recurrent(const Tensor& x, const RetentionParams& params) {
  return multihead_apply(x, params, retention_recurrent_head);
}

RetentionBlock make_retention_block(int d_model, int heads, Rng& rng) {
  RetentionBlock b;
  b.retention = make_retention_params(d_model, heads, rng);
  b.ln1_gain = Tensor::full({d_model}, 1);
  b.ln1_gain.set_requires_grad(true);
  b.ln1_bias = Tensor::zeros({d_model}, true);
  b.ln2_gain = Tensor::full({d_model}, 1);
  b.ln2_gain.set_requires_grad(true);
  b.ln2_bias = Tensor::zeros({d_model}, true);
  b.ffn_w1 = init_matrix(d_model, 2 * d_model, rng);
  b.ffn_b1 = init_bias(2 * d_model, d_model, rng);
  b.ffn_w2 = init_matrix(2 * d_model, d_model, rng);
  b.ffn_b2 = init_bias(d_model, 2 * d_model, rng);
  return b;
}

namespace {

// row-broadcast bias add on [n,d] via matmul-free loop op composition:
// reshape the bias to [1,d] and let gemm-style broadcasting happen manually.
Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  // ones [n,1] * bias [1,d] gives the broadcast matrix on the tape
  Tensor ones = Tensor::full({x.dim(0), 1}, 1);
  Tensor b2d = reshape(bias, {1, bias.dim(0)});
  return add(x, matmul(ones, b2d));
}

}  // namespace

Tensor retention_block_forward(const Tensor& x, const RetentionBlock& block) {
  Tensor h = add(x, multihead_retention_parallel(layer_norm(x, block.ln1_gain, block.ln1_bias), block.retention));
  Tensor n2 = layer_norm(h, block.ln2_gain, block.ln2_bias);
  Tensor ff = add_rowvec(matmul(relu(add_rowvec(matmul(n2, block.ffn_w1), block.ffn_b1)), block.ffn_w2), block.ffn_b2);
  return add(h, ff);
}

void append_params(NamedParams& out, const std::string& prefix, const RetentionBlock& block) {
  out.emplace_back(prefix + ".wq", block.retention.w_q);
  out.emplace_back(prefix + ".wk", block.retention.w_k);
  out.emplace_back(prefix + ".wv", block.retention.w_v);
  out.emplace_back(prefix + ".wo", block.retention.w_o);
  out.emplace_back(prefix + ".ln1.g", block.ln1_gain);
  out.emplace_back(prefix + ".ln1.b", block.ln1_bias);
  out.emplace_back(prefix + ".ln2.g", block.ln2_gain);
  out.emplace_back(prefix + ".ln2.b", block.ln2_bias);
  out.emplace_back(prefix + ".ffn.w1", block.ffn_w1);
  out.emplace_back(prefix + ".ffn.b1", block.ffn_b1);
  out.emplace_back(prefix + ".ffn.w2", block.ffn_w2);
  out.emplace_back(prefix + ".ffn.b2", block.ffn_b2);
}

}  // namespace pgr
