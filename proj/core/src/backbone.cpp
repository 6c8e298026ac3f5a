#include "pgr/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace pgr {

WindowBBox window_bbox(real r, real cx, real cy, int layer_h, int layer_w) {
  int side = static_cast<int>(std::floor(r * layer_h + real(0.5)));  // round half-up
  if (side < 2) throw std::domain_error("window_bbox: degenerate window (side < 2)");
  side = std::min(side, std::min(layer_h, layer_w));

  // pixel-center convention: nearest pixel index to the continuous center
  int uc = static_cast<int>(std::floor(cx * layer_w - real(0.5) + real(0.5)));
  int vc = static_cast<int>(std::floor(cy * layer_h - real(0.5) + real(0.5)));

  WindowBBox box;
  box.side = side;
  box.x0 = std::clamp(uc - side / 2, 0, layer_w - side);
  box.y0 = std::clamp(vc - side / 2, 0, layer_h - side);
  return box;
}

RoiWindow extract_window(const Tensor& f_l, const RoiInstance& roi, int layer) {
  if (f_l.rank() != 3) throw std::invalid_argument("extract_window expects [C,H,W]");
  const int C = f_l.dim(0), H = f_l.dim(1), W = f_l.dim(2);
  WindowBBox box = window_bbox(roi.r, roi.cx, roi.cy, H, W);

  RoiWindow window;
  window.layer = layer;
  window.prior_index = roi.index;
  window.bbox = box;
  Tensor patch = gather_window(f_l, box.y0, box.x0, box.side, box.side);  // [C, s, s]
  // raster sequence with channels as the embedding: [s*s, C]
  window.sequence = transpose(reshape(patch, {C, box.side * box.side}));
  return window;
}

Tensor run_window(const RoiWindow& window, const RetentionBlock& block, int channels) {
  if (window.sequence.dim(0) < 1) throw std::invalid_argument("run_window: empty sequence");
  Tensor hidden = retention_block_forward(window.sequence, block);  // [n, C]
  return reshape(transpose(hidden), {channels, window.bbox.side, window.bbox.side});
}

std::vector<real> fusion_weights(const std::vector<real>& rho, real gamma_fuse) {
  Tensor r = Tensor::from({static_cast<int>(rho.size())}, std::vector<real>(rho.begin(), rho.end()));
  Tensor w = softmax(mul_scalar(r, gamma_fuse));
  return std::vector<real>(w.data().begin(), w.data().end());
}

Tensor fuse_windows(const std::vector<WindowResult>& outputs, const Tensor& rho, real gamma_fuse,
                    const Tensor& base) {
  if (outputs.empty()) return base;  // nothing ran: full pass-through
  if (rho.numel() != static_cast<int>(outputs.size()))
    throw std::invalid_argument("fuse_windows: rho length mismatch");
  const int C = base.dim(0), H = base.dim(1), W = base.dim(2);

  Tensor omega = softmax(mul_scalar(rho, gamma_fuse));  // [K]
  Tensor num;  // sum_k omega_k * scatter(out_k)
  Tensor den;  // sum_k omega_k * scatter(1), [1,H,W]
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const WindowResult& wr = outputs[k];
    Tensor wk = select(omega, static_cast<int>(k));
    Tensor weighted = mul(wr.output, wk);
    Tensor ones = Tensor::full({1, wr.bbox.side, wr.bbox.side}, 1);
    Tensor cover = mul(ones, wk);
    Tensor num_k = scatter_window(weighted, H, W, wr.bbox.y0, wr.bbox.x0);
    Tensor den_k = scatter_window(cover, H, W, wr.bbox.y0, wr.bbox.x0);
    num = num.defined() ? add(num, num_k) : num_k;
    den = den.defined() ? add(den, den_k) : den_k;
  }
  (void)C;
  return coverage_blend(num, reshape(den, {H, W}), base);
}

Tensor encode_layer(const Tensor& f_l, const std::vector<RoiInstance>& candidates,
                    const Tensor& rho, const RetentionBlock& block, const Tensor& guidance,
                    real lambda, real gamma_fuse, bool locked, const RoiInstance* locked_roi,
                    EncodeLayerStats* stats) {
  const int C = f_l.dim(0);

  std::vector<WindowResult> results;
  std::vector<int> kept;  // candidate positions that produced a window
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    try {
      RoiWindow window = extract_window(f_l, candidates[k], 0);
      WindowResult wr;
      wr.bbox = window.bbox;
      wr.output = run_window(window, block, C);
      results.push_back(std::move(wr));
      kept.push_back(static_cast<int>(k));
      if (stats) ++stats->windows_run;
    } catch (const std::domain_error&) {
      if (stats) ++stats->degenerate_candidates;
    }
  }

  Tensor f_hat;
  if (results.empty()) {
    f_hat = f_l;
  } else {
    Tensor rho_kept = rho;
    if (kept.size() != candidates.size()) {
      std::vector<Tensor> picks;
      for (int k : kept) picks.push_back(reshape(select(rho, k), {1, 1}));
      rho_kept = reshape(concat_cols(picks), {static_cast<int>(kept.size())});
    }
    f_hat = fuse_windows(results, rho_kept, gamma_fuse, f_l);
  }

  Tensor f_tilde;
  if (locked) {
    if (!locked_roi) throw std::logic_error("encode_layer: locked without a locked ROI");
    f_tilde = hard_lock_modulate(f_l, guidance, *locked_roi, lambda);
    if (stats) ++stats->hard_mask_ops;
  } else {
    f_tilde = modulate(f_l, guidance, lambda);
  }
  return fuse_outputs(f_hat, f_tilde, locked);
}

}  // namespace pgr
