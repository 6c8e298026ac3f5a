#pragma once

#include <vector>

#include "pgr/retention.hpp"
#include "pgr/wings.hpp"

namespace pgr {

// Square candidate window at layer resolution, clamped to bounds. The center
// shifts inward rather than shrinking the side.
struct WindowBBox {
  int y0 = 0, x0 = 0, side = 0;
};

// side = round(r*H) half-up, centered at the prior's pixel-center position.
// Throws std::domain_error when round(r*H) < 2 (degenerate window).
WindowBBox window_bbox(real r, real cx, real cy, int layer_h, int layer_w);

struct RoiWindow {
  int layer = 0;
  int prior_index = -1;
  WindowBBox bbox;
  Tensor sequence;  // [side*side, C] row-major raster, channels as embedding
};

RoiWindow extract_window(const Tensor& f_l, const RoiInstance& roi, int layer);

// Retention block over the raster sequence, reshaped back to window geometry.
Tensor run_window(const RoiWindow& window, const RetentionBlock& block, int channels);

struct WindowResult {
  WindowBBox bbox;
  Tensor output;  // [C, side, side]
};

// Confidence-weighted scatter: covered pixels hold the omega-weighted average
// of covering windows, uncovered pixels pass the base feature through.
// rho is a length-K tape tensor; omega = softmax(gamma_fuse * rho).
Tensor fuse_windows(const std::vector<WindowResult>& outputs, const Tensor& rho,
                    real gamma_fuse, const Tensor& base);

// Plain value-level fusion weights (for inspection/tests).
std::vector<real> fusion_weights(const std::vector<real>& rho, real gamma_fuse);

struct EncodeLayerStats {
  int windows_run = 0;
  int degenerate_candidates = 0;
  int hard_mask_ops = 0;
};

// One ROI Win-RetNet encoder layer:
//   F_hat   = fuse_windows(run_window over candidates)
//   F_tilde = modulate(F, M, lambda)   (hard_lock_modulate when locked)
//   out     = locked ? F_hat : F_hat + F_tilde
// `rho` carries per-candidate confidences aligned with `candidates`.
Tensor encode_layer(const Tensor& f_l, const std::vector<RoiInstance>& candidates,
                    const Tensor& rho, const RetentionBlock& block, const Tensor& guidance,
                    real lambda, real gamma_fuse, bool locked, const RoiInstance* locked_roi,
                    EncodeLayerStats* stats = nullptr);

}  // namespace pgr
