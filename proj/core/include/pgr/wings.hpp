#pragma once

#include <vector>

#include "pgr/ops.hpp"
#include "pgr/prior.hpp"

namespace pgr {

// One ROI candidate realized at a specific layer resolution. Coordinates use
// the pixel-center convention: normalized c maps to (cx*W, cy*H) in pixel
// units, and pixel (u,v) samples at (u+0.5, v+0.5).
struct RoiInstance {
  real cx = 0, cy = 0;  // normalized
  real r = 0;
  real rho = 1;         // confidence in [0,1]
  real sigma = 0;       // Gaussian std, pixels at this layer
  real radius = 0;      // R = r*H_l/2, pixels at this layer
  int index = -1;       // global prior index
};

RoiInstance make_roi_instance(const RoiPrior& prior, int layer_h, int layer_w, real sigma_ratio,
                              real rho, int index);

struct GuidanceMap {
  Tensor values;  // [H,W], non-negative
  int layer = 0;
  bool empty = false;
};

// G(u,v) = rho * exp(-((u-x)^2+(v-y)^2) / (2 sigma^2)).
Tensor gaussian_template(const RoiInstance& roi, int layer_h, int layer_w);

// Inside radius R unchanged; outside, multiplied by exp(-(d-R)^2/(2 tau^2)).
Tensor apply_spatial_decay(const Tensor& g, const RoiInstance& roi, int layer_h, int layer_w,
                           real tau);

// Unit-confidence decayed template (rho = 1); the network scales these cached
// constants by tape-connected confidences.
Tensor decayed_unit_template(const RoiInstance& roi, int layer_h, int layer_w, real tau);

// G~ at a continuous point (pixel units, layer space). The grid functions
// sample this field at pixel centers; ray-based property checks sample it
// off-grid.
real decayed_template_value(const RoiInstance& roi, real tau, real px, real py, int layer_h,
                            int layer_w);

// M = sum_i G~_i / (K + eps). K is the candidate count (literal reading of
// the aggregation denominator).
GuidanceMap aggregate_guidance(const std::vector<RoiInstance>& rois, int layer_h, int layer_w,
                               real eps, real tau_ratio);

// F~ = (1 + lambda*M) (.) F, M broadcast over channels.
Tensor modulate(const Tensor& f, const Tensor& m, real lambda);

// Hard circular mask around a locked ROI: inside d <= R modulated, outside 0.
Tensor hard_lock_modulate(const Tensor& f, const Tensor& m, const RoiInstance& locked, real lambda);

// 0/1 disk mask of the ROI at this layer.
Tensor disk_mask(const RoiInstance& roi, int layer_h, int layer_w);

// locked -> f_hat; otherwise f_hat + f_tilde.
Tensor fuse_outputs(const Tensor& f_hat, const Tensor& f_tilde, bool locked);

}  // namespace pgr
