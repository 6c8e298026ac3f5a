#include "pgr/wings.hpp"

#include <cmath>
#include <stdexcept>

namespace pgr {

RoiInstance make_roi_instance(const RoiPrior& prior, int layer_h, int layer_w, real sigma_ratio,
                              real rho, int index) {
  (void)layer_w;
  RoiInstance roi;
  roi.cx = prior.cx;
  roi.cy = prior.cy;
  roi.r = prior.r;
  roi.rho = rho;
  roi.radius = prior.r * layer_h / 2;
  roi.sigma = sigma_ratio * roi.radius;
  roi.index = index;
  return roi;
}

namespace {

struct Center {
  real x, y;  // pixel units at layer resolution
};

Center pixel_center(const RoiInstance& roi, int layer_h, int layer_w) {
  return {roi.cx * layer_w, roi.cy * layer_h};
}

}  // namespace

Tensor gaussian_template(const RoiInstance& roi, int layer_h, int layer_w) {
  if (!(roi.sigma > 0)) throw std::domain_error("gaussian_template: sigma must be positive");
  Center c = pixel_center(roi, layer_h, layer_w);
  Tensor g = Tensor::zeros({layer_h, layer_w});
  auto gd = g.data();
  const real inv = real(1) / (2 * roi.sigma * roi.sigma);
  for (int v = 0; v < layer_h; ++v) {
    real dy = (v + real(0.5)) - c.y;
    for (int u = 0; u < layer_w; ++u) {
      real dx = (u + real(0.5)) - c.x;
      gd[static_cast<std::size_t>(v) * layer_w + u] = roi.rho * std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return g;
}

Tensor apply_spatial_decay(const Tensor& g, const RoiInstance& roi, int layer_h, int layer_w,
                           real tau) {
  if (!(tau > 0)) throw std::domain_error("apply_spatial_decay: tau must be positive");
  if (g.rank() != 2 || g.dim(0) != layer_h || g.dim(1) != layer_w)
    throw std::invalid_argument("apply_spatial_decay: template shape mismatch");
  Center c = pixel_center(roi, layer_h, layer_w);
  Tensor out = Tensor::zeros(g.shape());
  auto gv = g.data();
  auto od = out.data();
  const real inv = real(1) / (2 * tau * tau);
  for (int v = 0; v < layer_h; ++v) {
    real dy = (v + real(0.5)) - c.y;
    for (int u = 0; u < layer_w; ++u) {
      real dx = (u + real(0.5)) - c.x;
      real d = std::sqrt(dx * dx + dy * dy);
      std::size_t i = static_cast<std::size_t>(v) * layer_w + u;
      od[i] = d <= roi.radius ? gv[i] : gv[i] * std::exp(-(d - roi.radius) * (d - roi.radius) * inv);
    }
  }
  return out;
}

Tensor decayed_unit_template(const RoiInstance& roi, int layer_h, int layer_w, real tau) {
  RoiInstance unit = roi;
  unit.rho = 1;
  return apply_spatial_decay(gaussian_template(unit, layer_h, layer_w), unit, layer_h, layer_w, tau);
}

real decayed_template_value(const RoiInstance& roi, real tau, real px, real py, int layer_h,
                            int layer_w) {
  if (!(roi.sigma > 0)) throw std::domain_error("decayed_template_value: sigma must be positive");
  if (!(tau > 0)) throw std::domain_error("decayed_template_value: tau must be positive");
  Center c = pixel_center(roi, layer_h, layer_w);
  real dx = px - c.x, dy = py - c.y;
  real d2 = dx * dx + dy * dy;
  real g = roi.rho * std::exp(-d2 / (2 * roi.sigma * roi.sigma));
  real d = std::sqrt(d2);
  if (d <= roi.radius) return g;
  return g * std::exp(-(d - roi.radius) * (d - roi.radius) / (2 * tau * tau));
}

GuidanceMap aggregate_guidance(const std::vector<RoiInstance>& rois, int layer_h, int layer_w,
                               real eps, real tau_ratio) {
  GuidanceMap map;
  map.values = Tensor::zeros({layer_h, layer_w});
  if (rois.empty()) {
    map.empty = true;
    return map;
  }
  auto acc = map.values.data();
  for (const RoiInstance& roi : rois) {
    real tau = tau_ratio * roi.radius;
    Tensor g = apply_spatial_decay(gaussian_template(roi, layer_h, layer_w), roi, layer_h, layer_w, tau);
    auto gv = g.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gv[i];
  }
  const real denom = static_cast<real>(rois.size()) + eps;
  for (real& v : acc) v /= denom;
  return map;
}

Tensor modulate(const Tensor& f, const Tensor& m, real lambda) {
  if (f.rank() != 3 || m.rank() != 2 || f.dim(1) != m.dim(0) || f.dim(2) != m.dim(1))
    throw std::invalid_argument("modulate: spatial shapes differ");
  if (lambda == 0) return f;
  return mul_spatial(f, add_scalar(mul_scalar(m, lambda), 1));
}

Tensor disk_mask(const RoiInstance& roi, int layer_h, int layer_w) {
  Center c = pixel_center(roi, layer_h, layer_w);
  Tensor mask = Tensor::zeros({layer_h, layer_w});
  auto md = mask.data();
  const real r2 = roi.radius * roi.radius;
  for (int v = 0; v < layer_h; ++v) {
    real dy = (v + real(0.5)) - c.y;
    for (int u = 0; u < layer_w; ++u) {
      real dx = (u + real(0.5)) - c.x;
      if (dx * dx + dy * dy <= r2) md[static_cast<std::size_t>(v) * layer_w + u] = 1;
    }
  }
  return mask;
}

Tensor hard_lock_modulate(const Tensor& f, const Tensor& m, const RoiInstance& locked, real lambda) {
  if (locked.index < 0) throw std::logic_error("hard_lock_modulate without a locked ROI");
  Tensor modulated = mul_spatial(f, add_scalar(mul_scalar(m, lambda), 1));
  return mul_spatial(modulated, disk_mask(locked, f.dim(1), f.dim(2)));
}

Tensor fuse_outputs(const Tensor& f_hat, const Tensor& f_tilde, bool locked) {
  if (f_hat.shape() != f_tilde.shape())
    throw std::invalid_argument("fuse_outputs: shape mismatch");
  if (locked) return f_hat;
  return add(f_hat, f_tilde);
}

}  // namespace pgr
