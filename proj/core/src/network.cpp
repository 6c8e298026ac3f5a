#include "pgr/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace pgr {

void NetConfig::validate() const {
  if (levels < 2) throw std::invalid_argument("config: levels must be >= 2");
  if (static_cast<int>(channels.size()) != levels)
    throw std::invalid_argument("config: channels must list one width per level");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) throw std::invalid_argument("config: channel widths must be positive");
    if (i && channels[i] <= channels[i - 1])
      throw std::invalid_argument("config: channels must be strictly increasing with depth");
    if (channels[i] % heads != 0)
      throw std::invalid_argument("config: channel widths must be divisible by head count");
  }
  if (in_channels < 1) throw std::invalid_argument("config: in_channels must be >= 1");
  if (regions != 1 && regions != 3) throw std::invalid_argument("config: regions must be 1 or 3");
  if (heads < 1) throw std::invalid_argument("config: heads must be >= 1");
  if (top_k < 1) throw std::invalid_argument("config: top_k must be >= 1");
  if (!(lambda >= 0)) throw std::invalid_argument("config: lambda must be >= 0");
  if (!(gamma_fuse > 0)) throw std::invalid_argument("config: gamma_fuse must be > 0");
  if (!(sigma_ratio > 0) || !(tau_ratio > 0))
    throw std::invalid_argument("config: sigma_ratio and tau_ratio must be > 0");
  if (!alpha.empty() && static_cast<int>(alpha.size()) != levels)
    throw std::invalid_argument("config: alpha must list one weight per level");
}

namespace {

Tensor conv_init(int out_ch, int in_ch, int kh, int kw, Rng& rng) {
  int fan_in = in_ch * kh * kw;
  real scale = std::sqrt(real(2) / fan_in);
  std::vector<real> data(static_cast<std::size_t>(out_ch) * in_ch * kh * kw);
  for (real& v : data) v = rng.normal() * scale;
  return Tensor::from({out_ch, in_ch, kh, kw}, std::move(data), true);
}

// uniform(-1/sqrt(fan_in), ...); zero biases would put all-background conv
// responses exactly on the relu kink
Tensor conv_bias_init(int out_ch, int in_ch, int kh, int kw, Rng& rng) {
  real bound = real(1) / std::sqrt(static_cast<real>(in_ch * kh * kw));
  std::vector<real> data(static_cast<std::size_t>(out_ch));
  for (real& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from({out_ch}, std::move(data), true);
}

}  // namespace

Tensor image_to_tensor(const ImageGrid& img) {
  ZscoreResult z = zscore_foreground(img);
  return Tensor::from({z.image.channels, z.image.height, z.image.width},
                      std::vector<real>(z.image.values.begin(), z.image.values.end()));
}

Tensor make_target(const LabelGrid& mask, int regions) {
  std::vector<std::string> names = regions == 3 ? std::vector<std::string>{"WT", "TC", "ET"}
                                                : std::vector<std::string>{"WT"};
  Tensor t = Tensor::zeros({regions, mask.height, mask.width});
  auto td = t.data();
  for (int r = 0; r < regions; ++r) {
    RegionMask rm = region_mask(mask, names[static_cast<std::size_t>(r)]);
    for (std::size_t i = 0; i < rm.values.size(); ++i)
      td[static_cast<std::size_t>(r) * rm.values.size() + i] = rm.values[i];
  }
  return t;
}

Tensor segmentation_loss(const Tensor& logits, const Tensor& target, real dice_weight,
                         real bce_weight) {
  if (logits.shape() != target.shape())
    throw std::invalid_argument("segmentation_loss: logits/target shape mismatch");
  Tensor p = sigmoid(logits);
  // soft Dice per region with +1 smoothing, then mean over regions
  Tensor inter = spatial_sum(mul(p, target));                       // [R]
  Tensor denom = add(spatial_sum(p), spatial_sum(target));          // [R]
  Tensor dice_vec = div(add_scalar(mul_scalar(inter, 2), 1), add_scalar(denom, 1));
  Tensor dice_loss = add_scalar(mul_scalar(mean_all(dice_vec), -1), 1);
  Tensor bce = bce_with_logits(logits, target);
  return add(mul_scalar(dice_loss, dice_weight), mul_scalar(bce, bce_weight));
}

Tensor roi_only_upsample(const Tensor& f, const RoiInstance* locked_roi, ForwardStats* stats) {
  Tensor up = upsample2x_nearest(f);
  if (!locked_roi) return up;
  if (stats) ++stats->hard_mask_ops;
  return mul_spatial(up, disk_mask(*locked_roi, up.dim(1), up.dim(2)));
}

Tensor roi_aware_skip(const Tensor& enc_f, const Tensor& dec_f, const RoiInstance* locked_roi,
                      ForwardStats* stats) {
  if (enc_f.dim(1) != dec_f.dim(1) || enc_f.dim(2) != dec_f.dim(2))
    throw std::invalid_argument("roi_aware_skip: spatial shapes differ");
  Tensor enc = enc_f;
  if (locked_roi) {
    if (stats) ++stats->hard_mask_ops;
    enc = mul_spatial(enc_f, disk_mask(*locked_roi, enc_f.dim(1), enc_f.dim(2)));
  }
  return concat0(dec_f, enc);
}

PgrNet::PgrNet(NetConfig cfg, PriorTemplateSet priors)
    : cfg_(std::move(cfg)), priors_(std::move(priors)) {
  cfg_.validate();
  const int n = static_cast<int>(priors_.priors.size());
  schedule_ = default_schedule(cfg_.levels, std::max(1, n), cfg_.top_k);

  Rng rng(cfg_.seed);
  levels_.resize(static_cast<std::size_t>(cfg_.levels));
  for (int lv = 0; lv < cfg_.levels; ++lv) {
    Level& level = levels_[static_cast<std::size_t>(lv)];
    int in_ch = lv == 0 ? cfg_.in_channels : cfg_.channels[static_cast<std::size_t>(lv - 1)];
    int out_ch = cfg_.channels[static_cast<std::size_t>(lv)];
    level.conv_w = conv_init(out_ch, in_ch, 3, 3, rng);
    level.conv_b = conv_bias_init(out_ch, in_ch, 3, 3, rng);
    level.block = make_retention_block(out_ch, cfg_.heads, rng);
    level.scorer = make_scorer_head(out_ch, rng);
    if (lv + 1 < cfg_.levels) {
      int deep_ch = cfg_.channels[static_cast<std::size_t>(lv + 1)];
      level.up_w = conv_init(out_ch, deep_ch, 3, 3, rng);
      level.up_b = conv_bias_init(out_ch, deep_ch, 3, 3, rng);
      level.skip_w = conv_init(out_ch, 2 * out_ch, 3, 3, rng);
      level.skip_b = conv_bias_init(out_ch, 2 * out_ch, 3, 3, rng);
    }
  }
  head_w = conv_init(cfg_.regions, cfg_.channels[0], 1, 1, rng);
  head_b = conv_bias_init(cfg_.regions, cfg_.channels[0], 1, 1, rng);
}

const Tensor& PgrNet::unit_template(int prior_index, int h, int w) {
  auto key = std::make_tuple(prior_index, h, w);
  auto it = template_cache_.find(key);
  if (it == template_cache_.end()) {
    RoiInstance inst = make_roi_instance(priors_.priors[static_cast<std::size_t>(prior_index)], h, w,
                                         cfg_.sigma_ratio, 1, prior_index);
    real tau = cfg_.tau_ratio * inst.radius;
    it = template_cache_.emplace(key, decayed_unit_template(inst, h, w, tau)).first;
  }
  return it->second;
}

const Tensor& PgrNet::disk_for(int prior_index, int h, int w) {
  auto key = std::make_tuple(prior_index, h, w);
  auto it = disk_cache_.find(key);
  if (it == disk_cache_.end()) {
    RoiInstance inst = make_roi_instance(priors_.priors[static_cast<std::size_t>(prior_index)], h, w,
                                         cfg_.sigma_ratio, 1, prior_index);
    it = disk_cache_.emplace(key, disk_mask(inst, h, w)).first;
  }
  return it->second;
}

Tensor PgrNet::guidance_for(const std::vector<RoiInstance>& instances, const Tensor& rho, int h,
                            int w) {
  if (instances.empty()) return Tensor::zeros({h, w});
  Tensor acc;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    Tensor term = mul(unit_template(instances[k].index, h, w), select(rho, static_cast<int>(k)));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return mul_scalar(acc, real(1) / (static_cast<real>(instances.size()) + cfg_.eps_agg));
}

PgrNet::Output PgrNet::forward(const Tensor& image, ForwardMode mode, real lambda_scale,
                               bool allow_lock) {
  const real lambda = cfg_.lambda * lambda_scale;
  if (image.rank() != 3 || image.dim(0) != cfg_.in_channels)
    throw std::invalid_argument("forward: image must be [in_channels,H,W]");

  Output out;
  const int L = cfg_.levels;

  // Guidance-free pyramid: the HTK scoring features and the plain path.
  std::vector<Tensor> pyramid(static_cast<std::size_t>(L));
  pyramid[0] = relu(conv2d(image, levels_[0].conv_w, levels_[0].conv_b, 1, 1));
  for (int lv = 1; lv < L; ++lv)
    pyramid[static_cast<std::size_t>(lv)] =
        relu(conv2d(avgpool2x2(pyramid[static_cast<std::size_t>(lv - 1)]),
                    levels_[static_cast<std::size_t>(lv)].conv_w,
                    levels_[static_cast<std::size_t>(lv)].conv_b, 1, 1));

  const bool have_priors = !priors_.priors.empty();
  if (mode != ForwardMode::FallbackForced && have_priors) {
    std::vector<ScorerHead> heads;
    heads.reserve(static_cast<std::size_t>(L));
    for (int lv = 0; lv < L; ++lv) heads.push_back(levels_[static_cast<std::size_t>(lv)].scorer);
    out.record = decide(pyramid, priors_, schedule_, heads, cfg_.thresholds, cfg_.alpha);
  }

  const bool plain = mode == ForwardMode::FallbackForced || !out.record ||
                     (mode == ForwardMode::Auto && out.record->fallback);
  out.fallback_used = plain;
  const bool locked = !plain && allow_lock &&
                      (mode == ForwardMode::Auto || mode == ForwardMode::GatedTraining) &&
                      out.record->locked;
  out.locked_used = locked;

  std::vector<Tensor> enc(static_cast<std::size_t>(L));
  if (plain) {
    enc = pyramid;
  } else {
    const ConfidenceRecord& rec = *out.record;
    for (int lv = 0; lv < L; ++lv) {
      Tensor x = lv == 0 ? pyramid[0]
                         : relu(conv2d(avgpool2x2(enc[static_cast<std::size_t>(lv - 1)]),
                                       levels_[static_cast<std::size_t>(lv)].conv_w,
                                       levels_[static_cast<std::size_t>(lv)].conv_b, 1, 1));
      const int h = x.dim(1), w = x.dim(2);
      const bool lock_here = locked && lv == L - 1;  // single-ROI mode at the coarsest layer

      std::vector<RoiInstance> cands;
      Tensor rho;
      if (lock_here) {
        int ri = rec.r_star;
        real rho_val = rec.aggregate.data()[static_cast<std::size_t>(ri)];
        cands.push_back(make_roi_instance(priors_.priors[static_cast<std::size_t>(ri)], h, w,
                                          cfg_.sigma_ratio, rho_val, ri));
        rho = reshape(select(rec.aggregate, ri), {1});
      } else {
        // candidates T^(l) carry confidences from the full-layer aggregate S
        const LayerDecision& ld = rec.layers[static_cast<std::size_t>(lv)];
        std::vector<Tensor> picks;
        for (int gi : ld.selected) {
          real rho_val = rec.aggregate.data()[static_cast<std::size_t>(gi)];
          cands.push_back(make_roi_instance(priors_.priors[static_cast<std::size_t>(gi)], h, w,
                                            cfg_.sigma_ratio, rho_val, gi));
          picks.push_back(reshape(select(rec.aggregate, gi), {1, 1}));
        }
        if (!picks.empty())
          rho = reshape(concat_cols(picks), {static_cast<int>(picks.size())});
      }

      Tensor guidance = guidance_for(cands, rho, h, w);
      EncodeLayerStats stats{};
      RoiInstance locked_inst;
      if (lock_here) locked_inst = cands[0];
      enc[static_cast<std::size_t>(lv)] =
          encode_layer(x, cands, rho, levels_[static_cast<std::size_t>(lv)].block, guidance,
                       lambda, cfg_.gamma_fuse, lock_here, lock_here ? &locked_inst : nullptr,
                       &stats);
      out.stats.windows_run += stats.windows_run;
      out.stats.degenerate_candidates += stats.degenerate_candidates;
      out.stats.hard_mask_ops += stats.hard_mask_ops;
    }
  }

  // Decoder: ROI-only upsample + ROI-aware skip + conv mixing per level.
  Tensor d = enc[static_cast<std::size_t>(L - 1)];
  for (int lv = L - 2; lv >= 0; --lv) {
    const Tensor& skip_src = enc[static_cast<std::size_t>(lv)];
    RoiInstance decode_roi;
    const RoiInstance* roi_ptr = nullptr;
    if (locked) {
      decode_roi = make_roi_instance(priors_.priors[static_cast<std::size_t>(out.record->r_star)],
                                     skip_src.dim(1), skip_src.dim(2), cfg_.sigma_ratio,
                                     1, out.record->r_star);
      roi_ptr = &decode_roi;
    }
    Tensor u = roi_only_upsample(d, roi_ptr, &out.stats);
    if (u.dim(1) != skip_src.dim(1) || u.dim(2) != skip_src.dim(2))
      u = gather_window(u, 0, 0, skip_src.dim(1), skip_src.dim(2));
    u = relu(conv2d(u, levels_[static_cast<std::size_t>(lv)].up_w,
                    levels_[static_cast<std::size_t>(lv)].up_b, 1, 1));
    Tensor cat = roi_aware_skip(skip_src, u, roi_ptr, &out.stats);
    d = relu(conv2d(cat, levels_[static_cast<std::size_t>(lv)].skip_w,
                    levels_[static_cast<std::size_t>(lv)].skip_b, 1, 1));
  }
  out.logits = conv2d(d, head_w, head_b, 1, 0);
  return out;
}

NamedParams PgrNet::parameters() {
  NamedParams params;
  for (int lv = 0; lv < cfg_.levels; ++lv) {
    Level& level = levels_[static_cast<std::size_t>(lv)];
    std::string prefix = "enc" + std::to_string(lv + 1);
    params.emplace_back(prefix + ".conv.w", level.conv_w);
    params.emplace_back(prefix + ".conv.b", level.conv_b);
    append_params(params, prefix + ".block", level.block);
    append_params(params, prefix + ".scorer", level.scorer);
    if (lv + 1 < cfg_.levels) {
      std::string dec = "dec" + std::to_string(lv + 1);
      params.emplace_back(dec + ".up.w", level.up_w);
      params.emplace_back(dec + ".up.b", level.up_b);
      params.emplace_back(dec + ".skip.w", level.skip_w);
      params.emplace_back(dec + ".skip.b", level.skip_b);
    }
  }
  params.emplace_back("head.w", head_w);
  params.emplace_back("head.b", head_b);
  return params;
}

LabelGrid PgrNet::logits_to_mask(const Tensor& logits) const {
  const int R = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  LabelGrid mask;
  mask.height = H;
  mask.width = W;
  mask.labels.assign(static_cast<std::size_t>(H) * W, 0);
  auto lv = logits.data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t p = 0; p < plane; ++p) {
    if (R == 1) {
      mask.labels[p] = lv[p] >= 0 ? 1 : 0;  // sigmoid >= 0.5
    } else {
      bool wt = lv[p] >= 0, tc = lv[plane + p] >= 0, et = lv[2 * plane + p] >= 0;
      mask.labels[p] = et ? 4 : tc ? 1 : wt ? 2 : 0;
    }
  }
  return mask;
}

void Adam::step(NamedParams& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params[i].second.numel()), 0);
      v_[i].assign(static_cast<std::size_t>(params[i].second.numel()), 0);
    }
  }
  ++t_;
  const real bc1 = real(1) - std::pow(beta1, static_cast<real>(t_));
  const real bc2 = real(1) - std::pow(beta2, static_cast<real>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    if (!p.has_grad()) continue;
    auto g = p.grad_view();
    auto data = p.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      m_[i][j] = beta1 * m_[i][j] + (real(1) - beta1) * g[j];
      v_[i][j] = beta2 * v_[i][j] + (real(1) - beta2) * g[j] * g[j];
      real mhat = m_[i][j] / bc1;
      real vhat = v_[i][j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::zero_grads(NamedParams& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

std::string history_csv(const std::vector<EpochRow>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_dice,val_hd95,fallback_rate\n";
  os.precision(6);
  os << std::fixed;
  for (const EpochRow& row : history)
    os << row.epoch << "," << row.train_loss << "," << row.val_dice << "," << row.val_hd95 << ","
       << row.fallback_rate << "\n";
  return os.str();
}

EvalSummary evaluate_samples(PgrNet& net, const std::vector<Sample>& samples, ForwardMode mode) {
  EvalSummary summary;
  if (samples.empty()) return summary;
  double dice_acc = 0, hd_acc = 0;
  int rows = 0, fallbacks = 0;
  for (const Sample& s : samples) {
    Tensor img = image_to_tensor(s.image);
    PgrNet::Output out = net.forward(img, mode);
    LabelGrid pred = net.logits_to_mask(out.logits);
    if (out.fallback_used) ++fallbacks;
    for (const std::string& region : regions_for(s.mask)) {
      RegionMask pm = region_mask(pred, region);
      RegionMask gm = region_mask(s.mask, region);
      dice_acc += dice(pm, gm);
      hd_acc += hd95(pm, gm).value;
      ++rows;
    }
  }
  summary.mean_dice = rows ? dice_acc / rows : 0;
  summary.mean_hd95 = rows ? hd_acc / rows : 0;
  summary.fallback_rate = static_cast<double>(fallbacks) / static_cast<double>(samples.size());
  return summary;
}

TrainResult train(PgrNet& net, const std::vector<Sample>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (samples.size() < 2) throw std::invalid_argument("train: need at least 2 samples");
  if (cfg.epochs < 1 || cfg.patience < 1 || cfg.batch < 1)
    throw std::invalid_argument("train: bad epoch/patience/batch settings");

  // case-level split on the sorted ids (load_dataset sorts)
  std::vector<Sample> ordered = samples;
  std::sort(ordered.begin(), ordered.end(),
            [](const Sample& a, const Sample& b) { return a.case_id < b.case_id; });
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                   std::llround(cfg.val_fraction * ordered.size())));
  if (n_val >= ordered.size()) n_val = ordered.size() - 1;
  std::vector<Sample> train_set(ordered.begin(), ordered.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<Sample> val_set(ordered.end() - static_cast<std::ptrdiff_t>(n_val), ordered.end());

  // cache preprocessed tensors
  std::vector<Tensor> inputs, targets;
  for (const Sample& s : train_set) {
    inputs.push_back(image_to_tensor(s.image));
    targets.push_back(make_target(s.mask, net.config().regions));
  }

  NamedParams params = net.parameters();
  Adam adam(cfg.lr);
  Rng shuffle_rng(net.config().seed ^ 0x5eedull);
  const real lr_floor = real(0.05) * cfg.lr;

  TrainResult result;
  NamedParams best_snapshot;
  int since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // "dynamic" learning rate: cosine decay to a small floor
    adam.lr = lr_floor + (cfg.lr - lr_floor) * real(0.5) *
                             (real(1) + std::cos(M_PI * epoch / std::max(1, cfg.epochs - 1)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double loss_acc = 0;
    std::size_t step_count = 0;
    Tape tape;
    for (std::size_t pos = 0; pos < order.size();) {
      Adam::zero_grads(params);
      int in_batch = 0;
      for (; in_batch < cfg.batch && pos < order.size(); ++in_batch, ++pos) {
        std::size_t idx = order[pos];
        Tape::Scope scope(tape);
        const bool warm = epoch < cfg.warmup_epochs;
        const real lambda_scale =
            warm ? static_cast<real>(epoch) / static_cast<real>(cfg.warmup_epochs) : real(1);
        ForwardMode mode = warm ? ForwardMode::SoftTraining : ForwardMode::Auto;
        if (!warm && cfg.fallback_rehearsal > 0 &&
            step_count % static_cast<std::size_t>(cfg.fallback_rehearsal) == 0)
          mode = ForwardMode::FallbackForced;
        if (cfg.force_fallback) mode = ForwardMode::FallbackForced;
        bool allow_lock = epoch >= cfg.lock_delay_epochs;
        if (!warm && !allow_lock && cfg.lock_rehearsal > 0 &&
            step_count % static_cast<std::size_t>(cfg.lock_rehearsal) == 1)
          allow_lock = true;
        PgrNet::Output out = net.forward(inputs[idx], mode, lambda_scale, allow_lock);
        Tensor loss = segmentation_loss(out.logits, targets[idx], cfg.dice_weight, cfg.bce_weight);
        real lv = loss.item();
        if (!std::isfinite(lv))
          throw std::runtime_error("training diverged (non-finite loss at epoch " +
                                   std::to_string(epoch) + ")");
        loss_acc += lv;
        ++step_count;
        backward(loss);
      }
      if (in_batch > 1) {
        for (auto& [name, p] : params) {
          if (!p.has_grad()) continue;
          auto g = p.grad();
          for (real& v : g) v /= in_batch;
        }
      }
      adam.step(params);
    }

    EvalSummary val = evaluate_samples(
        net, val_set, cfg.force_fallback ? ForwardMode::FallbackForced : ForwardMode::Auto);
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = static_cast<real>(loss_acc / std::max<std::size_t>(1, step_count));
    row.val_dice = static_cast<real>(val.mean_dice);
    row.val_hd95 = static_cast<real>(val.mean_hd95);
    row.fallback_rate = static_cast<real>(val.fallback_rate);
    result.history.push_back(row);

    if (row.val_dice > result.best_val_dice || result.best_epoch < 0) {
      result.best_val_dice = row.val_dice;
      result.best_epoch = epoch;
      since_best = 0;
      best_snapshot.clear();
      for (auto& [name, p] : params) best_snapshot.emplace_back(name, p.clone_detached());
    } else {
      ++since_best;
    }

    if (on_epoch && !on_epoch(row)) break;
    if (since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }

  // restore the best-validation-Dice weights
  if (!best_snapshot.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i)
      std::copy(best_snapshot[i].second.data().begin(), best_snapshot[i].second.data().end(),
                params[i].second.data().begin());
  }
  return result;
}

void apply_config_kv(NetConfig& net_cfg, TrainConfig& train_cfg, const std::string& key,
                     const std::string& value) {
  auto as_int = [&]() { return std::stoi(value); };
  auto as_real = [&]() { return static_cast<real>(std::stod(value)); };
  auto as_list = [&]() {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
  };
  auto as_real_list = [&]() {
    std::vector<real> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<real>(std::stod(item)));
    return out;
  };

  if (key == "levels") net_cfg.levels = as_int();
  else if (key == "channels") net_cfg.channels = as_list();
  else if (key == "in_channels") net_cfg.in_channels = as_int();
  else if (key == "regions") net_cfg.regions = as_int();
  else if (key == "heads") net_cfg.heads = as_int();
  else if (key == "lambda") net_cfg.lambda = as_real();
  else if (key == "gamma_fuse") net_cfg.gamma_fuse = as_real();
  else if (key == "sigma_ratio") net_cfg.sigma_ratio = as_real();
  else if (key == "tau_ratio") net_cfg.tau_ratio = as_real();
  else if (key == "tau1") net_cfg.thresholds.tau1 = as_real();
  else if (key == "tau2") net_cfg.thresholds.tau2 = as_real();
  else if (key == "tau_lock") net_cfg.thresholds.tau_lock = as_real();
  else if (key == "top_k") net_cfg.top_k = as_int();
  else if (key == "alpha") net_cfg.alpha = as_real_list();
  else if (key == "seed") net_cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "lr") train_cfg.lr = as_real();
  else if (key == "epochs") train_cfg.epochs = as_int();
  else if (key == "patience") train_cfg.patience = as_int();
  else if (key == "dice_weight") train_cfg.dice_weight = as_real();
  else if (key == "bce_weight") train_cfg.bce_weight = as_real();
  else if (key == "batch") train_cfg.batch = as_int();
  else if (key == "val_fraction") train_cfg.val_fraction = as_real();
  else if (key == "warmup_epochs") train_cfg.warmup_epochs = as_int();
  else if (key == "fallback_rehearsal") train_cfg.fallback_rehearsal = as_int();
  else if (key == "force_fallback") train_cfg.force_fallback = std::stoi(value) != 0;
  else if (key == "lock_delay_epochs") train_cfg.lock_delay_epochs = as_int();
  else if (key == "lock_rehearsal") train_cfg.lock_rehearsal = as_int();
  else throw std::invalid_argument("unknown config key: " + key);
}

void load_config_file(const std::string& path, NetConfig& net_cfg, TrainConfig& train_cfg) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::string trimmed;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) trimmed.push_back(c);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key=value");
    try {
      apply_config_kv(net_cfg, train_cfg, trimmed.substr(0, eq), trimmed.substr(eq + 1));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string net_config_to_json(const NetConfig& cfg) {
  nlohmann::ordered_json j;
  j["levels"] = cfg.levels;
  j["channels"] = cfg.channels;
  j["in_channels"] = cfg.in_channels;
  j["regions"] = cfg.regions;
  j["heads"] = cfg.heads;
  j["lambda"] = cfg.lambda;
  j["gamma_fuse"] = cfg.gamma_fuse;
  j["sigma_ratio"] = cfg.sigma_ratio;
  j["tau_ratio"] = cfg.tau_ratio;
  j["tau1"] = cfg.thresholds.tau1;
  j["tau2"] = cfg.thresholds.tau2;
  j["tau_lock"] = cfg.thresholds.tau_lock;
  j["eps_agg"] = cfg.eps_agg;
  j["top_k"] = cfg.top_k;
  j["alpha"] = cfg.alpha;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

NetConfig net_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  NetConfig cfg;
  cfg.levels = j.at("levels").get<int>();
  cfg.channels = j.at("channels").get<std::vector<int>>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.regions = j.at("regions").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.lambda = j.at("lambda").get<real>();
  cfg.gamma_fuse = j.at("gamma_fuse").get<real>();
  cfg.sigma_ratio = j.at("sigma_ratio").get<real>();
  cfg.tau_ratio = j.at("tau_ratio").get<real>();
  cfg.thresholds.tau1 = j.at("tau1").get<real>();
  cfg.thresholds.tau2 = j.at("tau2").get<real>();
  cfg.thresholds.tau_lock = j.at("tau_lock").get<real>();
  cfg.eps_agg = j.at("eps_agg").get<real>();
  cfg.top_k = j.at("top_k").get<int>();
  cfg.alpha = j.at("alpha").get<std::vector<real>>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace pgr
