#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pgr/backbone.hpp"
#include "pgr/htk.hpp"
#include "pgr/metrics.hpp"
#include "pgr/synth.hpp"

namespace pgr {

struct NetConfig {
  int levels = 4;
  std::vector<int> channels = {16, 32, 64, 128};  // strictly increasing, one per level
  int in_channels = 1;
  int regions = 1;  // 1 = binary (WT), 3 = WT/TC/ET
  int heads = 2;
  real lambda = 1.0;
  real gamma_fuse = 5.0;
  real sigma_ratio = 0.5;  // sigma = ratio * R
  real tau_ratio = 0.25;   // tau   = ratio * R
  real eps_agg = 1e-6;
  int top_k = 5;  // K^(L) cap
  HtkThresholds thresholds;
  std::vector<real> alpha;  // empty = uniform 1/L
  std::uint64_t seed = 7;

  void validate() const;
};

struct TrainConfig {
  real lr = 1e-3;
  int epochs = 300;
  int patience = 50;
  real dice_weight = 0.2;
  real bce_weight = 0.8;
  int batch = 1;
  real val_fraction = 0.2;
  // Guidance warmup: lambda ramps 0 -> lambda over the first epochs and the
  // decision gating stays soft, so the scorer heads only receive modulation
  // gradient once the conv features discriminate lesion from background.
  // After warmup, training runs with the lock gating live.
  int warmup_epochs = 5;
  // After warmup, every Nth step trains the plain full-image path so the
  // inference-time fallback stays calibrated. 0 disables.
  int fallback_rehearsal = 8;
  // Baseline ablation: run the whole training and validation with the plain
  // windowless path (no priors, no guidance, no decisions).
  bool force_fallback = false;
  // Hard locks phase in: disabled through warmup, then allowed on every
  // lock_rehearsal'th step until lock_delay_epochs, then always. The sparse
  // phase anchors the guidance orientation (correctly locked samples train
  // cleanly) without letting early wrong locks dominate the loss.
  int lock_delay_epochs = 30;
  int lock_rehearsal = 4;
};

enum class ForwardMode {
  Auto,            // inference: fallback/lock gating active
  FallbackForced,  // plain windowless encoder-decoder path
  SoftTraining,    // multi-ROI soft processing everywhere, no hard masks
  GatedTraining,   // lock honored, but unstable decisions train soft instead
                   // of bypassing (the bypass would starve the scorer heads)
};

struct ForwardStats {
  int windows_run = 0;
  int degenerate_candidates = 0;
  int hard_mask_ops = 0;  // zero-masking ops executed (hard lock, ROI-only decode)
};

// ROI-only up-sampling: plain 2x nearest upsample; when a locked ROI is
// given, pixels outside its disk at the upsampled resolution are zeroed.
Tensor roi_only_upsample(const Tensor& f, const RoiInstance* locked_roi, ForwardStats* stats = nullptr);

// ROI-aware skip: concat(dec, enc) with the encoder features masked to the
// locked ROI disk when given.
Tensor roi_aware_skip(const Tensor& enc_f, const Tensor& dec_f, const RoiInstance* locked_roi,
                      ForwardStats* stats = nullptr);

// 0.2*(1 - mean soft Dice over regions) + 0.8*mean BCE on logits.
Tensor segmentation_loss(const Tensor& logits, const Tensor& target, real dice_weight = 0.2,
                         real bce_weight = 0.8);

// [R,H,W] region composition target from a label grid.
Tensor make_target(const LabelGrid& mask, int regions);

// z-scored image tensor [C,H,W] from an ImageGrid.
Tensor image_to_tensor(const ImageGrid& img);

class PgrNet {
 public:
  PgrNet(NetConfig cfg, PriorTemplateSet priors);

  struct Output {
    Tensor logits;  // [regions, H, W]
    std::optional<ConfidenceRecord> record;
    ForwardStats stats;
    bool fallback_used = false;
    bool locked_used = false;
  };

  // lambda_scale multiplies the configured guidance strength (training
  // warmup); allow_lock=false keeps engaged decisions in multi-ROI mode.
  Output forward(const Tensor& image, ForwardMode mode, real lambda_scale = 1.0,
                 bool allow_lock = true);

  NamedParams parameters();
  const NetConfig& config() const { return cfg_; }
  const PriorTemplateSet& priors() const { return priors_; }
  const TopKSchedule& schedule() const { return schedule_; }

  LabelGrid logits_to_mask(const Tensor& logits) const;

 private:
  struct Level {
    Tensor conv_w, conv_b;      // stem (level 0) or transition conv
    RetentionBlock block;
    ScorerHead scorer;
    Tensor up_w, up_b;          // decoder mixing conv after upsample (levels 0..L-2)
    Tensor skip_w, skip_b;      // decoder conv after skip concat (levels 0..L-2)
  };

  Tensor guidance_for(const std::vector<RoiInstance>& instances, const Tensor& rho, int h, int w);
  const Tensor& unit_template(int prior_index, int h, int w);
  const Tensor& disk_for(int prior_index, int h, int w);

  NetConfig cfg_;
  PriorTemplateSet priors_;
  TopKSchedule schedule_;
  std::vector<Level> levels_;
  Tensor head_w, head_b;
  std::map<std::tuple<int, int, int>, Tensor> template_cache_;
  std::map<std::tuple<int, int, int>, Tensor> disk_cache_;
};

struct Adam {
  real lr = 1e-3;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;

  explicit Adam(real learning_rate = 1e-3) : lr(learning_rate) {}
  void step(NamedParams& params);
  static void zero_grads(NamedParams& params);

 private:
  std::vector<std::vector<real>> m_, v_;
  long long t_ = 0;
};

struct EpochRow {
  int epoch = 0;
  real train_loss = 0;
  real val_dice = 0;
  real val_hd95 = 0;
  real fallback_rate = 0;
};

struct TrainResult {
  std::vector<EpochRow> history;
  real best_val_dice = 0;
  int best_epoch = -1;
  bool stopped_early = false;
};

// epoch,train_loss,val_dice,val_hd95,fallback_rate
std::string history_csv(const std::vector<EpochRow>& history);

using EpochCallback = std::function<bool(const EpochRow&)>;  // return false to stop

// Case-level 8:2 split (by sorted id), Adam, best-val-Dice snapshot restored
// into the net on return. Non-finite loss aborts with a diagnostic.
TrainResult train(PgrNet& net, const std::vector<Sample>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Validation-style evaluation of one sample set; mode is Auto unless forced.
struct EvalSummary {
  real mean_dice = 0;
  real mean_hd95 = 0;
  real fallback_rate = 0;
};
EvalSummary evaluate_samples(PgrNet& net, const std::vector<Sample>& samples,
                             ForwardMode mode = ForwardMode::Auto);

// key=value config file support; unknown keys throw. Returns the list of
// recognized keys it applied.
void apply_config_kv(NetConfig& net_cfg, TrainConfig& train_cfg, const std::string& key,
                     const std::string& value);
void load_config_file(const std::string& path, NetConfig& net_cfg, TrainConfig& train_cfg);

std::string net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const std::string& text);

}  // namespace pgr
