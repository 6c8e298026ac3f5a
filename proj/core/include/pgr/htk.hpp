#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pgr/checkpoint.hpp"
#include "pgr/ops.hpp"
#include "pgr/prior.hpp"
#include "pgr/random.hpp"

namespace pgr {

// Lightweight per-layer scorer: GAP-pooled window features concatenated with
// (r, cx, cy), hidden width 32, scalar output.
struct ScorerHead {
  int in_dim = 0;  // channels + 3
  Tensor w1, b1;   // [in_dim, 32], [32]
  Tensor w2, b2;   // [32, 1], [1]
};

ScorerHead make_scorer_head(int channels, Rng& rng);
void append_params(NamedParams& out, const std::string& prefix, const ScorerHead& head);

// K^(L) >= K^(L-1) >= ... >= K^(1) >= 1; index 0 holds K^(1).
struct TopKSchedule {
  std::vector<int> k_per_layer;

  int k_at(int layer) const { return k_per_layer[static_cast<std::size_t>(layer - 1)]; }
  int levels() const { return static_cast<int>(k_per_layer.size()); }
};

// K^(L) = min(N, cap), then K^(l) = max(1, ceil(K^(l+1)/2)).
TopKSchedule default_schedule(int levels, int n_priors, int cap = 5);

struct HtkThresholds {
  real tau1 = 0.15;
  real tau2 = -1;  // <= 0 means auto: 0.9 * ln(N)
  real tau_lock = 0.30;

  real tau2_for(int n) const;
};

struct LayerDecision {
  int layer = 0;
  std::vector<int> scored;            // global indices scored at this layer
  std::vector<real> raw_scores;       // aligned with `scored`; -inf for degenerate
  std::vector<int> selected;          // T^(l), ascending global index
  Tensor expanded;                    // s_hat^(l), length-N tape tensor
};

struct ConfidenceRecord {
  int n = 0;
  std::vector<LayerDecision> layers;  // index 0 = layer 1 (finest)
  std::vector<real> alpha;
  Tensor aggregate;                   // S, length-N tape tensor
  real delta_gap = 0;
  real entropy = 0;
  bool fallback = false;
  bool locked = false;
  int r_star = -1;  // 0-based global index; -1 when undefined
};

constexpr real kNegInf = -std::numeric_limits<real>::infinity();

// Scores one candidate window on F_l; differentiable through the pooled
// features. Returns nullopt for degenerate windows (< 2x2 after clamping).
std::optional<Tensor> score_candidate(const Tensor& f_l, const RoiPrior& prior,
                                      const ScorerHead& head);

// Indices (into `scores`) of the K largest finite scores; ties broken by
// lower index; fewer than K finite scores returns all finite ones.
std::vector<int> topk_filter(const std::vector<real>& scores, int k);

// Softmax over the selected scores scattered into a length-n row.
Tensor expand_scores(const std::vector<Tensor>& selected_scores, const std::vector<int>& indices,
                     int n);

// S = sum_l alpha_l s_hat^(l); R* = argmax (lower index wins).
// R* = -1 when S is all zeros.
std::pair<Tensor, int> aggregate_confidence(const std::vector<Tensor>& rows,
                                            const std::vector<real>& alpha);

struct Stability {
  real delta_gap = 0;
  real entropy = 0;
  bool fallback = false;
};

Stability stability_check(std::span<const real> s, real tau1, real tau2);

// Full decision over per-layer features, coarsest (features.back()) first.
// features[l-1] is layer l's pre-modulation map [C_l, H_l, W_l].
ConfidenceRecord decide(const std::vector<Tensor>& features, const PriorTemplateSet& priors,
                        const TopKSchedule& schedule, const std::vector<ScorerHead>& heads,
                        const HtkThresholds& thresholds, const std::vector<real>& alpha = {});

std::string record_to_json(const ConfidenceRecord& record);
// Minimal parse used by `evaluate` for the fallback flag.
bool fallback_from_json(const std::string& text);

}  // namespace pgr
