#include "pgr/htk.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "pgr/backbone.hpp"

namespace pgr {

ScorerHead make_scorer_head(int channels, Rng& rng) {
  ScorerHead head;
  head.in_dim = channels + 3;
  real s1 = real(1) / std::sqrt(static_cast<real>(head.in_dim));
  real s2 = real(1) / std::sqrt(real(32));
  std::vector<real> w1(static_cast<std::size_t>(head.in_dim) * 32);
  for (real& v : w1) v = rng.normal() * s1;
  std::vector<real> w2(32);
  for (real& v : w2) v = rng.normal() * s2;
  std::vector<real> b1(32);
  for (real& v : b1) v = rng.uniform(-s1, s1);
  head.w1 = Tensor::from({head.in_dim, 32}, std::move(w1), true);
  head.b1 = Tensor::from({32}, std::move(b1), true);
  head.w2 = Tensor::from({32, 1}, std::move(w2), true);
  head.b2 = Tensor::from({1}, {rng.uniform(-s2, s2)}, true);
  return head;
}

void append_params(NamedParams& out, const std::string& prefix, const ScorerHead& head) {
  out.emplace_back(prefix + ".w1", head.w1);
  out.emplace_back(prefix + ".b1", head.b1);
  out.emplace_back(prefix + ".w2", head.w2);
  out.emplace_back(prefix + ".b2", head.b2);
}

TopKSchedule default_schedule(int levels, int n_priors, int cap) {
  if (levels < 1 || n_priors < 1 || cap < 1)
    throw std::invalid_argument("default_schedule: bad arguments");
  TopKSchedule s;
  s.k_per_layer.resize(static_cast<std::size_t>(levels));
  int k = std::min(n_priors, cap);
  for (int l = levels; l >= 1; --l) {
    s.k_per_layer[static_cast<std::size_t>(l - 1)] = k;
    k = std::max(1, (k + 1) / 2);
  }
  return s;
}

real HtkThresholds::tau2_for(int n) const {
  if (tau2 > 0) return tau2;
  return real(0.9) * std::log(std::max(2, n));
}

std::optional<Tensor> score_candidate(const Tensor& f_l, const RoiPrior& prior,
                                      const ScorerHead& head) {
  const int H = f_l.dim(1), W = f_l.dim(2);
  WindowBBox box;
  try {
    box = window_bbox(prior.r, prior.cx, prior.cy, H, W);
  } catch (const std::domain_error&) {
    return std::nullopt;  // degenerate window: candidate excluded
  }
  Tensor window = gather_window(f_l, box.y0, box.x0, box.side, box.side);
  Tensor pooled = spatial_mean(window);  // [C]
  Tensor geom = Tensor::from({3}, {prior.r, prior.cx, prior.cy});
  Tensor input = reshape(concat0(pooled, geom), {1, head.in_dim});
  Tensor hidden = relu(add(matmul(input, head.w1), reshape(head.b1, {1, 32})));
  Tensor score = add(matmul(hidden, head.w2), reshape(head.b2, {1, 1}));
  return reshape(score, {1});
}

std::vector<int> topk_filter(const std::vector<real>& scores, int k) {
  if (k < 1) throw std::invalid_argument("topk_filter: K must be >= 1");
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (std::isfinite(scores[static_cast<std::size_t>(i)])) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });  // stable: ties keep lower index first
  if (static_cast<int>(order.size()) > k) order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

Tensor expand_scores(const std::vector<Tensor>& selected_scores, const std::vector<int>& indices,
                     int n) {
  if (selected_scores.size() != indices.size())
    throw std::invalid_argument("expand_scores: score/index length mismatch");
  if (indices.empty()) return Tensor::zeros({n});  // empty selection: zero row (flagged upstream)
  std::vector<Tensor> cols;
  cols.reserve(selected_scores.size());
  for (const Tensor& s : selected_scores) cols.push_back(reshape(s, {1, 1}));
  Tensor packed = reshape(concat_cols(cols), {static_cast<int>(cols.size())});
  Tensor soft = softmax(packed);
  return scatter_vec(soft, indices, n);
}

std::pair<Tensor, int> aggregate_confidence(const std::vector<Tensor>& rows,
                                            const std::vector<real>& alpha) {
  if (rows.empty() || rows.size() != alpha.size())
    throw std::invalid_argument("aggregate_confidence: rows/alpha mismatch");
  for (real a : alpha)
    if (a < 0) throw std::invalid_argument("aggregate_confidence: negative layer weight");
  Tensor s;
  for (std::size_t l = 0; l < rows.size(); ++l) {
    Tensor term = mul_scalar(rows[l], alpha[l]);
    s = s.defined() ? add(s, term) : term;
  }
  auto sv = s.data();
  int r_star = -1;
  real best = 0;
  bool any = false;
  for (int i = 0; i < s.numel(); ++i) {
    if (sv[static_cast<std::size_t>(i)] != 0) any = true;
    if (r_star < 0 || sv[static_cast<std::size_t>(i)] > best) {
      best = sv[static_cast<std::size_t>(i)];
      r_star = i;
    }
  }
  if (!any) r_star = -1;  // all-zero S: R* undefined, caller forces fallback
  return {s, r_star};
}

Stability stability_check(std::span<const real> s, real tau1, real tau2) {
  Stability st;
  if (s.empty()) throw std::invalid_argument("stability_check: empty S");
  if (s.size() == 1) {
    st.delta_gap = s[0];
    st.entropy = 0;
  } else {
    real top1 = kNegInf, top2 = kNegInf;
    for (real v : s) {
      if (v > top1) {
        top2 = top1;
        top1 = v;
      } else if (v > top2) {
        top2 = v;
      }
    }
    st.delta_gap = top1 - top2;
    // entropy of softmax(S), natural log
    real mx = top1;
    real z = 0;
    for (real v : s) z += std::exp(v - mx);
    real ent = 0;
    for (real v : s) {
      real p = std::exp(v - mx) / z;
      if (p > 0) ent -= p * std::log(p);
    }
    st.entropy = ent;
  }
  st.fallback = st.delta_gap < tau1 || st.entropy > tau2;
  return st;
}

ConfidenceRecord decide(const std::vector<Tensor>& features, const PriorTemplateSet& priors,
                        const TopKSchedule& schedule, const std::vector<ScorerHead>& heads,
                        const HtkThresholds& thresholds, const std::vector<real>& alpha_in) {
  const int levels = static_cast<int>(features.size());
  if (levels < 1) throw std::invalid_argument("decide: need at least one layer");
  if (schedule.levels() != levels || static_cast<int>(heads.size()) != levels)
    throw std::invalid_argument("decide: schedule/head count mismatch");
  const int n = static_cast<int>(priors.priors.size());
  if (n < 1) throw std::invalid_argument("decide: empty prior set");

  ConfidenceRecord record;
  record.n = n;
  record.alpha = alpha_in;
  if (record.alpha.empty()) record.alpha.assign(static_cast<std::size_t>(levels), real(1) / levels);
  if (static_cast<int>(record.alpha.size()) != levels)
    throw std::invalid_argument("decide: alpha length mismatch");
  record.layers.resize(static_cast<std::size_t>(levels));

  // coarsest (layer L) scores all N; each finer layer rescores T^(l+1)
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;

  for (int layer = levels; layer >= 1; --layer) {
    LayerDecision& ld = record.layers[static_cast<std::size_t>(layer - 1)];
    ld.layer = layer;
    ld.scored = pool;

    std::vector<Tensor> score_tensors;     // finite scores, aligned with finite_idx
    std::vector<int> finite_idx;           // global indices of finite scores
    std::vector<real> dense(pool.size(), kNegInf);
    for (std::size_t j = 0; j < pool.size(); ++j) {
      auto score = score_candidate(features[static_cast<std::size_t>(layer - 1)],
                                   priors.priors[static_cast<std::size_t>(pool[j])],
                                   heads[static_cast<std::size_t>(layer - 1)]);
      if (score) {
        dense[j] = score->item();
        score_tensors.push_back(*score);
        finite_idx.push_back(pool[j]);
      }
    }
    ld.raw_scores = dense;

    std::vector<int> local = topk_filter(dense, schedule.k_at(layer));
    std::vector<int> selected;
    std::vector<Tensor> selected_scores;
    for (int pos : local) {
      selected.push_back(pool[static_cast<std::size_t>(pos)]);
      // map pool position -> finite score tensor position
      auto it = std::find(finite_idx.begin(), finite_idx.end(), pool[static_cast<std::size_t>(pos)]);
      selected_scores.push_back(score_tensors[static_cast<std::size_t>(it - finite_idx.begin())]);
    }
    ld.selected = selected;
    ld.expanded = expand_scores(selected_scores, selected, n);

    pool = selected;  // next (finer) layer rescores T^(l); empty stays empty
  }

  std::vector<Tensor> rows;
  for (const LayerDecision& ld : record.layers) rows.push_back(ld.expanded);
  auto [s, r_star] = aggregate_confidence(rows, record.alpha);
  record.aggregate = s;
  record.r_star = r_star;

  Stability st = stability_check(s.data(), thresholds.tau1, thresholds.tau2_for(n));
  record.delta_gap = st.delta_gap;
  record.entropy = st.entropy;
  record.fallback = st.fallback || r_star < 0;
  record.locked = !record.fallback && record.delta_gap > thresholds.tau_lock;
  return record;
}

std::string record_to_json(const ConfidenceRecord& record) {
  nlohmann::ordered_json j;
  j["n"] = record.n;
  j["r_star"] = record.r_star;
  j["delta_gap"] = record.delta_gap;
  j["entropy"] = record.entropy;
  j["fallback"] = record.fallback;
  j["locked"] = record.locked;
  j["alpha"] = record.alpha;
  if (record.aggregate.defined())
    j["S"] = std::vector<real>(record.aggregate.data().begin(), record.aggregate.data().end());
  else
    j["S"] = nlohmann::ordered_json::array();
  j["layers"] = nlohmann::ordered_json::array();
  for (const LayerDecision& ld : record.layers) {
    nlohmann::ordered_json lj;
    lj["layer"] = ld.layer;
    lj["scored"] = ld.scored;
    nlohmann::ordered_json scores = nlohmann::ordered_json::array();
    for (real v : ld.raw_scores) {
      if (std::isfinite(v))
        scores.push_back(v);
      else
        scores.push_back(nullptr);  // degenerate candidate
    }
    lj["scores"] = scores;
    lj["selected"] = ld.selected;
    if (ld.expanded.defined())
      lj["expanded"] = std::vector<real>(ld.expanded.data().begin(), ld.expanded.data().end());
    j["layers"].push_back(lj);
  }
  return j.dump(2) + "\n";
}

bool fallback_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  return j.at("fallback").get<bool>();
}

}  // namespace pgr
