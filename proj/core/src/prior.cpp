#include "pgr/prior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace pgr {

std::vector<Component> connected_components(const LabelGrid& mask,
                                            const std::vector<int>& foreground_labels) {
  if (foreground_labels.empty()) throw std::invalid_argument("connected_components: no foreground labels");
  const int H = mask.height, W = mask.width;
  bool fg_lut[256] = {};
  for (int l : foreground_labels) {
    if (l < 0 || l > 255) throw std::invalid_argument("connected_components: bad label");
    fg_lut[l] = true;
  }

  std::vector<int> owner(static_cast<std::size_t>(H) * W, -1);
  std::vector<Component> comps;
  std::vector<int> stack;

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      std::size_t idx = static_cast<std::size_t>(y) * W + x;
      if (owner[idx] >= 0 || !fg_lut[mask.labels[idx]]) continue;

      int id = static_cast<int>(comps.size());
      Component comp;
      comp.x_min = comp.x_max = x;
      comp.y_min = comp.y_max = y;
      owner[idx] = id;
      stack.assign(1, static_cast<int>(idx));
      int area = 0;
      while (!stack.empty()) {
        int p = stack.back();
        stack.pop_back();
        int py = p / W, px = p % W;
        ++area;
        comp.x_min = std::min(comp.x_min, px);
        comp.x_max = std::max(comp.x_max, px);
        comp.y_min = std::min(comp.y_min, py);
        comp.y_max = std::max(comp.y_max, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            int ny = py + dy, nx = px + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            std::size_t nidx = static_cast<std::size_t>(ny) * W + nx;
            if (owner[nidx] < 0 && fg_lut[mask.labels[nidx]]) {
              owner[nidx] = id;
              stack.push_back(static_cast<int>(nidx));
            }
          }
        }
      }
      comp.h = comp.y_max - comp.y_min + 1;
      comp.w = comp.x_max - comp.x_min + 1;
      comp.s = std::max(comp.h, comp.w);
      comp.cx = real(comp.x_min + comp.x_max) / 2;
      comp.cy = real(comp.y_min + comp.y_max) / 2;
      comp.area = area;
      comps.push_back(comp);
    }
  }
  return comps;
}

std::vector<Component> filter_components(const std::vector<Component>& comps, int s_min) {
  if (s_min < 1) throw std::invalid_argument("filter_components: s_min must be >= 1");
  std::vector<Component> out;
  for (const Component& c : comps)
    if (c.s >= s_min) out.push_back(c);
  return out;
}

ScaleDistribution scale_distribution(const std::vector<Component>& comps, int s_valid) {
  ScaleDistribution dist;
  for (const Component& c : comps) {
    if (c.s >= s_valid) {
      dist.sizes.push_back(c.s);
      ++dist.histogram[c.s];
    }
  }
  return dist;
}

std::vector<int> detect_peaks(const ScaleDistribution& dist, int d_min, int n_peaks) {
  if (d_min < 1 || n_peaks < 1) throw std::invalid_argument("detect_peaks: bad d_min or N");
  if (dist.histogram.empty()) return {};

  int lo = dist.histogram.begin()->first;
  int hi = dist.histogram.rbegin()->first;
  int bins = hi - lo + 1;
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (auto [size, count] : dist.histogram) counts[static_cast<std::size_t>(size - lo)] = count;

  // Moving average, window 3 truncated at the array ends: the raw Dirac-sum
  // histogram is too noisy for spacing-constrained maxima, and zero padding
  // would push boundary maxima inward.
  std::vector<double> smooth(static_cast<std::size_t>(bins));
  for (int i = 0; i < bins; ++i) {
    double acc = counts[static_cast<std::size_t>(i)];
    int n = 1;
    if (i > 0) {
      acc += counts[static_cast<std::size_t>(i - 1)];
      ++n;
    }
    if (i + 1 < bins) {
      acc += counts[static_cast<std::size_t>(i + 1)];
      ++n;
    }
    smooth[static_cast<std::size_t>(i)] = acc / n;
  }

  struct Candidate {
    int size;
    double height;
  };
  std::vector<Candidate> candidates;
  for (int i = 0; i < bins; ++i) {
    double v = smooth[static_cast<std::size_t>(i)];
    bool left_ok = i == 0 || v > smooth[static_cast<std::size_t>(i - 1)];
    bool right_ok = i + 1 == bins || v > smooth[static_cast<std::size_t>(i + 1)];
    if (left_ok && right_ok) candidates.push_back({lo + i, v});
  }
  if (candidates.empty()) {
    // flat/plateau histogram: fall back to the global smoothed maximum
    int best = 0;
    for (int i = 1; i < bins; ++i)
      if (smooth[static_cast<std::size_t>(i)] > smooth[static_cast<std::size_t>(best)]) best = i;
    candidates.push_back({lo + best, smooth[static_cast<std::size_t>(best)]});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.height != b.height) return a.height > b.height;
    return a.size < b.size;  // tie-break: smaller size wins
  });

  std::vector<int> peaks;
  for (const Candidate& c : candidates) {
    bool spaced = true;
    for (int p : peaks)
      if (std::abs(p - c.size) < d_min) {
        spaced = false;
        break;
      }
    if (spaced) {
      peaks.push_back(c.size);
      if (static_cast<int>(peaks.size()) == n_peaks) break;
    }
  }
  return peaks;
}

PriorTemplateSet cluster_centers(const std::vector<Component>& comps, const std::vector<int>& peaks,
                                 const PriorParams& params) {
  if (peaks.empty()) throw std::invalid_argument("cluster_centers: no peaks");
  PriorTemplateSet set;
  set.params = params;

  int min_support = std::max(
      1, static_cast<int>(std::ceil(params.min_support_frac * static_cast<double>(comps.size()))));
  const double radius2 =
      static_cast<double>(params.neighbor_radius) * static_cast<double>(params.neighbor_radius);

  for (int peak : peaks) {
    // members of this peak's size bin
    std::vector<const Component*> members;
    for (const Component& c : comps)
      if (std::abs(c.s - peak) < params.d_min) members.push_back(&c);
    if (members.empty()) continue;

    // single-linkage clustering with the neighborhood radius
    std::vector<int> cluster(members.size(), -1);
    int n_clusters = 0;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (cluster[i] >= 0) continue;
      int id = n_clusters++;
      cluster[i] = id;
      stack.assign(1, i);
      while (!stack.empty()) {
        std::size_t j = stack.back();
        stack.pop_back();
        for (std::size_t k = 0; k < members.size(); ++k) {
          if (cluster[k] >= 0) continue;
          double dx = members[j]->cx - members[k]->cx;
          double dy = members[j]->cy - members[k]->cy;
          if (dx * dx + dy * dy <= radius2) {
            cluster[k] = id;
            stack.push_back(k);
          }
        }
      }
    }

    for (int id = 0; id < n_clusters; ++id) {
      double sum_x = 0, sum_y = 0;
      int count = 0;
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (cluster[i] != id) continue;
        sum_x += members[i]->cx;
        sum_y += members[i]->cy;
        ++count;
      }
      if (count < min_support) continue;
      RoiPrior prior;
      prior.peak_size = peak;
      prior.r = static_cast<real>(peak) / params.height;
      prior.cx = static_cast<real>(sum_x / count / params.width);
      prior.cy = static_cast<real>(sum_y / count / params.height);
      prior.support = count;
      set.priors.push_back(prior);
    }
  }

  std::sort(set.priors.begin(), set.priors.end(), [](const RoiPrior& a, const RoiPrior& b) {
    if (a.support != b.support) return a.support > b.support;
    if (a.peak_size != b.peak_size) return a.peak_size < b.peak_size;
    if (a.cx != b.cx) return a.cx < b.cx;
    return a.cy < b.cy;
  });
  if (static_cast<int>(set.priors.size()) > params.n_priors) set.priors.resize(params.n_priors);
  set.empty_warning = set.priors.empty();
  return set;
}

ExtractStatus extract_priors(const std::vector<LabelGrid>& corpus, const PriorParams& params,
                             const std::vector<int>& foreground_labels) {
  if (corpus.empty()) throw std::invalid_argument("extract_priors: empty corpus");
  ExtractStatus status;
  status.set.params = params;

  std::vector<Component> all;
  for (const LabelGrid& mask : corpus) {
    std::vector<Component> comps = connected_components(mask, foreground_labels);
    all.insert(all.end(), comps.begin(), comps.end());
  }
  std::vector<Component> kept = filter_components(all, params.s_min);
  if (kept.empty()) {
    status.set.empty_warning = true;
    return status;
  }
  ScaleDistribution dist = scale_distribution(kept, params.s_valid);
  std::vector<int> peaks = detect_peaks(dist, params.d_min, params.n_priors);
  if (peaks.empty()) {
    status.set.empty_warning = true;
    return status;
  }
  // Corpus-order independence: peak binning and clustering see components in
  // a canonical order.
  std::sort(kept.begin(), kept.end(), [](const Component& a, const Component& b) {
    if (a.cy != b.cy) return a.cy < b.cy;
    if (a.cx != b.cx) return a.cx < b.cx;
    return a.s < b.s;
  });
  status.set = cluster_centers(kept, peaks, params);
  status.ok = !status.set.priors.empty();
  return status;
}

std::string priors_to_json(const PriorTemplateSet& set) {
  nlohmann::ordered_json j;
  j["params"] = {{"s_min", set.params.s_min},
                 {"s_valid", set.params.s_valid},
                 {"d_min", set.params.d_min},
                 {"neighbor_radius", set.params.neighbor_radius},
                 {"N", set.params.n_priors},
                 {"H", set.params.height},
                 {"W", set.params.width}};
  j["priors"] = nlohmann::ordered_json::array();
  for (const RoiPrior& p : set.priors) {
    j["priors"].push_back({{"r", p.r},
                           {"cx", p.cx},
                           {"cy", p.cy},
                           {"peak_size", p.peak_size},
                           {"support", p.support}});
  }
  return j.dump(2) + "\n";
}

PriorTemplateSet priors_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  PriorTemplateSet set;
  const auto& params = j.at("params");
  set.params.s_min = params.at("s_min").get<int>();
  set.params.s_valid = params.at("s_valid").get<int>();
  set.params.d_min = params.at("d_min").get<int>();
  set.params.neighbor_radius = params.at("neighbor_radius").get<int>();
  set.params.n_priors = params.at("N").get<int>();
  set.params.height = params.at("H").get<int>();
  set.params.width = params.at("W").get<int>();
  for (const auto& p : j.at("priors")) {
    RoiPrior prior;
    prior.r = p.at("r").get<real>();
    prior.cx = p.at("cx").get<real>();
    prior.cy = p.at("cy").get<real>();
    prior.peak_size = p.at("peak_size").get<int>();
    prior.support = p.at("support").get<int>();
    set.priors.push_back(prior);
  }
  return set;
}

PriorTemplateSet load_priors(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open priors: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return priors_from_json(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed priors JSON in " + path + ": " + e.what());
  }
}

void save_priors(const PriorTemplateSet& set, const std::string& path) {
  atomic_write_file(path, priors_to_json(set));
}

}  // namespace pgr
