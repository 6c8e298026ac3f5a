#pragma once

#include <map>
#include <string>
#include <vector>

#include "pgr/image_io.hpp"

namespace pgr {

// Maximal 8-connected foreground component with its bounding box statistics.
// x is the column axis, y the row axis; centers are in pixel coordinates.
struct Component {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // inclusive
  int h = 0, w = 0;
  int s = 0;  // max(h, w)
  real cx = 0, cy = 0;
  int area = 0;
};

struct ScaleDistribution {
  std::vector<int> sizes;        // multiset of valid side lengths
  std::map<int, int> histogram;  // count per integer size

  double frequency(int size) const {
    auto it = histogram.find(size);
    return sizes.empty() || it == histogram.end()
               ? 0.0
               : static_cast<double>(it->second) / static_cast<double>(sizes.size());
  }
};

struct RoiPrior {
  real r = 0;        // peak_size / H
  real cx = 0;       // normalized center (x/W, y/H)
  real cy = 0;
  int peak_size = 0;
  int support = 0;   // member count of the spatial cluster
};

struct PriorParams {
  int s_min = 10;
  int s_valid = 20;
  int d_min = 5;
  int neighbor_radius = 30;
  int n_priors = 10;
  int height = 160;
  int width = 160;
  double min_support_frac = 0.01;  // of the filtered component count
};

struct PriorTemplateSet {
  std::vector<RoiPrior> priors;  // sorted by descending support
  PriorParams params;
  bool empty_warning = false;
};

std::vector<Component> connected_components(const LabelGrid& mask,
                                            const std::vector<int>& foreground_labels);
std::vector<Component> filter_components(const std::vector<Component>& comps, int s_min);
ScaleDistribution scale_distribution(const std::vector<Component>& comps, int s_valid);

// Strict local maxima of the smoothed histogram (moving average, window 3),
// greedily accepted by descending smoothed frequency (ties: smaller size)
// subject to pairwise spacing >= d_min; at most n_peaks returned.
std::vector<int> detect_peaks(const ScaleDistribution& dist, int d_min, int n_peaks);

PriorTemplateSet cluster_centers(const std::vector<Component>& comps,
                                 const std::vector<int>& peaks, const PriorParams& params);

struct ExtractStatus {
  PriorTemplateSet set;
  bool ok = false;  // false when the corpus yielded no valid components
};

ExtractStatus extract_priors(const std::vector<LabelGrid>& corpus, const PriorParams& params,
                             const std::vector<int>& foreground_labels = {1, 2, 4});

// JSON schema:
// {"params":{"s_min":10,...},"priors":[{"r":0.25,"cx":0.5,"cy":0.43,
//  "peak_size":40,"support":812}, ...]}
std::string priors_to_json(const PriorTemplateSet& set);
PriorTemplateSet priors_from_json(const std::string& text);
PriorTemplateSet load_priors(const std::string& path);
void save_priors(const PriorTemplateSet& set, const std::string& path);

}  // namespace pgr
