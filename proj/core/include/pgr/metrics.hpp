#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pgr/image_io.hpp"

namespace pgr {

// Binary H x W raster for one region (WT/TC/ET).
struct RegionMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;  // {0,1}

  bool at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
  bool empty_mask() const {
    for (auto v : values)
      if (v) return false;
    return true;
  }
};

// BraTS region composition from a label grid.
// WT = {1,2,4}, TC = {1,4}, ET = {4}; binary masks use WT = {1}.
RegionMask region_mask(const LabelGrid& mask, const std::string& region);
std::vector<std::string> regions_for(const LabelGrid& gt);  // {"WT"} or {"WT","TC","ET"}

// 2TP / (FP + 2TP + FN); both-empty convention -> 1.0.
double dice(const RegionMask& pred, const RegionMask& gt);

struct Hd95Result {
  double value = 0;
  bool sentinel = false;  // an empty mask was substituted with the diagonal
};

// 95th percentile (linear interpolation) of bidirectional boundary
// nearest-neighbor distances, 8-neighborhood boundaries, pixel units.
Hd95Result hd95(const RegionMask& pred, const RegionMask& gt);

// Boundary pixels: mask pixels with an off-mask (or off-image) 8-neighbor.
std::vector<std::pair<int, int>> boundary_pixels(const RegionMask& mask);

struct CaseMetrics {
  std::string case_id;
  std::string region;
  double dice = 0;
  double hd95 = 0;
  bool hd95_sentinel = false;
  std::optional<bool> fallback;  // from the decision sidecar when present
};

struct EvaluateResult {
  std::vector<CaseMetrics> rows;
  std::vector<std::string> skipped;  // unmatched case ids
  // per-region means, slice-level pooling
  std::vector<std::string> regions;
  std::vector<double> mean_dice;
  std::vector<double> mean_hd95;
  double fallback_rate = 0;  // over cases with a decision sidecar
  bool has_fallback = false;
};

EvaluateResult evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir);

// CSV: case_id,region,dice,hd95,fallback_rate. Per-case rows carry the 0/1
// flag (empty without a sidecar); "mean" rows carry the aggregate rate.
std::string evaluate_csv(const EvaluateResult& result);

}  // namespace pgr
