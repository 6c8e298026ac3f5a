#include "pgr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pgr/htk.hpp"

namespace pgr {

RegionMask region_mask(const LabelGrid& mask, const std::string& region) {
  std::set<int> labels;
  if (region == "WT")
    labels = {1, 2, 4};
  else if (region == "TC")
    labels = {1, 4};
  else if (region == "ET")
    labels = {4};
  else
    throw std::invalid_argument("unknown region: " + region);
  RegionMask out;
  out.height = mask.height;
  out.width = mask.width;
  out.values.resize(mask.labels.size());
  for (std::size_t i = 0; i < mask.labels.size(); ++i)
    out.values[i] = labels.count(mask.labels[i]) ? 1 : 0;
  return out;
}

std::vector<std::string> regions_for(const LabelGrid& gt) {
  bool multi = false;
  for (auto v : gt.labels)
    if (v == 2 || v == 4) {
      multi = true;
      break;
    }
  if (multi) return {"WT", "TC", "ET"};
  return {"WT"};
}

double dice(const RegionMask& pred, const RegionMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("dice: shape mismatch");
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0) return 1.0;  // both empty, flagged convention
  return 2.0 * tp / static_cast<double>(fp + 2 * tp + fn);
}

std::vector<std::pair<int, int>> boundary_pixels(const RegionMask& mask) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      bool boundary = false;
      for (int dy = -1; dy <= 1 && !boundary; ++dy)
        for (int dx = -1; dx <= 1 && !boundary; ++dx) {
          if (!dy && !dx) continue;
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= mask.height || nx < 0 || nx >= mask.width || !mask.at(ny, nx))
            boundary = true;
        }
      if (boundary) out.emplace_back(y, x);
    }
  return out;
}

namespace {

// linear-interpolation percentile of an unsorted sample
double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  double rank = q * static_cast<double>(values.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  std::size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = rank - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

std::vector<double> directed_nn_distances(const std::vector<std::pair<int, int>>& from,
                                          const std::vector<std::pair<int, int>>& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (auto [ay, ax] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (auto [by, bx] : to) {
      double dy = ay - by, dx = ax - bx;
      double d2 = dy * dy + dx * dx;
      if (d2 < best) best = d2;
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace

Hd95Result hd95(const RegionMask& pred, const RegionMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("hd95: shape mismatch");
  Hd95Result res;
  if (pred.empty_mask() || gt.empty_mask()) {
    res.sentinel = true;
    res.value = std::sqrt(static_cast<double>(pred.height) * pred.height +
                          static_cast<double>(pred.width) * pred.width);
    return res;
  }
  auto sa = boundary_pixels(pred);
  auto sb = boundary_pixels(gt);
  double ab = percentile(directed_nn_distances(sa, sb), 0.95);
  double ba = percentile(directed_nn_distances(sb, sa), 0.95);
  res.value = std::max(ab, ba);
  return res;
}

namespace {

std::map<std::string, std::filesystem::path> mask_files(const std::string& dir) {
  namespace fs = std::filesystem;
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
    out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

std::string format_metric(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

EvaluateResult evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir) {
  namespace fs = std::filesystem;
  auto preds = mask_files(pred_dir);
  auto gts = mask_files(gt_dir);

  EvaluateResult result;
  for (const auto& [id, path] : preds)
    if (!gts.count(id)) result.skipped.push_back(id);
  for (const auto& [id, path] : gts)
    if (!preds.count(id)) result.skipped.push_back(id);

  int fallback_cases = 0, decided_cases = 0;
  std::map<std::string, std::pair<double, double>> region_totals;
  std::map<std::string, int> region_counts;

  for (const auto& [id, gt_path] : gts) {
    auto pit = preds.find(id);
    if (pit == preds.end()) continue;
    LabelGrid gt = read_pgm_mask(gt_path.string());
    LabelGrid pred = read_pgm_mask(pit->second.string());

    std::optional<bool> fallback;
    fs::path sidecar = pit->second;
    sidecar.replace_extension(".decision.json");
    if (fs::exists(sidecar)) {
      std::ifstream f(sidecar);
      std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      fallback = fallback_from_json(text);
      ++decided_cases;
      if (*fallback) ++fallback_cases;
    }

    for (const std::string& region : regions_for(gt)) {
      RegionMask pm = region_mask(pred, region);
      RegionMask gm = region_mask(gt, region);
      CaseMetrics row;
      row.case_id = id;
      row.region = region;
      row.dice = dice(pm, gm);
      Hd95Result h = hd95(pm, gm);
      row.hd95 = h.value;
      row.hd95_sentinel = h.sentinel;
      row.fallback = fallback;
      result.rows.push_back(row);

      auto& totals = region_totals[region];
      totals.first += row.dice;
      totals.second += row.hd95;
      ++region_counts[region];
    }
  }

  for (const auto& [region, totals] : region_totals) {
    result.regions.push_back(region);
    result.mean_dice.push_back(totals.first / region_counts[region]);
    result.mean_hd95.push_back(totals.second / region_counts[region]);
  }
  result.has_fallback = decided_cases > 0;
  result.fallback_rate = decided_cases ? static_cast<double>(fallback_cases) / decided_cases : 0.0;
  return result;
}

std::string evaluate_csv(const EvaluateResult& result) {
  std::ostringstream os;
  os << "case_id,region,dice,hd95,fallback_rate\n";
  for (const CaseMetrics& row : result.rows) {
    os << row.case_id << "," << row.region << "," << format_metric(row.dice) << ","
       << format_metric(row.hd95) << ",";
    if (row.fallback) os << (*row.fallback ? 1 : 0);
    os << "\n";
  }
  for (std::size_t i = 0; i < result.regions.size(); ++i) {
    os << "mean," << result.regions[i] << "," << format_metric(result.mean_dice[i]) << ","
       << format_metric(result.mean_hd95[i]) << ",";
    if (result.has_fallback) os << format_metric(result.fallback_rate);
    os << "\n";
  }
  return os.str();
}

}  // namespace pgr
