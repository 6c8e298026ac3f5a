#include "pgr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "pgr/random.hpp"

namespace pgr {

namespace {

std::string case_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d", index);
  return buf;
}

}  // namespace

SynthCase make_synth_case(int index, const SynthConfig& cfg, Rng& rng) {
  const int S = cfg.size;
  const double scale = S / 160.0;

  SynthCase out;
  out.case_id = case_name(index);
  out.image.height = out.image.width = S;
  out.image.channels = 1;
  out.image.values.assign(static_cast<std::size_t>(S) * S, 0);
  out.mask.height = out.mask.width = S;
  out.mask.labels.assign(static_cast<std::size_t>(S) * S, 0);

  // size mode coupled to a spatial cluster; one lesion per case
  const bool small_mode = index % 2 == 0;
  const int mode160 = small_mode ? 24 : 40;
  const double cx_mode = small_mode ? 0.35 : 0.65;
  const double cy_mode = small_mode ? 0.40 : 0.60;

  int size160 = mode160 + std::clamp(static_cast<int>(std::lround(rng.normal())), -2, 2);
  int size_px = std::max(4, static_cast<int>(std::lround(size160 * scale)));
  double cx = cx_mode + rng.normal() * (3.2 / 160.0);
  double cy = cy_mode + rng.normal() * (3.2 / 160.0);
  // keep the lesion inside the brain disk
  double margin = (size_px / 2.0 + 2) / S;
  cx = std::clamp(cx, margin, 1.0 - margin);
  cy = std::clamp(cy, margin, 1.0 - margin);

  // brain disk
  const double bc = S / 2.0;
  const double brain_r = S * 0.47;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double dx = x + 0.5 - bc, dy = y + 0.5 - bc;
      if (dx * dx + dy * dy <= brain_r * brain_r)
        out.image.at(0, y, x) = static_cast<real>(std::clamp(90.0 + 25.0 * rng.normal(), 30.0, 160.0));
    }

  // axis-aligned ellipse, major axis horizontal so bbox max side == size_px
  const double ax = size_px / 2.0;
  const double ay = ax * rng.uniform(0.6, 1.0);
  const double ex = cx * S, ey = cy * S;
  int realized_x_min = S, realized_x_max = -1, realized_y_min = S, realized_y_max = -1;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double dx = (x + 0.5 - ex) / ax, dy = (y + 0.5 - ey) / ay;
      if (dx * dx + dy * dy <= 1.0) {
        out.mask.at(y, x) = 1;
        out.image.at(0, y, x) = static_cast<real>(std::clamp(205.0 + 18.0 * rng.normal(), 170.0, 255.0));
        realized_x_min = std::min(realized_x_min, x);
        realized_x_max = std::max(realized_x_max, x);
        realized_y_min = std::min(realized_y_min, y);
        realized_y_max = std::max(realized_y_max, y);
      }
    }

  // Lesion-identical distractor at a random brain location outside both
  // prior regions (image only). Appearance carries no cue; only the ROI
  // geometry separates it from the lesion.
  if (rng.uniform() < 0.85) {
    const int dmode = rng.uniform() < 0.5 ? 24 : 40;
    int dsize = std::max(4, static_cast<int>(std::lround(
                                (dmode + std::clamp(static_cast<int>(std::lround(rng.normal())), -2, 2)) * scale)));
    const double dax = dsize / 2.0;
    const double day = dax * rng.uniform(0.6, 1.0);
    // prior disk exclusion: both cluster regions at their mode radii
    const double ra = (24.0 * scale) / 2.0, rb = (40.0 * scale) / 2.0;
    const double ax_c = 0.35 * S, ay_c = 0.40 * S;
    const double bx_c = 0.65 * S, by_c = 0.60 * S;
    double dcx = 0, dcy = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      dcx = rng.uniform(margin, 1.0 - margin);
      dcy = rng.uniform(margin, 1.0 - margin);
      double px = dcx * S, py = dcy * S;
      double to_brain = std::hypot(px - bc, py - bc);
      if (to_brain + dax > brain_r - 1) continue;  // keep inside the brain
      if (std::hypot(px - ax_c, py - ay_c) < ra + dax + 3) continue;
      if (std::hypot(px - bx_c, py - by_c) < rb + dax + 3) continue;
      if (std::hypot(px - ex, py - ey) < ax + dax + 3) continue;  // off the lesion
      placed = true;
    }
    if (placed) {
      const double dex = dcx * S, dey = dcy * S;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          double dx = (x + 0.5 - dex) / dax, dy = (y + 0.5 - dey) / day;
          if (dx * dx + dy * dy <= 1.0)
            out.image.at(0, y, x) = static_cast<real>(std::clamp(205.0 + 18.0 * rng.normal(), 170.0, 255.0));
        }
      out.truth.has_distractor = true;
      out.truth.distractor_cx = dcx;
      out.truth.distractor_cy = dcy;
    }
  }

  out.truth.case_id = out.case_id;
  out.truth.mode_size = mode160;
  out.truth.size_px = realized_x_max >= realized_x_min
                          ? std::max(realized_x_max - realized_x_min + 1, realized_y_max - realized_y_min + 1)
                          : 0;
  out.truth.cx = cx;
  out.truth.cy = cy;
  out.truth.cluster = small_mode ? 0 : 1;
  return out;
}

void generate_synth_dataset(const std::string& dir, const SynthConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.cases < 1 || cfg.size < 16) throw std::invalid_argument("generate_synth_dataset: bad config");
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  Rng rng(cfg.seed);
  nlohmann::ordered_json meta;
  meta["cases"] = cfg.cases;
  meta["size"] = cfg.size;
  meta["seed"] = cfg.seed;
  meta["size_modes"] = {24, 40};
  meta["cluster_centers"] = {{0.35, 0.40}, {0.65, 0.60}};
  meta["truth"] = nlohmann::ordered_json::array();

  for (int i = 0; i < cfg.cases; ++i) {
    SynthCase c = make_synth_case(i, cfg, rng);
    write_pgm(c.image, (fs::path(dir) / "images" / (c.case_id + ".pgm")).string());
    write_pgm(c.mask, (fs::path(dir) / "masks" / (c.case_id + ".pgm")).string());
    meta["truth"].push_back({{"case_id", c.truth.case_id},
                             {"mode_size", c.truth.mode_size},
                             {"size_px", c.truth.size_px},
                             {"cx", c.truth.cx},
                             {"cy", c.truth.cy},
                             {"cluster", c.truth.cluster},
                             {"has_distractor", c.truth.has_distractor},
                             {"distractor_cx", c.truth.distractor_cx},
                             {"distractor_cy", c.truth.distractor_cy}});
  }
  atomic_write_file((fs::path(dir) / "meta.json").string(), meta.dump(2) + "\n");
}

std::vector<Sample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path images = fs::path(dir) / "images";
  fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw std::runtime_error("dataset directory must contain images/ and masks/: " + dir);

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());

  std::vector<Sample> samples;
  samples.reserve(ids.size());
  for (const std::string& id : ids) {
    fs::path mask_path = masks / (id + ".pgm");
    if (!fs::exists(mask_path)) throw std::runtime_error("missing mask for case " + id);
    Sample s;
    s.case_id = id;
    s.image = read_pgm_image((images / (id + ".pgm")).string());
    s.mask = read_pgm_mask(mask_path.string());
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace pgr
