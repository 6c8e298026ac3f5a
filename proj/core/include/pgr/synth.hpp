#pragma once

#include <string>
#include <vector>

#include "pgr/image_io.hpp"
#include "pgr/random.hpp"

namespace pgr {

struct SynthConfig {
  int cases = 200;
  int size = 64;
  std::uint64_t seed = 7;
};

struct SynthCaseTruth {
  std::string case_id;
  int mode_size = 0;    // planted size at 160 scale (24 or 40)
  int size_px = 0;      // realized bbox side at the generated resolution
  double cx = 0, cy = 0;  // normalized center
  int cluster = 0;      // 0: small-lesion cluster, 1: large-lesion cluster
  bool has_distractor = false;
  double distractor_cx = 0, distractor_cy = 0;
};

struct SynthCase {
  std::string case_id;
  ImageGrid image;  // values in [0,255]
  LabelGrid mask;   // binary
  SynthCaseTruth truth;
};

// Elliptical lesions on a dim circular "brain" over black background.
// Size mode 24@160 is planted near (0.35, 0.40), mode 40@160 near (0.65, 0.60);
// sizes rescale with the output resolution.
//
// Most cases also carry a lesion-identical distractor blob at the OTHER
// cluster's location (image only, never in the mask). Its size matches the
// lesion, i.e. it mismatches its own location's size mode, so appearance
// alone cannot separate lesion from distractor; the (size, location)
// coupling that the ROI priors capture can.
SynthCase make_synth_case(int index, const SynthConfig& cfg, Rng& rng);

// Writes DIR/images/case_XXXX.pgm, DIR/masks/case_XXXX.pgm and DIR/meta.json
// (generator parameters + per-case truth for oracle checks).
void generate_synth_dataset(const std::string& dir, const SynthConfig& cfg);

struct Sample {
  std::string case_id;
  ImageGrid image;
  LabelGrid mask;
};

// Loads DIR/images + DIR/masks pairs sorted by case id.
std::vector<Sample> load_dataset(const std::string& dir);

}  // namespace pgr
