#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgr/tensor.hpp"

namespace pgr {

// 2-D integer label raster. BraTS-convention labels {0,1,2,4} or binary {0,1}.
struct LabelGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;  // row-major

  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
};

// Multi-channel real-valued raster (channels = modalities), channel-major.
struct ImageGrid {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<real> values;

  real at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  real& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Binary PGM (P5), maxval <= 255. Masks are validated against {0,1,2,4}.
LabelGrid read_pgm_mask(const std::string& path);
ImageGrid read_pgm_image(const std::string& path);  // single channel, raw 0..255 values
void write_pgm(const LabelGrid& mask, const std::string& path);
// Values must already be within [0, 255]; they are rounded to u8.
void write_pgm(const ImageGrid& image, const std::string& path);
// Raw raster write used by guidance rendering.
void write_pgm_bytes(int height, int width, const std::vector<std::uint8_t>& bytes,
                     const std::string& path);

struct ZscoreResult {
  ImageGrid image;
  bool degenerate = false;  // constant or absent foreground in some channel
};

// Per-channel standardization of nonzero pixels (population std); background
// pixels stay exactly 0.
ZscoreResult zscore_foreground(const ImageGrid& img);

struct CropResult {
  ImageGrid image;
  LabelGrid mask;
  int offset_y = 0;  // source offset of the crop window (negative when padded)
  int offset_x = 0;
  bool padded = false;
};

// Deterministic center crop of image and mask to target x target; inputs
// smaller than the target are zero-padded first (flagged).
CropResult crop_to_roi_frame(const ImageGrid& img, const LabelGrid& mask, int target = 160);

// Atomic file write helper (temp + rename), shared by the CLI outputs.
void atomic_write_file(const std::string& path, const std::string& bytes);

}  // namespace pgr
