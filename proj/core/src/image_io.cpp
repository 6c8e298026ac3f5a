#include "pgr/image_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pgr {

namespace {

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) continue;
    tok.push_back(static_cast<char>(c));
    while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#') tok.push_back(static_cast<char>(in.get()));
    return tok;
  }
  throw std::runtime_error("PGM: unexpected end of header");
}

struct RawPgm {
  int height = 0, width = 0;
  std::vector<std::uint8_t> bytes;
};

RawPgm read_pgm_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open PGM: " + path);
  std::string magic = next_token(in);
  if (magic == "P2") throw std::runtime_error("PGM: ASCII (P2) variant not supported: " + path);
  if (magic != "P5") throw std::runtime_error("PGM: bad magic '" + magic + "' in " + path);
  int width, height, maxval;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("PGM: malformed header in " + path);
  }
  if (width <= 0 || height <= 0) throw std::runtime_error("PGM: bad dimensions in " + path);
  if (maxval > 255) throw std::runtime_error("PGM: maxval > 255 unsupported in " + path);
  if (maxval <= 0) throw std::runtime_error("PGM: bad maxval in " + path);
  int sep = in.get();  // single whitespace byte terminates the header
  if (sep == EOF || !std::isspace(sep)) throw std::runtime_error("PGM: malformed header in " + path);
  RawPgm out;
  out.width = width;
  out.height = height;
  out.bytes.resize(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(out.bytes.data()), static_cast<std::streamsize>(out.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(out.bytes.size()))
    throw std::runtime_error("PGM: truncated pixel data in " + path);
  return out;
}

std::string pgm_payload(int height, int width, const std::vector<std::uint8_t>& bytes) {
  std::ostringstream os;
  os << "P5\n" << width << " " << height << "\n255\n";
  std::string s = os.str();
  s.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return s;
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

LabelGrid read_pgm_mask(const std::string& path) {
  RawPgm raw = read_pgm_raw(path);
  for (std::uint8_t v : raw.bytes) {
    if (v != 0 && v != 1 && v != 2 && v != 4)
      throw std::runtime_error("mask label " + std::to_string(int(v)) + " outside {0,1,2,4} in " + path);
  }
  return LabelGrid{raw.height, raw.width, std::move(raw.bytes)};
}

ImageGrid read_pgm_image(const std::string& path) {
  RawPgm raw = read_pgm_raw(path);
  ImageGrid img;
  img.height = raw.height;
  img.width = raw.width;
  img.channels = 1;
  img.values.resize(raw.bytes.size());
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) img.values[i] = static_cast<real>(raw.bytes[i]);
  return img;
}

void write_pgm(const LabelGrid& mask, const std::string& path) {
  if (static_cast<std::size_t>(mask.height) * mask.width != mask.labels.size())
    throw std::invalid_argument("LabelGrid raster length mismatch");
  atomic_write_file(path, pgm_payload(mask.height, mask.width, mask.labels));
}

void write_pgm(const ImageGrid& image, const std::string& path) {
  if (image.channels != 1) throw std::invalid_argument("write_pgm expects a single-channel image");
  std::vector<std::uint8_t> bytes(image.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    real v = image.values[i];
    if (v < 0 || v > 255) throw std::invalid_argument("write_pgm: value outside [0,255]");
    bytes[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  atomic_write_file(path, pgm_payload(image.height, image.width, bytes));
}

void write_pgm_bytes(int height, int width, const std::vector<std::uint8_t>& bytes,
                     const std::string& path) {
  if (static_cast<std::size_t>(height) * width != bytes.size())
    throw std::invalid_argument("write_pgm_bytes: raster length mismatch");
  atomic_write_file(path, pgm_payload(height, width, bytes));
}

ZscoreResult zscore_foreground(const ImageGrid& img) {
  ZscoreResult res;
  res.image = img;
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    real* vals = res.image.values.data() + static_cast<std::size_t>(c) * plane;
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (vals[i] != 0) {
        sum += vals[i];
        ++n;
      }
    }
    if (n < 2) {
      res.degenerate = true;
      continue;  // all-background (or single pixel): unchanged
    }
    double mean = sum / static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < plane; ++i)
      if (vals[i] != 0) var += (vals[i] - mean) * (vals[i] - mean);
    var /= static_cast<double>(n);  // population variance
    if (var == 0) {
      // constant foreground: zero-center only
      res.degenerate = true;
      for (std::size_t i = 0; i < plane; ++i)
        if (vals[i] != 0) vals[i] = 0;  // v - mean == 0
      continue;
    }
    double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < plane; ++i)
      if (vals[i] != 0) vals[i] = static_cast<real>((vals[i] - mean) * inv_std);
  }
  return res;
}

CropResult crop_to_roi_frame(const ImageGrid& img, const LabelGrid& mask, int target) {
  if (img.height != mask.height || img.width != mask.width)
    throw std::invalid_argument("crop_to_roi_frame: image/mask extents differ");
  if (target < 1) throw std::invalid_argument("crop_to_roi_frame: bad target");

  CropResult res;
  res.padded = img.height < target || img.width < target;
  // offsets go negative when padding; out-of-range source pixels read 0
  res.offset_y = (img.height - target) / 2;
  res.offset_x = (img.width - target) / 2;

  res.image.height = target;
  res.image.width = target;
  res.image.channels = img.channels;
  res.image.values.assign(static_cast<std::size_t>(img.channels) * target * target, real(0));
  res.mask.height = target;
  res.mask.width = target;
  res.mask.labels.assign(static_cast<std::size_t>(target) * target, 0);

  for (int y = 0; y < target; ++y) {
    int sy = y + res.offset_y;
    if (sy < 0 || sy >= img.height) continue;
    for (int x = 0; x < target; ++x) {
      int sx = x + res.offset_x;
      if (sx < 0 || sx >= img.width) continue;
      for (int c = 0; c < img.channels; ++c) res.image.at(c, y, x) = img.at(c, sy, sx);
      res.mask.at(y, x) = mask.at(sy, sx);
    }
  }
  return res;
}

}  // namespace pgr
