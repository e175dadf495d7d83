#ifndef PREFUSION_IO_HPP
#define PREFUSION_IO_HPP

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefusion/errors.hpp"
#include "prefusion/geom.hpp"

namespace prefusion::io {

namespace fs = std::filesystem;

/// Shortest text form that parses back to the same double.
inline std::string format_number(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// --- float maps -------------------------------------------------------------
// "FMAP <width> <height>\n" followed by width * height little-endian float32, row-major.

inline std::uint32_t to_little_endian(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big)
    return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
  return x;
}

inline void write_fmap(const fs::path& path, const SparseDepthMap& m) {
  std::string data = "FMAP " + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n";
  const std::size_t header = data.size();
  data.resize(header + 4 * m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(m[i])));
    std::memcpy(data.data() + header + 4 * i, &bits, 4);
  }
  write_text(path, data);
}

inline SparseDepthMap read_fmap(const fs::path& path) {
  const std::string data = read_text(path);
  const auto nl = data.find('\n');
  if (nl == std::string::npos || data.compare(0, 5, "FMAP ") != 0)
    throw IoError(path.string() + ": not an FMAP file");
  std::istringstream header(data.substr(5, nl - 5));
  long w = -1, h = -1;
  header >> w >> h;
  if (!header || w <= 0 || h <= 0) throw IoError(path.string() + ": bad FMAP header");
  SparseDepthMap m(static_cast<int>(w), static_cast<int>(h));
  if (data.size() != nl + 1 + 4 * m.size()) throw IoError(path.string() + ": truncated FMAP data");
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, data.data() + nl + 1 + 4 * i, 4);
    m[i] = std::bit_cast<float>(to_little_endian(bits));
  }
  return m;
}

// --- grayscale images ---------------------------------------------------------

struct RenderRange {
  double min = 0.0;
  double max = 0.0;
};

/// 8-bit min-max normalization; a constant map renders as 128.
inline std::vector<std::uint8_t> normalize_gray(const SparseDepthMap& m, RenderRange* range) {
  const auto [lo, hi] = std::minmax_element(m.depth().begin(), m.depth().end());
  const RenderRange r{m.size() ? *lo : 0.0, m.size() ? *hi : 0.0};
  if (range) *range = r;
  std::vector<std::uint8_t> px(m.size(), 128);
  if (r.max > r.min)
    for (std::size_t i = 0; i < m.size(); ++i)
      px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (m[i] - r.min) / (r.max - r.min)));
  return px;
}

inline fs::path range_sidecar(const fs::path& image) {
  fs::path p = image;
  p += ".range";
  return p;
}

/// Binary PGM plus "<image>.range" holding "min max".
inline RenderRange write_pgm(const fs::path& path, const SparseDepthMap& m) {
  RenderRange r;
  const std::vector<std::uint8_t> px = normalize_gray(m, &r);
  std::string data =
      "P5\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n";
  data.append(px.begin(), px.end());
  write_text(path, data);
  write_text(range_sidecar(path), format_number(r.min) + " " + format_number(r.max) + "\n");
  return r;
}

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

inline GrayImage read_pgm(const fs::path& path) {
  const std::string data = read_text(path);
  std::istringstream in(data);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
    throw IoError(path.string() + ": unsupported PGM");
  const auto offset = static_cast<std::size_t>(in.tellg()) + 1;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (data.size() != offset + n) throw IoError(path.string() + ": truncated PGM");
  GrayImage img{w, h, std::vector<std::uint8_t>(data.begin() + offset, data.end())};
  return img;
}

// --- CSV ----------------------------------------------------------------------

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw IoError("CSV row has the wrong number of cells");
    for (std::size_t i = 0; i < cells.size(); ++i) text_ += (i ? "," : "") + cells[i];
    text_ += "\n";
  }

  const std::string& str() const { return text_; }
  void save(const fs::path& path) const { write_text(path, text_); }

 private:
  std::size_t columns_;
  std::string text_;
};

}  // namespace prefusion::io

#endif  // PREFUSION_IO_HPP
