#include "scouter/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

namespace scouter {

namespace fs = std::filesystem;

void write_pgm(const fs::path& path, const Eigen::MatrixXd& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "P5\n" << values.cols() << ' ' << values.rows() << "\n255\n";
  for (Index y = 0; y < values.rows(); ++y)
    for (Index x = 0; x < values.cols(); ++x)
      out.put(char(std::lround(std::clamp(values(y, x), 0.0, 1.0) * 255.0)));
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(const std::vector<unsigned char>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos])) tok += char(b[pos++]);
  return tok;
}

}  // namespace

Eigen::MatrixXd read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  const std::vector<unsigned char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t pos = 0;
  const std::string magic = next_token(b, pos);
  if (magic != "P5" && magic != "P2") throw DatasetError(path.string() + ": not a PGM file");
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(next_token(b, pos));
    h = std::stol(next_token(b, pos));
    maxval = std::stol(next_token(b, pos));
  } catch (const std::exception&) {
    throw DatasetError(path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval >= 65536) throw DatasetError(path.string() + ": bad PGM dimensions");
  Eigen::MatrixXd m(h, w);
  if (magic == "P5") {
    ++pos;  // single whitespace after maxval
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    if (b.size() < pos + std::size_t(w * h) * bytes) throw DatasetError(path.string() + ": truncated PGM");
    for (long i = 0; i < w * h; ++i) {
      const std::size_t at = pos + std::size_t(i) * bytes;
      const unsigned v = bytes == 1 ? b[at] : (unsigned(b[at]) << 8 | b[at + 1]);
      m(i / w, i % w) = double(v) / double(maxval);
    }
  } else {
    for (long i = 0; i < w * h; ++i) {
      const std::string tok = next_token(b, pos);
      if (tok.empty()) throw DatasetError(path.string() + ": truncated PGM");
      m(i / w, i % w) = std::stod(tok) / double(maxval);
    }
  }
  return m;
}

Image read_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw DatasetError(path.string() + ": " + png.message);
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DatasetError(path.string() + ": " + png.message);
  }
  Image im(png.height, png.width, color ? 3 : 1);
  for (std::size_t i = 0; i < buf.size(); ++i) im.pixels[Index(i)] = double(buf[i]) / 255.0;
  return im;
}

Image read_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") {
    const Eigen::MatrixXd m = read_pgm(path);
    Image im(m.rows(), m.cols(), 1);
    for (Index y = 0; y < m.rows(); ++y)
      for (Index x = 0; x < m.cols(); ++x) im.at(y, x) = m(y, x);
    return im;
  }
  throw DatasetError(path.string() + ": unsupported image type");
}

RegionMask read_mask_pgm(const fs::path& path) { return (read_pgm(path).array() >= 0.5); }

}  // namespace scouter
