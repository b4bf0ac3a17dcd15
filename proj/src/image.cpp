#include "image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace salient {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads the next whitespace-delimited header field, skipping '#' comments.
std::size_t header_field(const std::string& s, std::size_t& pos) {
  for (;;) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t start = pos;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
  if (start == pos) fail(ErrorKind::kParse, "ppm: malformed header");
  return std::stoul(s.substr(start, pos - start));
}

}  // namespace

double quantize_255(double v) {
  return static_cast<double>(to_byte(v)) / 255.0;
}

std::string encode_ppm(const Image& image) {
  std::ostringstream os;
  os << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + image.size());
  for (double v : image.pixels()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

Image decode_ppm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    fail(ErrorKind::kParse, "ppm: missing P6 magic");
  }
  std::size_t pos = 2;
  const std::size_t w = header_field(bytes, pos);
  const std::size_t h = header_field(bytes, pos);
  const std::size_t maxval = header_field(bytes, pos);
  if (maxval != 255) fail(ErrorKind::kParse, "ppm: only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  Image img(h, w);
  if (bytes.size() - pos < img.size()) fail(ErrorKind::kParse, "ppm: truncated pixel data");
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.pixels()[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  const std::string bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_ppm(ss.str());
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

std::string encode_pgm(std::size_t height, std::size_t width, const std::vector<double>& gray) {
  if (gray.size() != height * width) fail(ErrorKind::kShape, "pgm: size mismatch");
  std::ostringstream os;
  os << "P5\n" << width << ' ' << height << "\n255\n";
  std::string out = os.str();
  for (double v : gray) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

}  // namespace salient
