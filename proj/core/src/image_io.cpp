#include "evrecon/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  for (;;) {
    const int c = in.get();
    if (c == EOF) break;
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    if (c == '#' && token.empty()) {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

int parse_header_int(std::istream& in, const char* what) {
  const std::string token = next_token(in);
  try {
    size_t used = 0;
    const int value = std::stoi(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw CorruptHeader(std::string("bad ") + what + " field '" + token + "'");
  }
}

uint32_t byteswap32(uint32_t v) {
  return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) |
         (v >> 24);
}

}  // namespace

void write_pgm(const std::string& path, const ImageF& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  out << "P5\n" << image.width() << " " << image.height() << "\n255\n";
  std::vector<unsigned char> row(image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const float v = std::clamp(image(x, y), 0.0f, 1.0f);
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoFailure("write failed: " + path);
}

ImageF read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open image: " + path);
  const std::string magic = next_token(in);
  if (magic != "P5") {
    throw UnsupportedImageFormat("expected P5, got '" + magic + "' in " + path);
  }
  const int w = parse_header_int(in, "width");
  const int h = parse_header_int(in, "height");
  const int maxval = parse_header_int(in, "maxval");
  if (w < 1 || h < 1) throw CorruptHeader("bad dimensions in " + path);
  if (maxval < 1 || maxval > 255) {
    throw UnsupportedImageFormat("only 8-bit PGM supported: " + path);
  }
  ImageF image(w, h, 0.0f);
  std::vector<unsigned char> row(w);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), w);
    if (in.gcount() != w) throw CorruptHeader("truncated PGM data: " + path);
    for (int x = 0; x < w; ++x) {
      image(x, y) = float(row[x]) / float(maxval);
    }
  }
  return image;
}

void write_pfm(const std::string& path, const ImageF& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  out << "Pf\n" << image.width() << " " << image.height() << "\n-1.0\n";
  // PFM stores scanlines bottom-up.
  for (int y = image.height() - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(&image(0, y)),
              sizeof(float) * image.width());
  }
  if (!out) throw IoFailure("write failed: " + path);
}

ImageF read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open image: " + path);
  const std::string magic = next_token(in);
  if (magic == "PF") {
    throw UnsupportedImageFormat("color PFM not supported: " + path);
  }
  if (magic != "Pf") {
    throw UnsupportedImageFormat("expected Pf, got '" + magic + "' in " + path);
  }
  const int w = parse_header_int(in, "width");
  const int h = parse_header_int(in, "height");
  const std::string scale_token = next_token(in);
  double scale = 0.0;
  try {
    scale = std::stod(scale_token);
  } catch (const std::exception&) {
    throw CorruptHeader("bad scale '" + scale_token + "' in " + path);
  }
  if (scale == 0.0 || w < 1 || h < 1) throw CorruptHeader("bad header: " + path);
  const bool little_endian = scale < 0.0;

  ImageF image(w, h, 0.0f);
  std::vector<uint32_t> row(w);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), sizeof(float) * w);
    if (in.gcount() != std::streamsize(sizeof(float) * w)) {
      throw CorruptHeader("truncated PFM data: " + path);
    }
    for (int x = 0; x < w; ++x) {
      uint32_t bits = row[x];
      if (!little_endian) bits = byteswap32(bits);
      float value;
      std::memcpy(&value, &bits, sizeof(float));
      image(x, y) = value;
    }
  }
  return image;
}

void write_pfm_color(const std::string& path, const ImageF& r, const ImageF& g,
                     const ImageF& b) {
  if (r.width() != g.width() || r.width() != b.width() ||
      r.height() != g.height() || r.height() != b.height()) {
    throw std::invalid_argument("channel dimensions differ");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  out << "PF\n" << r.width() << " " << r.height() << "\n-1.0\n";
  for (int y = r.height() - 1; y >= 0; --y) {
    for (int x = 0; x < r.width(); ++x) {
      const float rgb[3] = {r(x, y), g(x, y), b(x, y)};
      out.write(reinterpret_cast<const char*>(rgb), 12);
    }
  }
  if (!out) throw IoFailure("write failed: " + path);
}

std::array<ImageF, 3> read_pfm_color(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open image: " + path);
  const std::string magic = next_token(in);
  if (magic != "PF") {
    throw UnsupportedImageFormat("expected PF, got '" + magic + "' in " + path);
  }
  const int w = parse_header_int(in, "width");
  const int h = parse_header_int(in, "height");
  const std::string scale_token = next_token(in);
  double scale = 0.0;
  try {
    scale = std::stod(scale_token);
  } catch (const std::exception&) {
    throw CorruptHeader("bad scale in " + path);
  }
  if (scale == 0.0 || w < 1 || h < 1) throw CorruptHeader("bad header: " + path);
  const bool little_endian = scale < 0.0;

  std::array<ImageF, 3> channels = {ImageF(w, h, 0.0f), ImageF(w, h, 0.0f),
                                    ImageF(w, h, 0.0f)};
  std::vector<uint32_t> row(3 * w);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), sizeof(float) * 3 * w);
    if (in.gcount() != std::streamsize(sizeof(float) * 3 * w)) {
      throw CorruptHeader("truncated PFM data: " + path);
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        uint32_t bits = row[3 * x + c];
        if (!little_endian) bits = byteswap32(bits);
        float value;
        std::memcpy(&value, &bits, sizeof(float));
        channels[c](x, y) = value;
      }
    }
  }
  return channels;
}

ImageF read_image_auto(const std::string& path, ImageFileFormat* format) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw MissingFile("cannot open image: " + path);
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  probe.close();
  if (magic[0] == 'P' && magic[1] == '5') {
    if (format) *format = ImageFileFormat::Pgm;
    return read_pgm(path);
  }
  if (magic[0] == 'P' && magic[1] == 'f') {
    if (format) *format = ImageFileFormat::Pfm;
    return read_pfm(path);
  }
  throw UnsupportedImageFormat("unrecognized magic in " + path);
}

}  // namespace evrecon
