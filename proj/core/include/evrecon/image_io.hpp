#pragma once

#include <array>
#include <string>

#include "evrecon/image.hpp"

namespace evrecon {

// PGM P5, 8-bit. Values are clamped to [0,1] and quantized to 0..255 on
// write; reads divide by the stored maxval.
void write_pgm(const std::string& path, const ImageF& image);
ImageF read_pgm(const std::string& path);

// PFM grayscale float ("Pf"). Written little-endian with scale -1.0,
// bottom-up scanline order per the format. Reads honor the endianness
// encoded in the scale sign.
void write_pfm(const std::string& path, const ImageF& image);
ImageF read_pfm(const std::string& path);

// Three-channel PFM ("PF"), used for normal maps.
void write_pfm_color(const std::string& path, const ImageF& r, const ImageF& g,
                     const ImageF& b);
std::array<ImageF, 3> read_pfm_color(const std::string& path);

enum class ImageFileFormat { Pgm, Pfm };

// Dispatches on the magic number. Throws UnsupportedImageFormat for
// anything that is not P5/Pf.
ImageF read_image_auto(const std::string& path, ImageFileFormat* format = nullptr);

}  // namespace evrecon
