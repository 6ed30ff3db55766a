#pragma once

// Binary PGM (P5) for masks, binary PPM (P6) for RGB images, and a run-length
// codec for inlining small masks into record files. All byte-exact: the same
// pixels always produce the same file, which is what golden-file and
// determinism tests lean on.

#include <cstdint>
#include <string>
#include <vector>

#include "umami/datamodel.hpp"

namespace umami {

struct RgbImage {
  long height = 0;
  long width = 0;
  std::vector<std::uint8_t> values;  // row-major, 3 bytes per pixel

  std::uint8_t& at(long r, long c, int ch) { return values[static_cast<std::size_t>((r * width + c) * 3 + ch)]; }
  std::uint8_t at(long r, long c, int ch) const { return values[static_cast<std::size_t>((r * width + c) * 3 + ch)]; }
};

// Masks are stored as 8-bit grayscale: 0 = background, 255 = foreground.
// Any nonzero byte reads back as foreground.
void write_mask_pgm(const std::string& path, const MaskImage& mask);
MaskImage read_mask_pgm(const std::string& path);  // DataError on malformed files

void write_image_ppm(const std::string& path, const RgbImage& image);
RgbImage read_image_ppm(const std::string& path);

// Run-length encoding for inline masks: counts alternate background /
// foreground, starting with a (possibly zero) background run, over the
// row-major flattening. Sum of counts == height*width.
std::vector<long> rle_encode(const MaskImage& mask);
MaskImage rle_decode(long height, long width, const std::vector<long>& counts);  // DataError on bad counts

// Atomic write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);  // DataError if unreadable

}  // namespace umami
