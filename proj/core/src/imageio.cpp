#include "umami/imageio.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace umami {

namespace {

// Reads one PNM header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      break;
    }
  }
  while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
  return tok;
}

long pnm_number(std::istream& in, const std::string& path) {
  std::string tok = pnm_token(in);
  auto v = parse_double(tok);
  if (!v || *v != static_cast<long>(*v) || *v < 0)
    throw DataError("malformed PNM header in " + path);
  return static_cast<long>(*v);
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_mask_pgm(const std::string& path, const MaskImage& mask) {
  if (mask.values.size() != static_cast<std::size_t>(mask.height * mask.width) || mask.height <= 0 || mask.width <= 0)
    throw DataError("write_mask_pgm: inconsistent mask");
  std::string bytes = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  bytes.reserve(bytes.size() + mask.values.size());
  for (std::uint8_t v : mask.values) bytes.push_back(static_cast<char>(v ? 255 : 0));
  write_file_atomic(path, bytes);
}

MaskImage read_mask_pgm(const std::string& path) {
  std::string bytes = read_file(path);
  std::istringstream in(bytes);
  if (pnm_token(in) != "P5") throw DataError("not a binary PGM: " + path);
  long w = pnm_number(in, path);
  long h = pnm_number(in, path);
  long maxval = pnm_number(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw DataError("bad PGM dimensions: " + path);
  // exactly one whitespace byte separates header and raster
  MaskImage mask;
  mask.width = w;
  mask.height = h;
  mask.values.resize(static_cast<std::size_t>(w * h));
  std::streampos pos = in.tellg();
  if (pos < 0) throw DataError("truncated PGM: " + path);
  std::size_t offset = static_cast<std::size_t>(pos);
  if (bytes.size() < offset + mask.values.size()) throw DataError("truncated PGM raster: " + path);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    mask.values[i] = bytes[offset + i] ? 1 : 0;
  return mask;
}

void write_image_ppm(const std::string& path, const RgbImage& image) {
  if (image.values.size() != static_cast<std::size_t>(image.height * image.width * 3) || image.height <= 0)
    throw DataError("write_image_ppm: inconsistent image");
  std::string bytes = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  bytes.append(reinterpret_cast<const char*>(image.values.data()), image.values.size());
  write_file_atomic(path, bytes);
}

RgbImage read_image_ppm(const std::string& path) {
  std::string bytes = read_file(path);
  std::istringstream in(bytes);
  if (pnm_token(in) != "P6") throw DataError("not a binary PPM: " + path);
  long w = pnm_number(in, path);
  long h = pnm_number(in, path);
  long maxval = pnm_number(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("bad PPM dimensions: " + path);
  RgbImage img;
  img.width = w;
  img.height = h;
  img.values.resize(static_cast<std::size_t>(w * h * 3));
  std::streampos pos = in.tellg();
  if (pos < 0) throw DataError("truncated PPM: " + path);
  std::size_t offset = static_cast<std::size_t>(pos);
  if (bytes.size() < offset + img.values.size()) throw DataError("truncated PPM raster: " + path);
  std::copy(bytes.begin() + static_cast<long>(offset), bytes.begin() + static_cast<long>(offset + img.values.size()),
            img.values.begin());
  return img;
}

std::vector<long> rle_encode(const MaskImage& mask) {
  std::vector<long> counts;
  std::uint8_t current = 0;  // runs start with background by convention
  long run = 0;
  for (std::uint8_t v : mask.values) {
    std::uint8_t b = v ? 1 : 0;
    if (b == current) {
      ++run;
    } else {
      counts.push_back(run);
      current = b;
      run = 1;
    }
  }
  counts.push_back(run);
  return counts;
}

MaskImage rle_decode(long height, long width, const std::vector<long>& counts) {
  if (height <= 0 || width <= 0) throw DataError("rle_decode: bad dimensions");
  MaskImage mask;
  mask.height = height;
  mask.width = width;
  mask.values.reserve(static_cast<std::size_t>(height * width));
  std::uint8_t current = 0;
  for (long c : counts) {
    if (c < 0) throw DataError("rle_decode: negative run");
    for (long i = 0; i < c; ++i) mask.values.push_back(current);
    current = current ? 0 : 1;
  }
  if (mask.values.size() != static_cast<std::size_t>(height * width))
    throw DataError("rle_decode: counts do not sum to height*width");
  return mask;
}

}  // namespace umami
