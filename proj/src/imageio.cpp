#include "spider/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "spider/errors.hpp"

namespace spider {

namespace {

uint8_t to_byte(float v) {
  const float scaled = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
  return static_cast<uint8_t>(scaled);
}

// skips whitespace and '#' comments, then reads one unsigned integer
int64_t read_pnm_int(std::ifstream& is, const std::string& path) {
  int ch = is.get();
  while (is && (std::isspace(ch) || ch == '#')) {
    if (ch == '#')
      while (is && is.get() != '\n') {
      }
    ch = is.get();
  }
  if (!is || !std::isdigit(ch)) throw IoError("malformed PNM header in '" + path + "'");
  int64_t value = 0;
  while (is && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = is.get();
  }
  return value;
}

void check_magic(std::ifstream& is, const std::string& path, const char* magic) {
  char m[2];
  is.read(m, 2);
  if (!is || m[0] != magic[0] || m[1] != magic[1])
    throw IoError("'" + path + "' is not a " + std::string(magic) + " file");
}

}  // namespace

void write_ppm(const std::string& path, const TensorPtr<float>& image) {
  if (image->rank() != 3 || image->dim(0) != 3)
    throw DimensionError("write_ppm expects [3,H,W], got " + shape_str(image->shape()));
  const int64_t H = image->dim(1), W = image->dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P6\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(W * 3));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[x * 3 + c] = to_byte(image->data()[(c * H + y) * W + x]);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

TensorPtr<float> read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image '" + path + "'");
  check_magic(is, path, "P6");
  const int64_t W = read_pnm_int(is, path);
  const int64_t H = read_pnm_int(is, path);
  const int64_t maxval = read_pnm_int(is, path);
  if (maxval != 255) throw IoError("'" + path + "' maxval must be 255");
  auto image = make_tensor<float>({3, H, W});
  std::vector<uint8_t> row(static_cast<size_t>(W * 3));
  for (int64_t y = 0; y < H; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!is) throw IoError("'" + path + "' truncated");
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        image->data()[(c * H + y) * W + x] = row[x * 3 + c] / 255.0f;
  }
  return image;
}

void write_pgm(const std::string& path, const TensorPtr<float>& map) {
  if (map->rank() != 3 || map->dim(0) != 1)
    throw DimensionError("write_pgm expects [1,H,W], got " + shape_str(map->shape()));
  const int64_t H = map->dim(1), W = map->dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P5\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(W));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) row[x] = to_byte(map->data()[y * W + x]);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

TensorPtr<float> read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image '" + path + "'");
  check_magic(is, path, "P5");
  const int64_t W = read_pnm_int(is, path);
  const int64_t H = read_pnm_int(is, path);
  const int64_t maxval = read_pnm_int(is, path);
  if (maxval != 255) throw IoError("'" + path + "' maxval must be 255");
  auto map = make_tensor<float>({1, H, W});
  std::vector<uint8_t> row(static_cast<size_t>(W));
  for (int64_t y = 0; y < H; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!is) throw IoError("'" + path + "' truncated");
    for (int64_t x = 0; x < W; ++x) map->data()[y * W + x] = row[x] / 255.0f;
  }
  return map;
}

}  // namespace spider
