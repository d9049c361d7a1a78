#ifndef SPIDER_IMAGEIO_HPP
#define SPIDER_IMAGEIO_HPP

#include <string>

#include "spider/tensor.hpp"

namespace spider {

// Binary PPM (P6) and PGM (P5), maxval 255. Values map [0,1] <-> 0..255.
void write_ppm(const std::string& path, const TensorPtr<float>& image);  // [3,H,W]
TensorPtr<float> read_ppm(const std::string& path);

void write_pgm(const std::string& path, const TensorPtr<float>& map);  // [1,H,W]
TensorPtr<float> read_pgm(const std::string& path);

}  // namespace spider

#endif
