#pragma once

#include <cat/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace cat {

/// Binary P5 grayscale, maxval 255, min-max scaled. A constant map (including
/// the degenerate min == max case) writes a single gray level.
template <typename T>
void write_pgm(const std::string& path, const T* data, int h, int w) {
  check(h > 0 && w > 0, "write_pgm: empty image");
  T lo = data[0], hi = data[0];
  for (std::int64_t i = 1; i < std::int64_t(h) * w; ++i) {
    lo = std::min(lo, data[i]);
    hi = std::max(hi, data[i]);
  }
  const double range = double(hi) - double(lo);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "write_pgm: cannot open " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  for (std::int64_t i = 0; i < std::int64_t(h) * w; ++i) {
    double v = range > 0 ? (double(data[i]) - double(lo)) / range : 0.0;
    long byte = std::lround(255.0 * v);
    f.put(static_cast<char>(std::clamp(byte, 0L, 255L)));
  }
  check(f.good(), "write_pgm: write failed for " + path);
}

}  // namespace cat
