#pragma once

#include <string>

#include "tvb/tensor.hpp"

namespace tvb {

/// Binary (P5) grayscale image with maxval 255. Values are clamped to [0, 1]
/// and quantized to round(v * 255); the raster is written row by row, so the
/// tensor shape is {rows, cols}.
void write_pgm(const std::string& path, const DenseTensor& image);

/// Inverse of write_pgm: pixel p maps to p / 255.
DenseTensor read_pgm(const std::string& path);

} // namespace tvb
