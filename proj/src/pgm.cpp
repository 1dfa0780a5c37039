#include "tvb/pgm.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "tvb/errors.hpp"

namespace tvb {

void write_pgm(const std::string& path, const DenseTensor& image) {
    if (image.order() != 2) throw DimensionError("PGM output requires a 2-D tensor");
    const Index rows = image.shape()[0], cols = image.shape()[1];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << cols << " " << rows << "\n255\n";
    std::vector<unsigned char> raster(static_cast<size_t>(rows * cols));
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            double v = std::min(1.0, std::max(0.0, image.at({r, c})));
            raster[static_cast<size_t>(r * cols + c)] =
                static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    out.write(reinterpret_cast<const char*>(raster.data()),
              static_cast<std::streamsize>(raster.size()));
    if (!out) throw IoError("failed writing " + path);
}

namespace {

/// Next whitespace-separated token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

} // namespace

DenseTensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    if (next_token(in) != "P5") throw IoError(path + ": not a binary PGM file");
    Index cols = 0, rows = 0, maxval = 0;
    try {
        cols = std::stol(next_token(in));
        rows = std::stol(next_token(in));
        maxval = std::stol(next_token(in));
    } catch (const std::exception&) {
        throw IoError(path + ": malformed PGM header");
    }
    if (cols < 1 || rows < 1) throw IoError(path + ": invalid image dimensions");
    if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
    // next_token consumed the single whitespace byte after the header.
    std::vector<unsigned char> raster(static_cast<size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size()))
        throw IoError(path + ": truncated pixel data");
    DenseTensor img(Shape{rows, cols});
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
            img.at({r, c}) = double(raster[static_cast<size_t>(r * cols + c)]) / 255.0;
    return img;
}

} // namespace tvb
