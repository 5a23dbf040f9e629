#ifndef DIFFEDIT_IMAGE_IO_HPP
#define DIFFEDIT_IMAGE_IO_HPP

#include <fstream>
#include <string>
#include <vector>

#include "diffedit/error.hpp"
#include "diffedit/tensor.hpp"

namespace diffedit {

// Binary portable graymap (P5) / pixmap (P6), maxval 255, row-major.
// Values are clamped to [0,1] and quantized at write time.

inline unsigned char quantize_byte(double v) {
    double c = std::min(1.0, std::max(0.0, v));
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

inline void write_pgm(const std::string& path, const Tensor& img) {
    require(img.ndim() == 2, ErrorKind::invalid_shape, "write_pgm: expected [H,W]");
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "write_pgm: cannot open " + path);
    f << "P5\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
    for (double v : img.data) {
        unsigned char b = quantize_byte(v);
        f.write(reinterpret_cast<const char*>(&b), 1);
    }
    require(f.good(), ErrorKind::io, "write_pgm: write failed for " + path);
}

inline void write_ppm(const std::string& path, const Tensor& img) {
    require(img.ndim() == 3 && img.shape[2] == 3, ErrorKind::invalid_shape,
            "write_ppm: expected [H,W,3]");
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "write_ppm: cannot open " + path);
    f << "P6\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
    for (double v : img.data) {
        unsigned char b = quantize_byte(v);
        f.write(reinterpret_cast<const char*>(&b), 1);
    }
    require(f.good(), ErrorKind::io, "write_ppm: write failed for " + path);
}

inline Tensor read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "read_pnm: cannot open " + path);
    std::string magic;
    f >> magic;
    require(magic == "P5" || magic == "P6", ErrorKind::io, "read_pnm: not a binary PGM/PPM");
    auto next_int = [&f, &path]() {
        // skip whitespace and '#' comment lines
        int c = f.peek();
        while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else {
                f.get();
            }
            c = f.peek();
        }
        int v = 0;
        f >> v;
        require(f.good(), ErrorKind::io, "read_pnm: truncated header in " + path);
        return v;
    };
    int64_t w = next_int(), h = next_int(), maxval = next_int();
    require(maxval == 255, ErrorKind::io, "read_pnm: only maxval 255 is supported");
    f.get();  // single whitespace after maxval
    int64_t channels = (magic == "P6") ? 3 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(w * h * channels));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(f.gcount() == static_cast<std::streamsize>(buf.size()), ErrorKind::io,
            "read_pnm: truncated pixel data in " + path);
    Tensor img(channels == 1 ? std::vector<int64_t>{h, w} : std::vector<int64_t>{h, w, 3});
    for (size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<double>(buf[i]) / 255.0;
    return img;
}

// Tile equally sized grayscale images into one canvas with 1-px separators;
// cells ordered row-major.
inline Tensor image_grid(const std::vector<Tensor>& cells, int columns, double gap_value = 1.0) {
    require(!cells.empty() && columns >= 1, ErrorKind::contract, "image_grid: nothing to lay out");
    int64_t H = cells[0].shape[0], W = cells[0].shape[1];
    int rows = static_cast<int>((cells.size() + static_cast<size_t>(columns) - 1) /
                                static_cast<size_t>(columns));
    Tensor canvas = full({rows * (H + 1) - 1, columns * (W + 1) - 1}, gap_value);
    for (size_t i = 0; i < cells.size(); ++i) {
        require(cells[i].shape[0] == H && cells[i].shape[1] == W, ErrorKind::invalid_shape,
                "image_grid: cells must share a size");
        int64_t r0 = static_cast<int64_t>(i) / columns * (H + 1);
        int64_t c0 = static_cast<int64_t>(i) % columns * (W + 1);
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) canvas.at(r0 + r, c0 + c) = cells[i].at(r, c);
    }
    return canvas;
}

}  // namespace diffedit

#endif  // DIFFEDIT_IMAGE_IO_HPP
