#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acunet/errors.h"

namespace acunet {

struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // row-major, 0..255
};

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // row-major, 3 bytes per pixel
};

// 8-bit grayscale; RGB(A) inputs are converted by channel average.
GrayImage read_png_gray(const std::string& path);

void write_png_gray(const std::string& path, const GrayImage& img);
void write_png_rgb(const std::string& path, const RgbImage& img);

}  // namespace acunet
