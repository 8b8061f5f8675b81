#pragma once

#include <cstdint>
#include <string>

#include "dpcqa/tensor.hpp"

namespace dpcqa {

// Binary PPM (P6) and PGM (P5), maxval 255 only. Images load as float
// tensors scaled to [0,1]; masks stay uint8 label grids (0 = background,
// k = instance id). Parse failures report the byte offset.

struct GrayImage {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> v;

    uint8_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
    uint8_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
};

TensorPtr<float> load_ppm(const std::string& path);        // [3 x H x W]
void save_ppm(const std::string& path, const Tensor<float>& img);

GrayImage load_pgm(const std::string& path);
void save_pgm(const std::string& path, const GrayImage& img);

// single-channel float plane in [0,1] -> 8-bit PGM, round half up
void save_pgm_float(const std::string& path, const Tensor<float>& plane);

}  // namespace dpcqa
