#pragma once

#include <string>

#include "camoseg/tensor.hpp"

namespace camoseg::io {

// PNG round-trips through OpenCV. Images are [3,H,W] (or [1,H,W]) in [0,1].
Tensor read_image(const std::string& path);
void write_image(const std::string& path, const Tensor& image);

// grayscale map rescaled to [0,255] (constant maps write as 0)
void write_gray(const std::string& path, const Tensor& map2d);

// bilinear resize helper for plain tensors [C,H,W]
Tensor resize_image(const Tensor& image, int64_t h, int64_t w);
// nearest-neighbor for masks [H,W]
Tensor resize_mask_nearest(const Tensor& mask, int64_t h, int64_t w);

}  // namespace camoseg::io
