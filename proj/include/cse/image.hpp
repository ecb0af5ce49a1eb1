#pragma once

// Image loading/saving and the resizing helpers the pipeline needs.
// Images travel through the engine as 3xHxW float tensors in [0,1].
// Supported on disk: PNG (8-bit gray/RGB/RGBA, non-interlaced) and
// binary PPM/PGM. JPEG files are discovered but cannot be decoded by
// this build; loading one raises PersistenceError.

#include <string>
#include <vector>

#include "cse/tensor.hpp"

namespace cse {

Tensor load_image(const std::string& path);

// tensor must be 3xHxW, 1xHxW or HxW; values clamped to [0,1].
void save_png(const std::string& path, const Tensor& image);

bool has_image_extension(const std::string& path);

// Recursive discovery, sorted lexicographically for index stability.
std::vector<std::string> list_images_recursive(const std::string& dir);

// Scale to cover the target box, then center-crop to exactly h x w.
Tensor resize_cover_crop(const Tensor& image, int h, int w);

Tensor center_crop(const Tensor& image, int h, int w);

} // namespace cse
