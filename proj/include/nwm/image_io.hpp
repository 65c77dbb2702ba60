#pragma once

#include <filesystem>
#include <vector>

#include "nwm/tensor.hpp"

namespace nwm {

// Decodes a PNG/JPEG as a (1, h, w, 3) RGB tensor in [0, 1]. Throws IoError
// when the file cannot be read or decoded.
Tensor load_image(const std::filesystem::path& path);

// As load_image, then center-crops to the aspect ratio of (height, width)
// and bilinearly resizes. Images already at the target size are returned
// as decoded.
Tensor load_image_fitted(const std::filesystem::path& path, int height, int width);

// Writes a (1, h, w, 3) tensor as an 8-bit RGB PNG, clamping to [0, 1] and
// rounding to the nearest level.
void save_png(const Tensor& image, const std::filesystem::path& path);

// Regular files with a .png/.jpg/.jpeg extension (any case), sorted by name.
// A path naming a single file yields just that file.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& path);

}  // namespace nwm
