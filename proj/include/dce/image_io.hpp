#pragma once

#include <filesystem>

#include "dce/tensor.hpp"

namespace dce {

// Reads binary PPM (P6), PGM (P5) or PNG into a (1, C, H, W) float32 tensor
// with values in [0, 1]. Grayscale inputs are expanded to 3 channels unless
// keep_gray is set.
Tensor read_image(const std::filesystem::path& path, bool keep_gray = false);

// Writes a 1- or 3-channel image, quantized to 8 bits. The format follows the
// extension: .png, .pgm (1 channel) or anything else as PPM.
void write_image(const std::filesystem::path& path, const Tensor& image);

// Validity mask stored as an 8-bit PGM: nonzero = valid.
Tensor read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Tensor& mask);

}  // namespace dce
