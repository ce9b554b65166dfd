#pragma once

#include <filesystem>

#include "mvdet/image.hpp"

namespace mvdet {

// Reads an RGB image. Supported formats: PNG and binary PPM (P6), chosen by
// file extension. Grayscale/paletted/alpha PNGs are converted to 8-bit RGB.
ImageBuffer read_image(const std::filesystem::path& path);

// Writes an RGB image as PNG or binary PPM depending on the extension.
// Output bytes are a pure function of the pixel data.
void write_image(const ImageBuffer& image, const std::filesystem::path& path);

}  // namespace mvdet
