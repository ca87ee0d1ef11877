#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gridflow {

// Writes an 8-bit RGB PNG. `pixels` is row-major, 3 bytes per pixel.
void write_png_rgb8(const std::filesystem::path& path, int width, int height,
                    const std::vector<uint8_t>& pixels);

}  // namespace gridflow
