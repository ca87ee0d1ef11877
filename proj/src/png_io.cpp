#include "png_io.hpp"

#include <zlib.h>

#include "util.hpp"

namespace gridflow {

static void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

static void put_chunk(std::vector<uint8_t>& out, const char type[4], const uint8_t* data, size_t n) {
    put_be32(out, uint32_t(n));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (n) out.insert(out.end(), data, data + n);
    uint32_t crc = crc32(0, out.data() + start, uInt(4 + n));
    put_be32(out, crc);
}

void write_png_rgb8(const std::filesystem::path& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
    check(width > 0 && height > 0, ErrCode::dimension, "png dimensions must be positive");
    check(pixels.size() == size_t(width) * height * 3, ErrCode::dimension,
          "png pixel buffer size mismatch");

    // filter byte 0 in front of each scanline
    std::vector<uint8_t> raw(size_t(height) * (size_t(width) * 3 + 1));
    for (int y = 0; y < height; ++y) {
        uint8_t* row = raw.data() + size_t(y) * (size_t(width) * 3 + 1);
        row[0] = 0;
        std::memcpy(row + 1, pixels.data() + size_t(y) * width * 3, size_t(width) * 3);
    }

    uLongf comp_cap = compressBound(uLong(raw.size()));
    std::vector<uint8_t> comp(comp_cap);
    int rc = compress2(comp.data(), &comp_cap, raw.data(), uLong(raw.size()), 6);
    check(rc == Z_OK, ErrCode::io, "zlib compression failed");
    comp.resize(comp_cap);

    std::vector<uint8_t> out;
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);

    uint8_t ihdr[13];
    ihdr[0] = uint8_t(uint32_t(width) >> 24);
    ihdr[1] = uint8_t(uint32_t(width) >> 16);
    ihdr[2] = uint8_t(uint32_t(width) >> 8);
    ihdr[3] = uint8_t(width);
    ihdr[4] = uint8_t(uint32_t(height) >> 24);
    ihdr[5] = uint8_t(uint32_t(height) >> 16);
    ihdr[6] = uint8_t(uint32_t(height) >> 8);
    ihdr[7] = uint8_t(height);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter
    ihdr[12] = 0;  // interlace
    put_chunk(out, "IHDR", ihdr, 13);
    put_chunk(out, "IDAT", comp.data(), comp.size());
    put_chunk(out, "IEND", nullptr, 0);

    write_file_bytes(path, out.data(), out.size());
}

}  // namespace gridflow
