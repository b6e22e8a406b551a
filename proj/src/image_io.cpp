#include "hybridmap/image_io.hpp"

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

namespace hmap {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warning_handler(png_structp, png_const_charp) {}

// libpng reports errors by longjmp; the jump targets below never cross a live C++ destructor.
void write_png(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
               const std::vector<std::vector<png_byte>>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: failed to encode " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct DecodedPng {
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<std::vector<png_byte>> rows;
};

DecodedPng read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
    png_infop info = png_create_info_struct(png);
    DecodedPng out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: failed to decode " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    out.color_type = png_get_color_type(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    out.rows.assign(out.height, std::vector<png_byte>(rowbytes));
    for (auto& row : out.rows) png_read_row(png, row.data(), nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

} // namespace

void write_depth_png(const std::filesystem::path& path, const DepthImage& depth) {
    std::vector<std::vector<png_byte>> rows(depth.height(), std::vector<png_byte>(depth.width() * 2));
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            const double d = depth(x, y);
            std::uint16_t mm = 0;
            if (is_valid_depth(d)) {
                const double r = std::round(d * 1000.0);
                mm = r > 65535.0 ? 0 : static_cast<std::uint16_t>(r);
            }
            rows[y][2 * x] = static_cast<png_byte>(mm >> 8); // PNG samples are big-endian
            rows[y][2 * x + 1] = static_cast<png_byte>(mm & 0xff);
        }
    }
    write_png(path, depth.width(), depth.height(), 16, PNG_COLOR_TYPE_GRAY, rows);
}

DepthImage read_depth_png(const std::filesystem::path& path) {
    const DecodedPng png = read_png(path);
    if (png.bit_depth != 16 || png.color_type != PNG_COLOR_TYPE_GRAY)
        throw IoError(path.string() + ": expected 16-bit grayscale depth");
    DepthImage depth(png.width, png.height, kInvalidDepth);
    for (int y = 0; y < png.height; ++y) {
        for (int x = 0; x < png.width; ++x) {
            const unsigned mm = (unsigned(png.rows[y][2 * x]) << 8) | png.rows[y][2 * x + 1];
            if (mm != 0) depth(x, y) = mm / 1000.0;
        }
    }
    return depth;
}

void write_mask_png(const std::filesystem::path& path, const MaskImage& mask) {
    std::vector<std::vector<png_byte>> rows(mask.height(), std::vector<png_byte>(mask.width()));
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) rows[y][x] = mask(x, y) ? 255 : 0;
    write_png(path, mask.width(), mask.height(), 8, PNG_COLOR_TYPE_GRAY, rows);
}

MaskImage read_mask_png(const std::filesystem::path& path) {
    const DecodedPng png = read_png(path);
    if (png.bit_depth != 8 || png.color_type != PNG_COLOR_TYPE_GRAY)
        throw IoError(path.string() + ": expected 8-bit grayscale mask");
    MaskImage mask(png.width, png.height, 0);
    for (int y = 0; y < png.height; ++y)
        for (int x = 0; x < png.width; ++x) mask(x, y) = png.rows[y][x] >= 128 ? 1 : 0;
    return mask;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& rgb) {
    std::vector<std::vector<png_byte>> rows(rgb.height(), std::vector<png_byte>(rgb.width() * 3));
    for (int y = 0; y < rgb.height(); ++y) {
        for (int x = 0; x < rgb.width(); ++x) {
            rows[y][3 * x] = rgb(x, y).r;
            rows[y][3 * x + 1] = rgb(x, y).g;
            rows[y][3 * x + 2] = rgb(x, y).b;
        }
    }
    write_png(path, rgb.width(), rgb.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
    const DecodedPng png = read_png(path);
    if (png.bit_depth != 8 || png.color_type != PNG_COLOR_TYPE_RGB)
        throw IoError(path.string() + ": expected 8-bit RGB");
    RgbImage rgb(png.width, png.height);
    for (int y = 0; y < png.height; ++y)
        for (int x = 0; x < png.width; ++x)
            rgb(x, y) = {png.rows[y][3 * x], png.rows[y][3 * x + 1], png.rows[y][3 * x + 2]};
    return rgb;
}

} // namespace hmap
