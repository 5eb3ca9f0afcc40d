#include "hinet/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "hinet/common.hpp"

namespace hinet {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

std::vector<unsigned char> read_rgba8(const std::string& path, int& h, int& w, bool& has_alpha) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    require(fp != nullptr, "load_png: cannot open '" + path + "'");

    unsigned char sig[8];
    require(std::fread(sig, 1, 8, fp.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0,
            "load_png: '" + path + "' is not a PNG file");

    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(r.png != nullptr, "load_png: out of memory");
    r.info = png_create_info_struct(r.png);
    require(r.info != nullptr, "load_png: out of memory");
    if (setjmp(png_jmpbuf(r.png))) fail("load_png: failed to decode '" + path + "'");

    png_init_io(r.png, fp.get());
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);

    const int bit_depth = png_get_bit_depth(r.png, r.info);
    require(bit_depth <= 8, "load_png: unsupported bit depth (" + std::to_string(bit_depth) +
                                ") in '" + path + "'");

    const int color_type = png_get_color_type(r.png, r.info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(r.png);
    png_read_update_info(r.png, r.info);

    h = int(png_get_image_height(r.png, r.info));
    w = int(png_get_image_width(r.png, r.info));
    const int ch = int(png_get_channels(r.png, r.info));
    require(ch == 3 || ch == 4, "load_png: unsupported channel count in '" + path + "'");
    has_alpha = (ch == 4);

    std::vector<unsigned char> pixels(std::size_t(h) * w * ch);
    std::vector<png_bytep> rows(h);
    for (int i = 0; i < h; ++i) rows[i] = pixels.data() + std::size_t(i) * w * ch;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);

    if (!has_alpha) return pixels;
    return pixels;  // caller splits RGBA
}

unsigned char quantize(float v) {
    v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return static_cast<unsigned char>(std::floor(v * 255.f + 0.5f));
}

void write_png8(const std::string& path, const unsigned char* pixels, int h, int w, int ch) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, "save_png: cannot open '" + path + "' for writing");

    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(wr.png != nullptr, "save_png: out of memory");
    wr.info = png_create_info_struct(wr.png);
    require(wr.info != nullptr, "save_png: out of memory");
    if (setjmp(png_jmpbuf(wr.png))) fail("save_png: failed to encode '" + path + "'");

    png_init_io(wr.png, fp.get());
    const int color = (ch == 1) ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(wr.png, wr.info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_bytep> rows(h);
    for (int i = 0; i < h; ++i)
        rows[i] = const_cast<png_bytep>(pixels + std::size_t(i) * w * ch);
    png_write_image(wr.png, rows.data());
    png_write_end(wr.png, nullptr);
}

}  // namespace

LoadedPng load_png(const std::string& path) {
    int h = 0, w = 0;
    bool has_alpha = false;
    const auto pixels = read_rgba8(path, h, w, has_alpha);
    LoadedPng out;
    out.image = Image(h, w);
    const int ch = has_alpha ? 4 : 3;
    if (has_alpha) out.alpha = Mask(h, w);
    const std::size_t n = std::size_t(h) * w;
    for (std::size_t p = 0; p < n; ++p) {
        for (int c = 0; c < 3; ++c)
            out.image.data[p * 3 + c] = float(pixels[p * ch + c]) / 255.f;
        if (has_alpha) out.alpha->data[p] = float(pixels[p * 4 + 3]) / 255.f;
    }
    return out;
}

Mask load_mask_png(const std::string& path) {
    int h = 0, w = 0;
    bool has_alpha = false;
    const auto pixels = read_rgba8(path, h, w, has_alpha);
    const int ch = has_alpha ? 4 : 3;
    Mask m(h, w);
    const std::size_t n = std::size_t(h) * w;
    for (std::size_t p = 0; p < n; ++p) m.data[p] = float(pixels[p * ch]) / 255.f;
    return m;
}

void save_png(const Image& img, const std::string& path) {
    require(img.height >= 1 && img.width >= 1, "save_png: empty image");
    std::vector<unsigned char> pixels(img.data.size());
    for (std::size_t k = 0; k < img.data.size(); ++k) pixels[k] = quantize(img.data[k]);
    write_png8(path, pixels.data(), img.height, img.width, 3);
}

void save_png(const Mask& mask, const std::string& path) {
    require(mask.height >= 1 && mask.width >= 1, "save_png: empty mask");
    std::vector<unsigned char> pixels(mask.data.size());
    for (std::size_t k = 0; k < mask.data.size(); ++k) pixels[k] = quantize(mask.data[k]);
    write_png8(path, pixels.data(), mask.height, mask.width, 1);
}

}  // namespace hinet
