#include "homa/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace homa {

Array frame_to_array(const Frame& f) {
    Array a(Shape{f.height, f.width, 3});
    for (std::size_t i = 0; i < f.rgb.size(); ++i) a[static_cast<std::int64_t>(i)] = f.rgb[i] / 127.5 - 1.0;
    return a;
}

Frame array_to_frame(const Array& a) {
    if (a.rank() != 3 || a.dim(2) != 3) throw std::invalid_argument("array_to_frame expects [H,W,3]");
    Frame f(a.dim(0), a.dim(1));
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double v = std::clamp((a[i] + 1.0) * 127.5, 0.0, 255.0);
        f.rgb[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v));
    }
    return f;
}

Array video_to_tensor(const Video& v) {
    if (v.empty()) throw std::invalid_argument("empty video");
    const std::int64_t h = v[0].height, w = v[0].width, n = static_cast<std::int64_t>(v.size());
    Array t(Shape{1, n, h, w, 3});
    for (std::int64_t k = 0; k < n; ++k) {
        if (v[k].height != h || v[k].width != w) throw std::invalid_argument("video frames differ in size");
        for (std::int64_t i = 0; i < h * w * 3; ++i) t[k * h * w * 3 + i] = v[k].rgb[i] / 127.5 - 1.0;
    }
    return t;
}

Video tensor_to_video(const Array& t, std::int64_t b) {
    if (t.rank() != 5 || t.dim(4) != 3) throw std::invalid_argument("tensor_to_video expects [b,n,H,W,3]");
    const std::int64_t n = t.dim(1), h = t.dim(2), w = t.dim(3);
    Video out;
    for (std::int64_t k = 0; k < n; ++k) {
        Array fr(Shape{h, w, 3});
        std::copy_n(t.ptr() + ((b * n + k) * h * w * 3), h * w * 3, fr.ptr());
        out.push_back(array_to_frame(fr));
    }
    return out;
}

namespace io {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};

void write_png_impl(png_structp png, png_infop info, std::int64_t h, std::int64_t w, int bit_depth, int color,
                    const std::vector<png_bytep>& rows) {
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
}

}  // namespace

void write_png(const std::string& path, const Frame& f) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    std::vector<png_bytep> rows(static_cast<std::size_t>(f.height));
    for (std::int64_t r = 0; r < f.height; ++r)
        rows[r] = const_cast<png_bytep>(f.rgb.data() + r * f.width * 3);
    write_png_impl(png, info, f.height, f.width, 8, PNG_COLOR_TYPE_RGB, rows);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> encode_png(const Frame& f) {
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png encode failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
            buf->insert(buf->end(), data, data + len);
        },
        nullptr);
    std::vector<png_bytep> rows(static_cast<std::size_t>(f.height));
    for (std::int64_t r = 0; r < f.height; ++r)
        rows[r] = const_cast<png_bytep>(f.rgb.data() + r * f.width * 3);
    write_png_impl(png, info, f.height, f.width, 8, PNG_COLOR_TYPE_RGB, rows);
    png_destroy_write_struct(&png, &info);
    return out;
}

Frame decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw std::runtime_error(std::string("cannot read png data: ") + image.message);
    image.format = PNG_FORMAT_RGB;
    Frame f(image.height, image.width);
    if (!png_image_finish_read(&image, nullptr, f.rgb.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error(std::string("cannot decode png data: ") + image.message);
    }
    return f;
}

Frame read_png(const std::string& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw std::runtime_error("cannot read png " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    Frame f(image.height, image.width);
    if (!png_image_finish_read(&image, nullptr, f.rgb.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error("cannot decode png " + path + ": " + image.message);
    }
    return f;
}

void write_png16(const std::string& path, std::int64_t h, std::int64_t w, const std::vector<std::uint16_t>& v) {
    if (static_cast<std::int64_t>(v.size()) != h * w) throw std::invalid_argument("png16 size mismatch");
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (std::int64_t r = 0; r < h; ++r)
        rows[r] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(v.data() + r * w));
    write_png_impl(png, info, h, w, 16, PNG_COLOR_TYPE_GRAY, rows);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint16_t> read_png16(const std::string& path, std::int64_t& h, std::int64_t& w) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("expected 16-bit grayscale png: " + path);
    }
    h = png_get_image_height(png, info);
    w = png_get_image_width(png, info);
    std::vector<std::uint16_t> v(static_cast<std::size_t>(h * w));
    png_set_swap(png);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (std::int64_t r = 0; r < h; ++r) rows[r] = reinterpret_cast<png_bytep>(v.data() + r * w);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return v;
}

void write_video_dir(const std::string& dir, const Video& v, double fps) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    char name[32];
    for (std::size_t k = 0; k < v.size(); ++k) {
        std::snprintf(name, sizeof(name), "frame_%04zu.png", k);
        write_png((fs::path(dir) / name).string(), v[k]);
    }
    nlohmann::json meta = {{"fps", fps},
                           {"n_frames", v.size()},
                           {"height", v.empty() ? 0 : v[0].height},
                           {"width", v.empty() ? 0 : v[0].width}};
    std::ofstream((fs::path(dir) / "meta.json").string()) << meta.dump(2) << '\n';
}

Video read_video_dir(const std::string& dir, double* fps) {
    namespace fs = std::filesystem;
    std::ifstream in((fs::path(dir) / "meta.json").string());
    if (!in) throw std::runtime_error("missing meta.json in " + dir);
    auto meta = nlohmann::json::parse(in);
    if (fps) *fps = meta.at("fps").get<double>();
    Video v;
    char name[32];
    for (std::size_t k = 0; k < meta.at("n_frames").get<std::size_t>(); ++k) {
        std::snprintf(name, sizeof(name), "frame_%04zu.png", k);
        v.push_back(read_png((fs::path(dir) / name).string()));
    }
    return v;
}

Frame resize_bilinear(const Frame& f, std::int64_t h, std::int64_t w) {
    if (f.height == h && f.width == w) return f;
    Frame out(h, w);
    const double sy = static_cast<double>(f.height) / h, sx = static_cast<double>(f.width) / w;
    for (std::int64_t r = 0; r < h; ++r) {
        double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(f.height - 1));
        auto y0 = static_cast<std::int64_t>(y);
        std::int64_t y1 = std::min(y0 + 1, f.height - 1);
        double fy = y - y0;
        for (std::int64_t c = 0; c < w; ++c) {
            double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(f.width - 1));
            auto x0 = static_cast<std::int64_t>(x);
            std::int64_t x1 = std::min(x0 + 1, f.width - 1);
            double fx = x - x0;
            for (int ch = 0; ch < 3; ++ch) {
                double v = (1 - fy) * ((1 - fx) * f.px(y0, x0)[ch] + fx * f.px(y0, x1)[ch]) +
                           fy * ((1 - fx) * f.px(y1, x0)[ch] + fx * f.px(y1, x1)[ch]);
                out.px(r, c)[ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

}  // namespace io
}  // namespace homa
