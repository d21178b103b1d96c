#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homa/array.hpp"

namespace homa {

/// 8-bit interleaved RGB frame.
struct Frame {
    std::int64_t height = 0, width = 0;
    std::vector<std::uint8_t> rgb;

    Frame() = default;
    Frame(std::int64_t h, std::int64_t w) : height(h), width(w), rgb(static_cast<std::size_t>(h * w * 3), 0) {}
    std::uint8_t* px(std::int64_t row, std::int64_t col) { return rgb.data() + (row * width + col) * 3; }
    const std::uint8_t* px(std::int64_t row, std::int64_t col) const { return rgb.data() + (row * width + col) * 3; }
    friend bool operator==(const Frame&, const Frame&) = default;
};

using Video = std::vector<Frame>;

/// [H,W,3] in [-1,1].
Array frame_to_array(const Frame& f);
Frame array_to_frame(const Array& a);
/// Frames -> [1, n, H, W, 3].
Array video_to_tensor(const Video& v);
/// [1, n, H, W, 3] -> frames (batch item `b`).
Video tensor_to_video(const Array& t, std::int64_t b = 0);

namespace io {

void write_png(const std::string& path, const Frame& f);
Frame read_png(const std::string& path);
std::vector<std::uint8_t> encode_png(const Frame& f);
Frame decode_png(const std::vector<std::uint8_t>& bytes);

/// 16-bit grayscale PNG (used for fixture depth maps).
void write_png16(const std::string& path, std::int64_t h, std::int64_t w, const std::vector<std::uint16_t>& v);
std::vector<std::uint16_t> read_png16(const std::string& path, std::int64_t& h, std::int64_t& w);

/// Writes frame_0000.png ... plus meta.json {fps, n_frames, height, width}.
void write_video_dir(const std::string& dir, const Video& v, double fps);
Video read_video_dir(const std::string& dir, double* fps = nullptr);

Frame resize_bilinear(const Frame& f, std::int64_t h, std::int64_t w);

}  // namespace io
}  // namespace homa
