#pragma once

#include <array>
#include <cstdint>

#include "homa/image.hpp"

namespace homa::draw {

using Rgb = std::array<std::uint8_t, 3>;

/// Pixel-space drawing; coordinates are (x = column, y = row) with pixel
/// centres at integers. Everything is clipped to the frame.
void put(Frame& f, std::int64_t row, std::int64_t col, Rgb color);
void fill_disk(Frame& f, double x, double y, double radius, Rgb color);
void stroke_segment(Frame& f, double ax, double ay, double bx, double by, double radius, Rgb color);
void fill_rect(Frame& f, double x0, double y0, double x1, double y1, Rgb color);

}  // namespace homa::draw
