#include "homa/draw.hpp"

#include <algorithm>
#include <cmath>

namespace homa::draw {

void put(Frame& f, std::int64_t r, std::int64_t c, Rgb color) {
    if (r < 0 || c < 0 || r >= f.height || c >= f.width) return;
    std::copy(color.begin(), color.end(), f.px(r, c));
}

void fill_disk(Frame& f, double x, double y, double radius, Rgb color) {
    const auto r0 = static_cast<std::int64_t>(std::floor(y - radius));
    const auto r1 = static_cast<std::int64_t>(std::ceil(y + radius));
    const auto c0 = static_cast<std::int64_t>(std::floor(x - radius));
    const auto c1 = static_cast<std::int64_t>(std::ceil(x + radius));
    for (std::int64_t r = r0; r <= r1; ++r)
        for (std::int64_t c = c0; c <= c1; ++c) {
            double dx = c - x, dy = r - y;
            if (dx * dx + dy * dy <= radius * radius) put(f, r, c, color);
        }
}

void stroke_segment(Frame& f, double ax, double ay, double bx, double by, double radius, Rgb color) {
    const auto r0 = static_cast<std::int64_t>(std::floor(std::min(ay, by) - radius));
    const auto r1 = static_cast<std::int64_t>(std::ceil(std::max(ay, by) + radius));
    const auto c0 = static_cast<std::int64_t>(std::floor(std::min(ax, bx) - radius));
    const auto c1 = static_cast<std::int64_t>(std::ceil(std::max(ax, bx) + radius));
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    for (std::int64_t r = r0; r <= r1; ++r)
        for (std::int64_t c = c0; c <= c1; ++c) {
            double t = len2 > 0.0 ? std::clamp(((c - ax) * vx + (r - ay) * vy) / len2, 0.0, 1.0) : 0.0;
            double dx = c - (ax + t * vx), dy = r - (ay + t * vy);
            if (dx * dx + dy * dy <= radius * radius) put(f, r, c, color);
        }
}

void fill_rect(Frame& f, double x0, double y0, double x1, double y1, Rgb color) {
    for (auto r = static_cast<std::int64_t>(std::ceil(y0)); r <= static_cast<std::int64_t>(std::floor(y1)); ++r)
        for (auto c = static_cast<std::int64_t>(std::ceil(x0)); c <= static_cast<std::int64_t>(std::floor(x1)); ++c)
            put(f, r, c, color);
}

}  // namespace homa::draw
