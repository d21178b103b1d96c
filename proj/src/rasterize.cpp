#include <algorithm>
#include <array>
#include <cmath>

#include "homa/conditions.hpp"
#include "homa/draw.hpp"
#include "homa/geometry.hpp"

namespace homa::conditions {

namespace {

using draw::Rgb;

Rgb part_color(BodyPart p) {
    switch (p) {
        case BodyPart::arms: return {255, 128, 0};
        case BodyPart::hands: return {0, 255, 128};
        case BodyPart::torso: return {0, 128, 255};
        case BodyPart::legs: return {255, 0, 255};
        case BodyPart::head: return {255, 255, 0};
    }
    return {255, 255, 255};
}

constexpr Rgb kObjectColor{255, 255, 255};

// Normalized [0,1] maps onto pixel centres 0 .. size-1.
struct PixelPoint {
    double x, y;
};
PixelPoint to_pixel(double nx, double ny, Resolution res) {
    return {nx * static_cast<double>(res.width - 1), ny * static_cast<double>(res.height - 1)};
}

void fill_disk(Frame& f, PixelPoint p, double radius, Rgb color) { draw::fill_disk(f, p.x, p.y, radius, color); }
void stroke_segment(Frame& f, PixelPoint a, PixelPoint b, double radius, Rgb color) {
    draw::stroke_segment(f, a.x, a.y, b.x, b.y, radius, color);
}
using draw::put;

void check_res(Resolution res) {
    if (res.height <= 0 || res.width <= 0) throw std::invalid_argument("resolution must be positive");
}

}  // namespace

double bone_radius(Resolution res) {
    return std::max(1.0, 0.5 * 0.01 * static_cast<double>(std::min(res.height, res.width)));
}

double dot_radius(Resolution res) {
    return std::max(1.0, 0.02 * static_cast<double>(std::min(res.height, res.width)));
}

Video rasterize_pose(const SkeletonSequence& seq, Resolution res) {
    check_res(res);
    if (res.height % kSpatialFactor != 0 || res.width % kSpatialFactor != 0)
        throw std::invalid_argument("resolution " + std::to_string(res.height) + "x" + std::to_string(res.width) +
                                    " is not divisible by the codec spatial factor " +
                                    std::to_string(kSpatialFactor));
    const double radius = bone_radius(res);
    Video out;
    out.reserve(seq.frames.size());
    for (const auto& fr : seq.frames) {
        Frame f(res.height, res.width);
        for (const auto& bone : bones()) {
            const auto& a = fr.joints[bone.a];
            const auto& b = fr.joints[bone.b];
            if (!a || !b) continue;
            stroke_segment(f, to_pixel(a->x, a->y, res), to_pixel(b->x, b->y, res), radius, part_color(bone.part));
        }
        for (int id = 0; id < kNumJoints; ++id)
            if (fr.joints[id])
                fill_disk(f, to_pixel(fr.joints[id]->x, fr.joints[id]->y, res), radius, part_color(part_of(id)));
        out.push_back(std::move(f));
    }
    return out;
}

Video rasterize_object_motion(const ObjectMotion& m, Resolution res) {
    check_res(res);
    Video out;
    out.reserve(m.frames.size());
    for (const auto& s : m.frames) {
        Frame f(res.height, res.width);
        const PixelPoint c = to_pixel(s.cx, s.cy, res);
        switch (m.encoding) {
            case ObjectEncoding::dot: fill_disk(f, c, dot_radius(res), kObjectColor); break;
            case ObjectEncoding::bbox: {
                const double hw = 0.5 * s.w * static_cast<double>(res.width - 1);
                const double hh = 0.5 * s.h * static_cast<double>(res.height - 1);
                const double ct = std::cos(s.theta), st = std::sin(s.theta);
                std::array<PixelPoint, 4> corners;
                const double sx[4] = {-1, 1, 1, -1}, sy[4] = {-1, -1, 1, 1};
                for (int k = 0; k < 4; ++k) {
                    double dx = sx[k] * hw, dy = sy[k] * hh;
                    corners[k] = {c.x + ct * dx - st * dy, c.y + st * dx + ct * dy};
                }
                for (int k = 0; k < 4; ++k)
                    stroke_segment(f, corners[k], corners[(k + 1) % 4], bone_radius(res), kObjectColor);
                break;
            }
            case ObjectEncoding::gaussian_dot: {
                const double sigma_px = s.sigma * static_cast<double>(std::min(res.height, res.width) - 1);
                for (std::int64_t r = 0; r < res.height; ++r)
                    for (std::int64_t col = 0; col < res.width; ++col) {
                        double dx = col - c.x, dy = r - c.y;
                        double v = std::clamp(std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_px * sigma_px)), 0.0, 1.0);
                        auto q = static_cast<std::uint8_t>(std::lround(255.0 * v));
                        put(f, r, col, {q, q, q});
                    }
                break;
            }
        }
        out.push_back(std::move(f));
    }
    return out;
}

Video composite(const Video& a, const Video& b) {
    if (a.size() != b.size()) throw std::invalid_argument("composite: frame count mismatch");
    Video out = a;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].height != b[k].height || a[k].width != b[k].width)
            throw std::invalid_argument("composite: frame size mismatch");
        for (std::size_t i = 0; i < a[k].rgb.size(); ++i) out[k].rgb[i] = std::max(a[k].rgb[i], b[k].rgb[i]);
    }
    return out;
}

}  // namespace homa::conditions
