#include "homa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "homa/draw.hpp"
#include "homa/rng.hpp"

namespace homa::synth {

using namespace conditions;

namespace {

struct Palette {
    draw::Rgb rgb;
    const char* name;
};

constexpr Palette kBodyColors[] = {{{90, 140, 230}, "blue"},
                                   {{230, 170, 90}, "tan"},
                                   {{160, 110, 200}, "purple"},
                                   {{110, 200, 190}, "teal"}};
constexpr Palette kObjectColors[] = {{{230, 50, 40}, "red"},
                                     {{60, 200, 70}, "green"},
                                     {{250, 220, 40}, "yellow"},
                                     {{240, 120, 200}, "pink"}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Point pt(double x, double y) { return Point{clamp01(x), clamp01(y)}; }

void place_hand(SkeletonFrame& f, int base, double wx, double wy, double dir_x, double dir_y) {
    f.joints[base] = pt(wx, wy);
    const double ang0 = std::atan2(dir_y, dir_x);
    for (int finger = 0; finger < 5; ++finger) {
        const double a = ang0 + (finger - 2) * 0.3;
        for (int k = 1; k <= 4; ++k)
            f.joints[base + 1 + finger * 4 + (k - 1)] = pt(wx + 0.012 * k * std::cos(a), wy + 0.012 * k * std::sin(a));
    }
}

struct Pose {
    SkeletonFrame frame;
    double hand_x, hand_y;
};

Pose pose_at(double x0, double phi, double lift) {
    using namespace joint;
    SkeletonFrame f;
    f.joints[nose] = pt(x0, 0.18);
    f.joints[left_eye] = pt(x0 + 0.02, 0.16);
    f.joints[right_eye] = pt(x0 - 0.02, 0.16);
    f.joints[left_ear] = pt(x0 + 0.04, 0.17);
    f.joints[right_ear] = pt(x0 - 0.04, 0.17);
    f.joints[left_shoulder] = pt(x0 + 0.1, 0.32);
    f.joints[right_shoulder] = pt(x0 - 0.1, 0.32);
    f.joints[left_hip] = pt(x0 + 0.07, 0.6);
    f.joints[right_hip] = pt(x0 - 0.07, 0.6);
    f.joints[left_knee] = pt(x0 + 0.08, 0.75);
    f.joints[right_knee] = pt(x0 - 0.08, 0.75);
    f.joints[left_ankle] = pt(x0 + 0.08, 0.9);
    f.joints[right_ankle] = pt(x0 - 0.08, 0.9);
    // Left arm hangs with a small lift; right arm swings outward by phi.
    f.joints[left_elbow] = pt(x0 + 0.13, 0.45 - lift);
    f.joints[left_wrist] = pt(x0 + 0.14, 0.56 - 2 * lift);
    place_hand(f, kLeftHandBase, x0 + 0.14, 0.56 - 2 * lift, 0.1, 1.0);
    const double sx = x0 - 0.1, sy = 0.32;
    const double ex = sx - 0.13 * std::sin(phi), ey = sy + 0.13 * std::cos(phi);
    const double fdx = -std::sin(phi + 0.5), fdy = std::cos(phi + 0.5);
    const double wx = ex + 0.12 * fdx, wy = ey + 0.12 * fdy;
    f.joints[right_elbow] = pt(ex, ey);
    f.joints[right_wrist] = pt(wx, wy);
    place_hand(f, kRightHandBase, wx, wy, fdx, fdy);
    return {f, clamp01(wx + 0.04 * fdx), clamp01(wy + 0.04 * fdy)};
}

void draw_person(Frame& img, const SkeletonFrame& f, draw::Rgb color) {
    const double sx = img.width - 1, sy = img.height - 1;
    const double m = static_cast<double>(std::min(img.height, img.width));
    const double limb = std::max(1.5, 0.03 * m);
    for (const auto& bone : bones()) {
        if (bone.part == BodyPart::hands || bone.part == BodyPart::head) continue;
        const auto& a = f.joints[bone.a];
        const auto& b = f.joints[bone.b];
        if (a && b) draw::stroke_segment(img, a->x * sx, a->y * sy, b->x * sx, b->y * sy, limb, color);
    }
    const auto& nose = f.joints[joint::nose];
    const auto& ls = f.joints[joint::left_shoulder];
    const auto& rs = f.joints[joint::right_shoulder];
    draw::stroke_segment(img, nose->x * sx, nose->y * sy, 0.5 * (ls->x + rs->x) * sx, ls->y * sy, limb, color);
    draw::fill_disk(img, nose->x * sx, nose->y * sy, 0.07 * m, color);
}

void draw_object(Frame& img, double cx, double cy, double w, double h, bool round, draw::Rgb color) {
    const double px = cx * (img.width - 1), py = cy * (img.height - 1);
    const double hw = 0.5 * w * (img.width - 1), hh = 0.5 * h * (img.height - 1);
    if (round)
        draw::fill_disk(img, px, py, std::min(hw, hh), color);
    else
        draw::fill_rect(img, px - hw, py - hh, px + hw, py + hh, color);
}

}  // namespace

SyntheticClip make_clip(const ClipSpec& spec) {
    if (spec.n < 1) throw std::invalid_argument("clip needs at least one frame");
    Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + 17);
    const double x0 = rng.uniform(0.4, 0.62);
    const double phi0 = rng.uniform(0.1, 0.4);
    const double phi1 = rng.uniform(0.8, 1.3);
    const bool reverse = rng.uniform() < 0.5;
    const double lift = rng.uniform(0.0, 0.03);
    const auto body = kBodyColors[rng.integer(0, 3)];
    const auto obj = kObjectColors[rng.integer(0, 3)];
    const bool round = rng.uniform() < 0.5;
    const double size = rng.uniform(0.22, 0.3);
    const double audio_phase = rng.uniform(0.0, 6.28);

    SyntheticClip out;
    auto& cond = out.conditions;
    cond.paste_w = cond.paste_h = size;
    cond.object_motion.encoding = spec.encoding;
    cond.text = std::string("a ") + body.name + " person lifts a " + obj.name + (round ? " ball" : " box");
    cond.face_boxes.emplace();
    out.audio = Array(Shape{spec.n, kAudioDim});

    for (std::int64_t i = 0; i < spec.n; ++i) {
        double s = spec.n > 1 ? static_cast<double>(i) / static_cast<double>(spec.n - 1) : 0.0;
        if (reverse) s = 1.0 - s;
        const Pose pose = pose_at(x0, phi0 + (phi1 - phi0) * s, lift * s);
        out.full_skeleton.frames.push_back(pose.frame);

        Frame img(spec.res.height, spec.res.width);
        draw_person(img, pose.frame, body.rgb);
        if (spec.with_object) draw_object(img, pose.hand_x, pose.hand_y, size, size, round, obj.rgb);
        out.video.push_back(std::move(img));

        ObjectState st;
        st.cx = pose.hand_x;
        st.cy = pose.hand_y;
        st.w = st.h = size;
        st.sigma = 0.05;
        cond.object_motion.frames.push_back(st);

        const auto& nose = *pose.frame.joints[joint::nose];
        cond.face_boxes->push_back(
            Box{clamp01(nose.x - 0.08), clamp01(nose.y - 0.08), clamp01(nose.x + 0.08), clamp01(nose.y + 0.08)});
        for (std::int64_t k = 0; k < kAudioDim; ++k)
            out.audio[i * kAudioDim + k] = 0.5 * std::sin((0.3 + 0.1 * k) * static_cast<double>(i) + audio_phase);

        if (i == 0) {
            out.human_ref = Frame(spec.res.height, spec.res.width);
            draw_person(out.human_ref, pose.frame, body.rgb);
        }
    }
    out.full_skeleton.retained_parts = PartSet::all();
    cond.skeleton = prune_skeleton(out.full_skeleton, spec.keep);

    out.object_image = Frame(spec.res.height, spec.res.width);
    draw_object(out.object_image, 0.5, 0.5, 0.9, 0.9, round, obj.rgb);
    validate(cond);
    return out;
}

std::vector<SyntheticClip> make_set(std::int64_t count, const ClipSpec& base, std::uint64_t base_seed) {
    std::vector<SyntheticClip> out;
    out.reserve(count);
    for (std::int64_t i = 0; i < count; ++i) {
        ClipSpec s = base;
        s.seed = base_seed + static_cast<std::uint64_t>(i);
        out.push_back(make_clip(s));
    }
    return out;
}

}  // namespace homa::synth
