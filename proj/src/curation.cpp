#include "homa/curation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "homa/draw.hpp"
#include "homa/rng.hpp"

namespace homa::curation {

namespace fs = std::filesystem;

std::int64_t Mask::area() const { return std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }); }

DepthVerdict depth_filter(const Mask& object, const Mask& hand, const DepthMap& depth, double tau, DepthRule rule) {
    const auto n = static_cast<std::size_t>(depth.height * depth.width);
    if (depth.values.size() != n || object.values.size() != n || hand.values.size() != n ||
        object.height != depth.height || hand.height != depth.height)
        throw std::invalid_argument("depth_filter: mask and depth sizes differ");
    for (double d : depth.values)
        if (!(d > 0.0) || !std::isfinite(d)) throw std::invalid_argument("depth_filter: depth must be strictly positive");
    DepthVerdict v;
    double so = 0, sh = 0;
    std::int64_t no = 0, nh = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (object.values[i]) so += depth.values[i], ++no;
        if (hand.values[i]) sh += depth.values[i], ++nh;
    }
    if (no == 0 || nh == 0) {
        v.delta = std::nan("");
        v.reason = no == 0 ? "no object" : "no hand";
        return v;
    }
    v.mean_object = so / static_cast<double>(no);
    v.mean_hand = sh / static_cast<double>(nh);
    const double gap = std::abs(v.mean_object - v.mean_hand);
    v.delta = rule == DepthRule::relative ? gap / v.mean_hand : gap;
    v.keep = v.delta <= tau;
    if (!v.keep) v.reason = "depth gap";
    return v;
}

namespace {

nlohmann::json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return nlohmann::json::parse(is);
}

const std::map<std::string, draw::Rgb>& colour_words() {
    static const std::map<std::string, draw::Rgb> m = {{"red", {220, 40, 40}},   {"green", {40, 190, 60}},
                                                       {"blue", {40, 80, 220}},  {"yellow", {240, 220, 40}},
                                                       {"pink", {240, 120, 200}}};
    return m;
}

constexpr draw::Rgb kSkin{224, 172, 105};
constexpr draw::Rgb kBackground{96, 96, 96};

Mask colour_mask(const Frame& f, draw::Rgb c, int tol) {
    Mask m{f.height, f.width, std::vector<std::uint8_t>(static_cast<std::size_t>(f.height * f.width), 0)};
    for (std::int64_t r = 0; r < f.height; ++r)
        for (std::int64_t col = 0; col < f.width; ++col) {
            const auto* p = f.px(r, col);
            if (std::abs(p[0] - c[0]) < tol && std::abs(p[1] - c[1]) < tol && std::abs(p[2] - c[2]) < tol)
                m.values[r * f.width + col] = 1;
        }
    return m;
}

class FixtureRecognizer final : public HoiRecognizer {
public:
    HoiVerdict recognize(const ClipInput& clip) const override {
        auto j = read_json((fs::path(clip.dir) / "annotations.json").string());
        return {j.at("has_hoi").get<bool>(), j.value("caption", std::string())};
    }
};

class ColourGrounder final : public ObjectGrounder {
public:
    Mask ground(const Frame& frame, const std::string& caption) const override {
        for (const auto& [word, rgb] : colour_words())
            if (caption.find(word) != std::string::npos) return colour_mask(frame, rgb, 40);
        return {frame.height, frame.width, std::vector<std::uint8_t>(static_cast<std::size_t>(frame.height * frame.width))};
    }
};

class SkinSegmenter final : public HandSegmenter {
public:
    Mask segment(const Frame& frame) const override { return colour_mask(frame, kSkin, 30); }
};

class PngDepth final : public DepthEstimator {
public:
    DepthMap estimate(const ClipInput& clip, std::int64_t index, const Frame&) const override {
        char name[32];
        std::snprintf(name, sizeof name, "depth_%04lld.png", static_cast<long long>(index));
        DepthMap d;
        auto raw = io::read_png16((fs::path(clip.dir) / name).string(), d.height, d.width);
        d.values.assign(raw.begin(), raw.end());
        for (auto& v : d.values) v /= 1000.0;
        return d;
    }
};

}  // namespace

PerceptionBackends fixture_backends() {
    return {std::make_shared<FixtureRecognizer>(), std::make_shared<ColourGrounder>(), std::make_shared<SkinSegmenter>(),
            std::make_shared<PngDepth>()};
}

nlohmann::json to_json(const ClipRecord& r) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : r.frames) {
        frames.push_back({{"frame_index", f.frame_index},
                          {"object_area", f.object_area},
                          {"hand_area", f.hand_area},
                          {"mean_object_depth", f.mean_object_depth},
                          {"mean_hand_depth", f.mean_hand_depth},
                          {"delta", std::isfinite(f.delta) ? nlohmann::json(f.delta) : nlohmann::json()},
                          {"pass", f.pass},
                          {"reason", f.reason}});
    }
    return {{"clip_id", r.clip_id},
            {"frame_paths", r.frame_paths},
            {"has_hoi", r.has_hoi},
            {"object_caption", r.object_caption},
            {"frames", frames},
            {"mean_object_depth", r.mean_object_depth},
            {"mean_hand_depth", r.mean_hand_depth},
            {"keep", r.keep},
            {"reject_reason", r.reject_reason}};
}

ClipRecord record_from_json(const nlohmann::json& j) {
    ClipRecord r;
    r.clip_id = j.at("clip_id").get<std::string>();
    r.frame_paths = j.value("frame_paths", std::vector<std::string>{});
    r.has_hoi = j.value("has_hoi", false);
    r.object_caption = j.value("object_caption", std::string());
    for (const auto& f : j.value("frames", nlohmann::json::array())) {
        FrameResult fr;
        fr.frame_index = f.value("frame_index", 0);
        fr.object_area = f.value("object_area", 0);
        fr.hand_area = f.value("hand_area", 0);
        fr.mean_object_depth = f.value("mean_object_depth", 0.0);
        fr.mean_hand_depth = f.value("mean_hand_depth", 0.0);
        fr.delta = f.contains("delta") && f.at("delta").is_number() ? f.at("delta").get<double>() : std::nan("");
        fr.pass = f.value("pass", false);
        fr.reason = f.value("reason", std::string());
        r.frames.push_back(fr);
    }
    r.mean_object_depth = j.value("mean_object_depth", 0.0);
    r.mean_hand_depth = j.value("mean_hand_depth", 0.0);
    r.keep = j.value("keep", false);
    r.reject_reason = j.value("reject_reason", std::string());
    return r;
}

std::vector<std::int64_t> sample_frame_indices(std::int64_t n, std::int64_t count) {
    if (n <= 0 || count <= 0) return {};
    if (count >= n) {
        std::vector<std::int64_t> all(n);
        for (std::int64_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    if (count == 1) return {0};
    std::vector<std::int64_t> out;
    for (std::int64_t k = 0; k < count; ++k)
        out.push_back(std::llround(static_cast<double>(k) * static_cast<double>(n - 1) / static_cast<double>(count - 1)));
    return out;
}

ClipRecord curate_clip(const ClipInput& clip, const PerceptionBackends& be, const CurateOptions& opt) {
    ClipRecord rec;
    rec.clip_id = clip.clip_id;
    try {
        const auto verdict = be.recognizer->recognize(clip);
        rec.has_hoi = verdict.has_hoi;
        rec.object_caption = verdict.caption;
        if (!verdict.has_hoi) {
            rec.reject_reason = "no hoi";
            return rec;
        }
        std::int64_t passed = 0;
        double so = 0, sh = 0;
        std::int64_t measured = 0;
        const auto idx = sample_frame_indices(static_cast<std::int64_t>(clip.frame_paths.size()), opt.sample_frames);
        for (auto i : idx) {
            const Frame frame = io::read_png(clip.frame_paths[i]);
            rec.frame_paths.push_back(clip.frame_paths[i]);
            const Mask om = be.grounder->ground(frame, verdict.caption);
            const Mask hm = be.hands->segment(frame);
            const DepthMap dm = be.depth->estimate(clip, i, frame);
            const auto v = depth_filter(om, hm, dm, opt.tau, opt.rule);
            rec.frames.push_back({i, om.area(), hm.area(), v.mean_object, v.mean_hand, v.delta, v.keep, v.reason});
            if (v.keep) ++passed;
            if (om.area() > 0 && hm.area() > 0) {
                so += v.mean_object;
                sh += v.mean_hand;
                ++measured;
            }
        }
        if (measured > 0) {
            rec.mean_object_depth = so / static_cast<double>(measured);
            rec.mean_hand_depth = sh / static_cast<double>(measured);
        }
        rec.keep = !idx.empty() && 2 * passed >= static_cast<std::int64_t>(idx.size());
        if (!rec.keep) rec.reject_reason = idx.empty() ? "no frames" : "depth mismatch";
    } catch (const std::exception& e) {
        rec.keep = false;
        rec.reject_reason = std::string("backend_error: ") + e.what();
    }
    return rec;
}

std::vector<ClipRecord> load_manifest(const std::string& path) {
    std::vector<ClipRecord> out;
    std::ifstream is(path);
    if (!is) return out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception&) {
            // A crash mid-write leaves at most one torn line at the end.
            if (is.peek() != EOF) throw std::runtime_error("corrupt manifest line in " + path);
        }
    }
    return out;
}

std::vector<ClipRecord> curate(const std::vector<ClipInput>& clips, const PerceptionBackends& be,
                               const CurateOptions& opt, const std::string& manifest_path) {
    if (!be.recognizer || !be.grounder || !be.hands || !be.depth) throw std::invalid_argument("missing perception backend");
    if (opt.workers < 1) throw std::invalid_argument("workers must be at least 1");
    std::map<std::string, ClipRecord> done;
    if (!manifest_path.empty()) {
        // Drop a torn tail so new lines start cleanly.
        auto existing = load_manifest(manifest_path);
        if (fs::exists(manifest_path)) {
            std::ofstream os(manifest_path, std::ios::trunc);
            for (const auto& r : existing) os << to_json(r).dump() << '\n';
        }
        for (auto& r : existing) done.emplace(r.clip_id, std::move(r));
    }
    std::set<std::string> seen;
    for (const auto& c : clips)
        if (!seen.insert(c.clip_id).second) throw std::invalid_argument("duplicate clip id " + c.clip_id);

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < clips.size(); ++i)
        if (!done.count(clips[i].clip_id)) todo.push_back(i);
    if (opt.limit && static_cast<std::int64_t>(todo.size()) > *opt.limit) todo.resize(*opt.limit);

    std::vector<std::optional<ClipRecord>> fresh(clips.size());
    std::mutex mu;
    std::ofstream out;
    if (!manifest_path.empty()) {
        out.open(manifest_path, std::ios::app);
        if (!out) throw std::runtime_error("cannot write manifest " + manifest_path);
    }
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < todo.size();) {
            const std::size_t i = todo[k];
            ClipRecord rec = curate_clip(clips[i], be, opt);
            const std::string line = to_json(rec).dump() + "\n";
            std::lock_guard lock(mu);
            if (out) {
                out.write(line.data(), static_cast<std::streamsize>(line.size()));
                out.flush();
            }
            fresh[i] = std::move(rec);
        }
    };
    const auto n_workers = std::min<std::int64_t>(opt.workers, std::max<std::size_t>(todo.size(), 1));
    std::vector<std::thread> pool;
    for (std::int64_t w = 1; w < n_workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    std::vector<ClipRecord> result;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (fresh[i]) result.push_back(*fresh[i]);
        else if (auto it = done.find(clips[i].clip_id); it != done.end()) result.push_back(it->second);
    }
    return result;
}

std::vector<ClipInput> discover_clips(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::invalid_argument("clip directory " + dir + " does not exist");
    std::vector<ClipInput> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_directory()) continue;
        ClipInput c;
        c.clip_id = e.path().filename().string();
        c.dir = e.path().string();
        for (const auto& f : fs::directory_iterator(e.path())) {
            const auto name = f.path().filename().string();
            if (name.starts_with("frame_") && name.ends_with(".png")) c.frame_paths.push_back(f.path().string());
        }
        if (c.frame_paths.empty()) continue;
        std::sort(c.frame_paths.begin(), c.frame_paths.end());
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.clip_id < b.clip_id; });
    return out;
}

std::vector<std::string> write_depth_fixture(const std::string& dir, std::uint64_t seed) {
    constexpr std::int64_t kH = 64, kW = 64, kFrames = 9;
    const std::vector<std::pair<std::string, draw::Rgb>> objects = {
        {"red ball", colour_words().at("red")}, {"green box", colour_words().at("green")},
        {"blue cup", colour_words().at("blue")}};
    std::vector<std::string> interacting;
    Rng rng(seed);
    for (int k = 0; k < 6; ++k) {
        const bool touching = k % 2 == 0;
        const std::string id = "clip_" + std::to_string(k);
        const fs::path cdir = fs::path(dir) / id;
        fs::create_directories(cdir);
        const auto& [caption, colour] = objects[k % 3];
        const double hand_depth = rng.uniform(0.6, 1.2);
        const double object_depth = touching ? hand_depth * rng.uniform(0.97, 1.05) : hand_depth * rng.uniform(2.0, 3.5);
        Video video;
        for (std::int64_t f = 0; f < kFrames; ++f) {
            Frame fr(kH, kW);
            draw::fill_rect(fr, 0, 0, kW, kH, kBackground);
            const double hx = 20 + 2.0 * f, hy = 36;
            // Background objects sit in a far corner; held objects touch the hand.
            const double ox = touching ? hx + 9 : 52, oy = touching ? hy - 2 : 10;
            draw::fill_disk(fr, ox, oy, 6, colour);
            draw::fill_disk(fr, hx, hy, 5, kSkin);
            video.push_back(fr);
            std::vector<std::uint16_t> depth(kH * kW);
            const Mask hm = colour_mask(fr, kSkin, 30), om = colour_mask(fr, colour, 40);
            for (std::int64_t i = 0; i < kH * kW; ++i) {
                double d = 4.0;
                if (om.values[i]) d = object_depth;
                if (hm.values[i]) d = hand_depth;
                d *= 1.0 + 0.01 * rng.uniform(-1.0, 1.0);
                depth[i] = static_cast<std::uint16_t>(std::lround(d * 1000.0));
            }
            char name[32];
            std::snprintf(name, sizeof name, "depth_%04lld.png", static_cast<long long>(f));
            io::write_png16((cdir / name).string(), kH, kW, depth);
        }
        io::write_video_dir(cdir.string(), video, 8.0);
        std::ofstream((cdir / "annotations.json").string())
            << nlohmann::json{{"has_hoi", true}, {"caption", "a hand with a " + caption}, {"touching", touching}}.dump(2);
        if (touching) interacting.push_back(id);
    }
    return interacting;
}

}  // namespace homa::curation
