#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "homa/curation.hpp"
#include "homa/rng.hpp"

using namespace homa;
using namespace homa::curation;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("homa_cur_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Mask rect_mask(std::int64_t h, std::int64_t w, std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1) {
    Mask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)};
    for (auto r = r0; r < r1; ++r)
        for (auto c = c0; c < c1; ++c) m.values[r * w + c] = 1;
    return m;
}

DepthMap constant_depth(std::int64_t h, std::int64_t w, double v) {
    return {h, w, std::vector<double>(static_cast<std::size_t>(h * w), v)};
}

struct CountingBackends {
    std::shared_ptr<std::atomic<int>> recognized = std::make_shared<std::atomic<int>>(0);
    std::shared_ptr<std::atomic<int>> grounded = std::make_shared<std::atomic<int>>(0);
    std::shared_ptr<std::atomic<int>> depths = std::make_shared<std::atomic<int>>(0);
};

struct MockRecognizer : HoiRecognizer {
    std::shared_ptr<std::atomic<int>> calls;
    bool answer;
    MockRecognizer(std::shared_ptr<std::atomic<int>> c, bool a) : calls(std::move(c)), answer(a) {}
    HoiVerdict recognize(const ClipInput&) const override {
        ++*calls;
        return {answer, "red ball"};
    }
};
struct MockGrounder : ObjectGrounder {
    std::shared_ptr<std::atomic<int>> calls;
    explicit MockGrounder(std::shared_ptr<std::atomic<int>> c) : calls(std::move(c)) {}
    Mask ground(const Frame& f, const std::string&) const override {
        ++*calls;
        return rect_mask(f.height, f.width, 0, 2, 0, 2);
    }
};
struct MockHands : HandSegmenter {
    Mask segment(const Frame& f) const override { return rect_mask(f.height, f.width, 2, 4, 2, 4); }
};
struct MockDepth : DepthEstimator {
    std::shared_ptr<std::atomic<int>> calls;
    bool fail;
    MockDepth(std::shared_ptr<std::atomic<int>> c, bool f) : calls(std::move(c)), fail(f) {}
    DepthMap estimate(const ClipInput&, std::int64_t, const Frame& f) const override {
        ++*calls;
        if (fail) throw std::runtime_error("depth model crashed");
        return constant_depth(f.height, f.width, 2.0);
    }
};

}  // namespace

TEST_CASE("depth filter examples") {
    const auto obj = rect_mask(4, 4, 0, 2, 0, 2), hand = rect_mask(4, 4, 2, 4, 2, 4);
    auto depth = constant_depth(4, 4, 1.0);
    for (auto r = 0; r < 2; ++r)
        for (auto c = 0; c < 2; ++c) depth.values[r * 4 + c] = 1.5;

    SUBCASE("relative gap 0.5 rejected at tau 0.25, kept at 0.5") {
        auto v = depth_filter(obj, hand, depth, 0.25);
        CHECK(v.delta == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(v.mean_object == doctest::Approx(1.5));
        CHECK(v.mean_hand == doctest::Approx(1.0));
        CHECK_FALSE(v.keep);
        CHECK(depth_filter(obj, hand, depth, 0.5).keep);
    }
    SUBCASE("absolute rule measures metres") {
        for (auto& d : depth.values) d *= 2.0;
        auto v = depth_filter(obj, hand, depth, 0.9, DepthRule::absolute);
        CHECK(v.delta == doctest::Approx(1.0));
        CHECK_FALSE(v.keep);
    }
    SUBCASE("empty masks reject with a reason") {
        auto none = rect_mask(4, 4, 0, 0, 0, 0);
        auto v = depth_filter(none, hand, depth, 1.0);
        CHECK_FALSE(v.keep);
        CHECK(v.reason == "no object");
        CHECK(std::isnan(v.delta));
        CHECK(depth_filter(obj, none, depth, 1.0).reason == "no hand");
    }
    SUBCASE("invalid depth and size mismatch throw") {
        auto bad = depth;
        bad.values[5] = 0.0;
        CHECK_THROWS_AS(depth_filter(obj, hand, bad, 0.1), std::invalid_argument);
        bad.values[5] = -1.0;
        CHECK_THROWS_AS(depth_filter(obj, hand, bad, 0.1), std::invalid_argument);
        CHECK_THROWS_AS(depth_filter(rect_mask(3, 3, 0, 1, 0, 1), hand, depth, 0.1), std::invalid_argument);
    }
}

TEST_CASE("relative depth rule is scale invariant") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto obj = rect_mask(6, 6, 0, 3, 0, 3), hand = rect_mask(6, 6, 3, 6, 2, 6);
        DepthMap d{6, 6, {}};
        for (int i = 0; i < 36; ++i) d.values.push_back(rng.uniform(0.5, 4.0));
        const double tau = rng.uniform(0.05, 0.5), s = rng.uniform(0.1, 10.0);
        auto a = depth_filter(obj, hand, d, tau);
        for (auto& v : d.values) v *= s;
        auto b = depth_filter(obj, hand, d, tau);
        CHECK(b.delta == doctest::Approx(a.delta).epsilon(1e-12));
        if (std::abs(a.delta - tau) > 1e-9) CHECK(a.keep == b.keep);
    }
}

TEST_CASE("frame sampling") {
    CHECK(sample_frame_indices(9, 5) == std::vector<std::int64_t>{0, 2, 4, 6, 8});
    CHECK(sample_frame_indices(3, 5) == std::vector<std::int64_t>{0, 1, 2});
    CHECK(sample_frame_indices(10, 1) == std::vector<std::int64_t>{0});
    CHECK(sample_frame_indices(0, 5).empty());
}

TEST_CASE("fixture keeps exactly the interacting clips") {
    TempDir tmp("fixture");
    const auto expected = write_depth_fixture(tmp.path.string(), 4);
    CHECK(expected.size() == 3);
    const auto clips = discover_clips(tmp.path.string());
    REQUIRE(clips.size() == 6);
    CurateOptions opt;
    const auto recs = curate(clips, fixture_backends(), opt);
    REQUIRE(recs.size() == 6);
    std::vector<std::string> kept;
    for (const auto& r : recs) {
        CHECK(r.has_hoi);
        CHECK(r.frames.size() == 5);
        if (r.keep) kept.push_back(r.clip_id);
        else CHECK(r.reject_reason == "depth mismatch");
    }
    CHECK(kept == expected);

    SUBCASE("masks are found on every sampled frame") {
        for (const auto& r : recs)
            for (const auto& f : r.frames) {
                CHECK(f.object_area > 50);
                CHECK(f.hand_area > 40);
            }
    }
    SUBCASE("worker count does not change the result") {
        opt.workers = 3;
        const auto par = curate(clips, fixture_backends(), opt);
        for (std::size_t i = 0; i < recs.size(); ++i) CHECK(to_json(par[i]) == to_json(recs[i]));
    }
    SUBCASE("input order does not change the decisions") {
        auto rev = clips;
        std::reverse(rev.begin(), rev.end());
        const auto out = curate(rev, fixture_backends(), opt);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(to_json(out[i]) == to_json(recs[recs.size() - 1 - i]));
    }
}

TEST_CASE("manifest resume is idempotent") {
    TempDir tmp("resume");
    write_depth_fixture((tmp.path / "clips").string(), 9);
    const auto clips = discover_clips((tmp.path / "clips").string());
    const auto manifest = (tmp.path / "manifest.jsonl").string();
    const auto full = curate(clips, fixture_backends(), {}, (tmp.path / "reference.jsonl").string());

    CurateOptions partial;
    partial.limit = 2;
    auto first = curate(clips, fixture_backends(), partial, manifest);
    CHECK(first.size() == 2);
    CHECK(load_manifest(manifest).size() == 2);

    // A crash mid-append leaves a torn line.
    { std::ofstream(manifest, std::ios::app) << "{\"clip_id\": \"clip_"; }
    CHECK(load_manifest(manifest).size() == 2);

    auto second = curate(clips, fixture_backends(), {}, manifest);
    REQUIRE(second.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(to_json(second[i]) == to_json(full[i]));
    CHECK(load_manifest(manifest).size() == 6);

    // Running again adds nothing.
    auto third = curate(clips, fixture_backends(), {}, manifest);
    CHECK(load_manifest(manifest).size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(to_json(third[i]) == to_json(full[i]));
}

TEST_CASE("recognizer short-circuits and backend errors are recorded") {
    TempDir tmp("mock");
    Frame f(4, 4);
    std::vector<std::string> paths;
    for (int k = 0; k < 3; ++k) {
        paths.push_back((tmp.path / ("frame_000" + std::to_string(k) + ".png")).string());
        io::write_png(paths.back(), f);
    }
    ClipInput clip{"c", tmp.path.string(), paths};
    CountingBackends n;

    PerceptionBackends no{std::make_shared<MockRecognizer>(n.recognized, false), std::make_shared<MockGrounder>(n.grounded),
                          std::make_shared<MockHands>(), std::make_shared<MockDepth>(n.depths, false)};
    auto r = curate_clip(clip, no, {});
    CHECK_FALSE(r.keep);
    CHECK(r.reject_reason == "no hoi");
    CHECK(*n.recognized == 1);
    CHECK(*n.grounded == 0);
    CHECK(*n.depths == 0);

    PerceptionBackends yes{std::make_shared<MockRecognizer>(n.recognized, true), std::make_shared<MockGrounder>(n.grounded),
                           std::make_shared<MockHands>(), std::make_shared<MockDepth>(n.depths, false)};
    r = curate_clip(clip, yes, {});
    CHECK(r.keep);
    CHECK(*n.grounded == 3);
    CHECK(*n.depths == 3);

    PerceptionBackends broken = yes;
    broken.depth = std::make_shared<MockDepth>(n.depths, true);
    r = curate_clip(clip, broken, {});
    CHECK_FALSE(r.keep);
    CHECK(r.reject_reason.rfind("backend_error", 0) == 0);

    CHECK(record_from_json(to_json(r)).reject_reason == r.reject_reason);
    CHECK_THROWS_AS(curate({clip, clip}, yes, {}), std::invalid_argument);
}
