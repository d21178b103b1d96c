#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "homa/app.hpp"
#include "homa/curation.hpp"
#include "homa/image.hpp"

using namespace homa;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

const fs::path& work() {
    static const struct Dir {
        fs::path p = fs::temp_directory_path() / ("homa_cli_" + std::to_string(::getpid()));
        Dir() { fs::create_directories(p); }
        ~Dir() { fs::remove_all(p); }
    } d;
    return d.p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Run homa_cli(const std::string& args) {
    const auto out = work() / "stdout.txt", err = work() / "stderr.txt";
    const std::string cmd = std::string(HOMA_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

std::vector<json> json_lines(const std::string& s) {
    std::vector<json> v;
    std::istringstream is(s);
    for (std::string line; std::getline(is, line);)
        if (!line.empty() && line[0] == '{') v.push_back(json::parse(line));
    return v;
}

const fs::path& fixtures() {
    static const fs::path dir = [] {
        const auto d = work() / "fx";
        const auto r = homa_cli("fixtures --out " + d.string());
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("fixtures") {
    const auto& d = fixtures();
    for (const char* f : {"conditions.json", "midpoint.json", "human.png", "object.png", "audio.wav", "features.json"})
        CHECK(fs::exists(d / f));
    CHECK(fs::exists(d / "curation" / "clip_0"));
}

TEST_CASE("rasterize matches the library byte for byte") {
    const auto out = work() / "rast";
    const auto r = homa_cli("rasterize --conditions " + (fixtures() / "conditions.json").string() + " --res 32x48 --out " +
                            out.string());
    REQUIRE(r.code == 0);
    const auto clip = conditions::load_condition_file((fixtures() / "conditions.json").string());
    const Video local = app::rasterize_preview(clip, {32, 48});
    CHECK(json_lines(r.out).at(0)["n"] == clip.n());
    for (std::size_t i = 0; i < local.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", i);
        const auto bytes = io::encode_png(local[i]);
        CHECK(slurp(out / name) == std::string(bytes.begin(), bytes.end()));
    }
    CHECK_FALSE(fs::exists(out / "frame_0009.png"));
}

TEST_CASE("config files supply defaults that flags override") {
    const auto cfg = work() / "rast.json";
    std::ofstream(cfg) << R"({"res": "16x24"})";
    const auto cond = (fixtures() / "conditions.json").string();
    REQUIRE(homa_cli("rasterize --config " + cfg.string() + " --conditions " + cond + " --out " + (work() / "c1").string())
                .code == 0);
    CHECK(io::read_png((work() / "c1" / "frame_0000.png").string()).height == 16);
    REQUIRE(homa_cli("rasterize --config " + cfg.string() + " --res 40x40 --conditions " + cond + " --out " +
                     (work() / "c2").string())
                .code == 0);
    CHECK(io::read_png((work() / "c2" / "frame_0000.png").string()).height == 40);
}

TEST_CASE("usage errors exit 2 with a JSON error line") {
    for (const std::string args : {"rasterize --conditions x.json", "rasterize --bogus 1 --conditions x --out y",
                                   "infer --steps 0 --conditions x --out y", "", "frobnicate"}) {
        const auto r = homa_cli(args);
        CHECK_MESSAGE(r.code == 2, args);
        const auto lines = json_lines(r.err);
        REQUIRE_MESSAGE(!lines.empty(), args);
        CHECK(lines.back()["error"]["type"] == "usage");
    }
    const auto r = homa_cli("rasterize --config " + (work() / "missing.json").string() + " --conditions x --out y");
    CHECK(r.code == 2);
}

TEST_CASE("invalid condition files report the field path") {
    auto j = json::parse(slurp(fixtures() / "conditions.json"));
    j["object_motion"]["frames"][3]["cx"] = -0.5;
    const auto bad = work() / "bad.json";
    std::ofstream(bad) << j.dump();
    const auto r = homa_cli("rasterize --conditions " + bad.string() + " --out " + (work() / "bad").string());
    CHECK(r.code == 1);
    const auto e = json_lines(r.err).at(0)["error"];
    CHECK(e["type"] == "condition");
    CHECK(e["path"].get<std::string>().rfind("object_motion.frames[3]", 0) == 0);
}

TEST_CASE("eval-invariants") {
    const auto r = homa_cli("eval-invariants --trials 20");
    CHECK(r.code == 0);
    const auto lines = json_lines(r.out);
    REQUIRE(lines.size() == 3);
    for (const auto& l : lines) {
        CHECK(l["failures"] == 0);
        CHECK(l["checks"].get<std::int64_t>() > 0);
    }
}

TEST_CASE("curate is resumable") {
    const auto manifest = work() / "manifest.jsonl";
    const std::string args =
        "curate --clips " + (fixtures() / "curation").string() + " --manifest " + manifest.string() + " --workers 2";
    auto r = homa_cli(args + " --limit 4");
    REQUIRE(r.code == 0);
    CHECK(json_lines(r.out).at(0)["processed"] == 4);
    r = homa_cli(args);
    REQUIRE(r.code == 0);
    CHECK(json_lines(r.out).at(0)["processed"] == 2);
    const auto recs = curation::load_manifest(manifest.string());
    REQUIRE(recs.size() == 6);
    std::vector<std::string> kept;
    for (const auto& rec : recs)
        if (rec.keep) kept.push_back(rec.clip_id);
    std::sort(kept.begin(), kept.end());
    CHECK(kept == std::vector<std::string>{"clip_0", "clip_2", "clip_4"});
    r = homa_cli(args);
    CHECK(json_lines(r.out).at(0)["processed"] == 0);
    CHECK(curation::load_manifest(manifest.string()).size() == 6);
}

TEST_CASE("train then infer") {
    const auto cfg = work() / "tiny.json";
    std::ofstream(cfg) << R"({"seed": 1, "model": {"backbone": {"d_model": 32, "n_heads": 2, "n_layers": 2, "text_dim": 16}},
        "stages": [{"name": "stage1", "resolution": "32x32", "steps": 2, "conditions": {"pose": true, "object": false, "audio": false}},
                   {"name": "stage2", "resolution": "32x32", "steps": 2}],
        "data": {"clips": 2, "frames": 5}, "codec_steps": 3})";
    const auto model = work() / "model";
    auto r = homa_cli("train --config " + cfg.string() + " --out " + model.string());
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* f : {"config.json", "codec.ckpt", "model.ckpt", "stage_stage1.ckpt", "stage_stage2.ckpt", "losses.csv"})
        CHECK(fs::exists(model / f));

    const std::string base = "infer --model " + model.string() + " --conditions " + (fixtures() / "conditions.json").string() +
                             " --audio " + (fixtures() / "audio.wav").string() + " --steps 2 --seed 3 --out ";
    r = homa_cli(base + (work() / "i1").string());
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto meta = json::parse(slurp(work() / "i1" / "metadata.json"));
    CHECK(meta["n"] == 9);
    CHECK(meta["audio"] == true);
    CHECK(meta["seed"] == 3);
    CHECK(fs::exists(work() / "i1" / "frame_0008.png"));
    CHECK_FALSE(fs::exists(work() / "i1" / "frame_0009.png"));

    REQUIRE(homa_cli(base + (work() / "i2").string()).code == 0);
    for (int k = 0; k < 9; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.png", k);
        CHECK(slurp(work() / "i1" / name) == slurp(work() / "i2" / name));
    }

    r = homa_cli("infer --model " + (work() / "nowhere").string() + " --conditions " +
                 (fixtures() / "conditions.json").string() + " --out " + (work() / "i3").string());
    CHECK(r.code == 1);
    CHECK(json_lines(r.err).at(0)["error"]["type"] == "runtime");
}
