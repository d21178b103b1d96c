#include "homa/invariants.hpp"

#include <chrono>
#include <cmath>

#include "homa/adapters.hpp"
#include "homa/inference.hpp"
#include "homa/rng.hpp"

namespace homa::invariants {

using ag::Var;

namespace {

class Tally {
public:
    explicit Tally(std::string name) : start_(std::chrono::steady_clock::now()) { r_.name = std::move(name); }
    void check(bool ok, const std::string& what) {
        ++r_.checks;
        if (ok) return;
        if (r_.failures++ == 0) r_.detail = what;
    }
    SuiteResult finish() {
        r_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return r_;
    }

private:
    SuiteResult r_;
    std::chrono::steady_clock::time_point start_;
};

bool rows_equal(const Array& a, const Array& b, std::int64_t row, std::int64_t d) {
    return std::equal(a.ptr() + row * d, a.ptr() + (row + 1) * d, b.ptr() + row * d);
}

}  // namespace

nlohmann::json to_json(const SuiteResult& r) {
    return {{"name", r.name},     {"passed", r.passed()}, {"checks", r.checks},
            {"failures", r.failures}, {"seconds", r.seconds}, {"detail", r.detail}};
}

SuiteResult masked_locality(std::int64_t trials, std::uint64_t seed) {
    Tally tally("masked_locality");
    Rng rng(seed);
    backbone::BackboneConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.n_layers = 4;
    cfg.text_dim = 16;
    const std::int64_t d = cfg.d_model;
    for (std::int64_t trial = 0; trial < trials; ++trial) {
        // Fresh random weights every few trials, including the zero-initialized parts.
        ParameterStore store;
        backbone::init_backbone(store, cfg, rng);
        const auto layers = adapters::even_layers(cfg.n_layers);
        adapters::attach_hoi_adapters(store, cfg, layers, rng);
        adapters::attach_audio_adapters(store, cfg, layers, 16, rng);
        for (const auto& n : store.names("adapters."))
            store.assign(n, rng.normal_array(store.get(n).value().shape(), rng.uniform(0.05, 0.5)));

        const std::int64_t f = 1 + trial % 3, hp = 1 + trial % 2, wp = 2, L = f * hp * wp;
        const auto idx = codec::grid_index(f, hp, wp);
        Var video = Var::constant(rng.normal_array({L, d}, rng.uniform(0.5, 3.0)));
        Var obj = Var::constant(rng.normal_array({hp * wp, d}));
        Var sem = Var::constant(rng.normal_array({1, cfg.text_dim}));
        Var temb = backbone::timestep_embed(store, rng.uniform());
        Var audio = Var::constant(rng.normal_array({f, d}));
        auto mask = std::make_shared<std::vector<std::uint8_t>>(L);
        const double p = trial % 10 == 0 ? 0.0 : rng.uniform();
        for (auto& m : *mask) m = rng.uniform() < p;
        const auto layer = layers[trial % layers.size()];
        const auto variant = trial % 2 ? adapters::AdapterVariant::self_attn : adapters::AdapterVariant::cross_attn;
        adapters::HoiInputs in{video, idx, obj, hp, wp, mask, sem, temb};
        const Array h = adapters::hoi_adapter_forward(store, cfg, layer, in, variant).value();
        const Array a = adapters::face_cross_attention(store, cfg, layer, video, idx, audio, mask).value();
        for (std::int64_t r = 0; r < L; ++r) {
            if ((*mask)[r]) continue;
            const std::string where = "trial " + std::to_string(trial) + " row " + std::to_string(r);
            tally.check(rows_equal(h, video.value(), r, d), "HOI adapter changed an unmasked token: " + where);
            tally.check(rows_equal(a, video.value(), r, d), "audio adapter changed an unmasked token: " + where);
        }
    }
    return tally.finish();
}

SuiteResult rope_properties(std::uint64_t seed) {
    Tally tally("rope");
    Rng rng(seed);
    const std::int64_t dh = 16, pairs = dh / 2;
    const double theta = 10000.0;
    const auto split = backbone::rope_split(dh);
    tally.check(split.frame == 2 * split.row && split.row == split.col && split.frame + split.row + split.col == pairs,
                "pair split is not 2:1:1");
    for (double ph : backbone::rope_phases({0, 0, 0}, dh, theta)) tally.check(ph == 0.0, "origin phase is not zero");
    const auto p0 = backbone::rope_phases({0, 1, 2}, dh, theta), pm1 = backbone::rope_phases({-1, 1, 2}, dh, theta),
               pm2 = backbone::rope_phases({-2, 1, 2}, dh, theta);
    for (std::int64_t i = 0; i < pairs; ++i) {
        tally.check(std::abs((p0[i] - pm1[i]) - (pm1[i] - pm2[i])) < 1e-12, "frame offsets are not linear");
        if (i < split.frame) {
            const double expect = std::pow(theta, -static_cast<double>(i) / static_cast<double>(split.frame));
            tally.check(std::abs((p0[i] - pm1[i]) - expect) < 1e-12, "frame -1 phase step differs from theta^(-i/n)");
        } else {
            tally.check(p0[i] == pm1[i], "frame offset leaked into spatial pairs");
        }
    }
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<codec::TokenIndex> idx;
        for (int k = 0; k < 4; ++k)
            idx.push_back({rng.integer(-2, 6), rng.integer(0, 5), rng.integer(0, 5)});
        const codec::TokenIndex shift{rng.integer(-3, 3), rng.integer(-3, 3), rng.integer(-3, 3)};
        auto shifted = idx;
        for (auto& t : shifted) t = {t.frame + shift.frame, t.row + shift.row, t.col + shift.col};
        Var q = Var::constant(rng.normal_array({4, dh})), k = Var::constant(rng.normal_array({4, dh}));
        const auto [c1, s1] = backbone::rope_tables(idx, dh, theta);
        const auto [c2, s2] = backbone::rope_tables(shifted, dh, theta);
        const Array q1 = ag::rope(q, c1, s1, 1).value(), k1 = ag::rope(k, c1, s1, 1).value();
        const Array q2 = ag::rope(q, c2, s2, 1).value(), k2 = ag::rope(k, c2, s2, 1).value();
        for (std::int64_t r = 0; r < 4; ++r) {
            double n0 = 0, n1 = 0;
            for (std::int64_t c = 0; c < dh; ++c) {
                n0 += q.value()[r * dh + c] * q.value()[r * dh + c];
                n1 += q1[r * dh + c] * q1[r * dh + c];
            }
            tally.check(std::abs(n0 - n1) < 1e-9 * (1 + n0), "rotation changed a norm");
            for (std::int64_t s = 0; s < 4; ++s) {
                double d1 = 0, d2 = 0;
                for (std::int64_t c = 0; c < dh; ++c) {
                    d1 += q1[r * dh + c] * k1[s * dh + c];
                    d2 += q2[r * dh + c] * k2[s * dh + c];
                }
                tally.check(std::abs(d1 - d2) < 1e-9 * (1 + std::abs(d1)), "scores depend on absolute positions");
            }
        }
    }
    return tally.finish();
}

SuiteResult blend_weights() {
    Tally tally("blend_weights");
    for (std::int64_t total = 1; total <= 24; ++total)
        for (std::int64_t len = 2; len <= 8; ++len)
            for (std::int64_t ov = 1; ov < len; ++ov) {
                const auto plan = inference::plan_segments(total, len, ov);
                const std::string tag = std::to_string(total) + "/" + std::to_string(len) + "/" + std::to_string(ov);
                for (std::int64_t g = 0; g < total; ++g) {
                    const auto c = plan.contributors(g);
                    double sum = 0, raw_total = 0;
                    for (auto [s, w] : c) {
                        const std::int64_t k = g - plan.windows[s].first,
                                           n = plan.windows[s].second - plan.windows[s].first;
                        raw_total += static_cast<double>(std::min(k + 1, n - k));
                    }
                    for (auto [s, w] : c) {
                        const std::int64_t k = g - plan.windows[s].first,
                                           n = plan.windows[s].second - plan.windows[s].first;
                        const double expect = static_cast<double>(std::min(k + 1, n - k)) / raw_total;
                        tally.check(std::abs(w - expect) < 1e-12, "weight differs from the triangular formula at " + tag);
                        sum += w;
                    }
                    tally.check(!c.empty() && sum == 1.0, "weights do not sum to exactly 1 at " + tag);
                    if (c.size() == 1) tally.check(c[0].second == 1.0, "single-owner weight is not 1 at " + tag);
                }
            }
    return tally.finish();
}

std::vector<SuiteResult> run_all(std::uint64_t seed) {
    return {masked_locality(100, seed), rope_properties(seed), blend_weights()};
}

}  // namespace homa::invariants
