#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "homa/model.hpp"
#include "homa/rng.hpp"
#include "homa/synthetic.hpp"
#include "homa/training.hpp"

namespace homa::testing {

inline model::ModelConfig tiny_config(std::int64_t layers = 4) {
    model::ModelConfig c;
    c.backbone.d_model = 32;
    c.backbone.n_heads = 2;
    c.backbone.n_layers = layers;
    c.backbone.text_dim = 16;
    return c;
}

inline void randomize(ParameterStore& store, const std::string& prefix, std::uint64_t seed, double scale = 0.2) {
    Rng rng(seed);
    for (const auto& n : store.names(prefix)) store.assign(n, rng.normal_array(store.get(n).value().shape(), scale));
}

inline bool bit_equal(const Array& a, const Array& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.ptr(), b.ptr(), static_cast<std::size_t>(a.numel()) * sizeof(double)) == 0;
}

struct GradCheckReport {
    std::int64_t checked = 0;
    double worst_relative = 0.0;
    std::string worst_param;
};

/// Central differences against reverse mode on `per_tensor` random entries of
/// every parameter, for the flow loss at a fixed (t, noise). An entry counts as
/// relative error |a - n| / max(|a|, |n|, floor).
inline GradCheckReport gradient_check(model::HomaModel& m, const Array& z0, const model::LatentConditions& cond,
                                      double t, const Array& noise, std::int64_t per_tensor, std::uint64_t seed,
                                      double eps = 1e-5, double floor = 1e-6) {
    auto& store = m.params();
    store.zero_grad();
    ag::backward(training::flow_match_loss(m, z0, cond, t, noise));
    std::map<std::string, Array> analytic;
    for (const auto& n : store.names()) analytic.emplace(n, store.get(n).grad());
    auto loss_at = [&] {
        ag::NoGradGuard g;
        return training::flow_match_loss(m, z0, cond, t, noise).value()[0];
    };
    GradCheckReport rep;
    Rng rng(seed);
    for (const auto& n : store.names()) {
        Array& w = store.get(n).mutable_value();
        for (std::int64_t k = 0; k < std::min<std::int64_t>(per_tensor, w.numel()); ++k) {
            const std::int64_t i = rng.integer(0, w.numel() - 1);
            const double keep = w[i];
            w[i] = keep + eps;
            const double up = loss_at();
            w[i] = keep - eps;
            const double down = loss_at();
            w[i] = keep;
            const double num = (up - down) / (2 * eps), a = analytic.at(n)[i];
            const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
            ++rep.checked;
            if (rel > rep.worst_relative) rep.worst_relative = rel, rep.worst_param = n + "[" + std::to_string(i) + "]";
        }
    }
    return rep;
}

}  // namespace homa::testing
