#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace homa::invariants {

struct SuiteResult {
    std::string name;
    std::int64_t checks = 0;
    std::int64_t failures = 0;
    double seconds = 0.0;
    /// First failure, if any.
    std::string detail;
    bool passed() const { return checks > 0 && failures == 0; }
};
nlohmann::json to_json(const SuiteResult& r);

/// HOI and audio adapters with random weights, inputs and masks: rows outside
/// the mask are bit-identical to the input; an all-zero mask is the identity.
SuiteResult masked_locality(std::int64_t trials = 100, std::uint64_t seed = 0);

/// Rotary phases: origin is the identity, frame offsets shift phases linearly,
/// rotations preserve norms and inner products depend only on index differences.
SuiteResult rope_properties(std::uint64_t seed = 0);

/// Segment plans: weights match the triangular formula, sum to exactly 1 per
/// frame and are 1 on frames owned by a single window.
SuiteResult blend_weights();

std::vector<SuiteResult> run_all(std::uint64_t seed = 0);

}  // namespace homa::invariants
