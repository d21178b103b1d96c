#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homa/image.hpp"

namespace homa::curation {

struct Mask {
    std::int64_t height = 0, width = 0;
    std::vector<std::uint8_t> values;
    std::int64_t area() const;
};

struct DepthMap {
    std::int64_t height = 0, width = 0;
    std::vector<double> values;
};

enum class DepthRule { relative, absolute };

struct DepthVerdict {
    bool keep = false;
    /// Relative (or absolute) gap between the mean object and mean hand depths; NaN when a mask is empty.
    double delta = 0.0;
    double mean_object = 0.0, mean_hand = 0.0;
    std::string reason;
};

/// delta = |mean(depth | object) - mean(depth | hand)| / mean(depth | hand);
/// keep iff delta <= tau. Empty masks reject with a reason; non-positive
/// depths or mismatched sizes throw.
DepthVerdict depth_filter(const Mask& object, const Mask& hand, const DepthMap& depth, double tau,
                          DepthRule rule = DepthRule::relative);

struct ClipInput {
    std::string clip_id;
    std::string dir;
    std::vector<std::string> frame_paths;
};

struct HoiVerdict {
    bool has_hoi = false;
    std::string caption;
};

class HoiRecognizer {
public:
    virtual ~HoiRecognizer() = default;
    virtual HoiVerdict recognize(const ClipInput& clip) const = 0;
};
class ObjectGrounder {
public:
    virtual ~ObjectGrounder() = default;
    virtual Mask ground(const Frame& frame, const std::string& caption) const = 0;
};
class HandSegmenter {
public:
    virtual ~HandSegmenter() = default;
    virtual Mask segment(const Frame& frame) const = 0;
};
class DepthEstimator {
public:
    virtual ~DepthEstimator() = default;
    virtual DepthMap estimate(const ClipInput& clip, std::int64_t frame_index, const Frame& frame) const = 0;
};

/// All methods must be safe to call concurrently.
struct PerceptionBackends {
    std::shared_ptr<const HoiRecognizer> recognizer;
    std::shared_ptr<const ObjectGrounder> grounder;
    std::shared_ptr<const HandSegmenter> hands;
    std::shared_ptr<const DepthEstimator> depth;
};

/// Backends for the synthetic fixture: the recognizer reads annotations.json,
/// masks come from colour matching (skin tone for hands, the caption's colour
/// word for the object) and depth from depth_NNNN.png (uint16 millimetres).
PerceptionBackends fixture_backends();

struct FrameResult {
    std::int64_t frame_index = 0;
    std::int64_t object_area = 0, hand_area = 0;
    double mean_object_depth = 0.0, mean_hand_depth = 0.0, delta = 0.0;
    bool pass = false;
    std::string reason;
};

struct ClipRecord {
    std::string clip_id;
    std::vector<std::string> frame_paths;
    bool has_hoi = false;
    std::string object_caption;
    std::vector<FrameResult> frames;
    double mean_object_depth = 0.0, mean_hand_depth = 0.0;
    bool keep = false;
    std::string reject_reason;
};
nlohmann::json to_json(const ClipRecord& r);
ClipRecord record_from_json(const nlohmann::json& j);

/// `count` evenly spaced indices in [0, n), including both ends when count > 1.
std::vector<std::int64_t> sample_frame_indices(std::int64_t n, std::int64_t count);

struct CurateOptions {
    double tau = 0.15;
    DepthRule rule = DepthRule::relative;
    std::int64_t sample_frames = 5;
    std::int64_t workers = 1;
    /// Stop after this many new records (simulates an interrupted run).
    std::optional<std::int64_t> limit;
};

/// Evaluate one clip: recognizer first, then masks and depth on sampled frames;
/// keep iff has_hoi and at least half of the sampled frames pass.
ClipRecord curate_clip(const ClipInput& clip, const PerceptionBackends& backends, const CurateOptions& opt);

/// Curate clips with a worker pool, appending one JSON line per record to
/// `manifest_path` (when non-empty). Clips already in the manifest are
/// skipped. Returns the records in input order.
std::vector<ClipRecord> curate(const std::vector<ClipInput>& clips, const PerceptionBackends& backends,
                               const CurateOptions& opt, const std::string& manifest_path = "");

/// Records of a manifest; a torn final line is ignored.
std::vector<ClipRecord> load_manifest(const std::string& path);

/// Subdirectories of `dir` holding frame_NNNN.png files, sorted by name.
std::vector<ClipInput> discover_clips(const std::string& dir);

/// Six clips: three with the object held at hand depth and three with the
/// object in the background. Returns the ids of the interacting clips.
std::vector<std::string> write_depth_fixture(const std::string& dir, std::uint64_t seed = 0);

}  // namespace homa::curation
