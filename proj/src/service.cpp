#include "homa/service.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "homa/app.hpp"

namespace homa::service {

namespace fs = std::filesystem;
using nlohmann::json;

std::string status_name(JobStatus s) {
    switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "unknown";
}

json to_json(const JobRecord& j) {
    json frames = json::array();
    if (j.status == JobStatus::done) {
        char name[32];
        for (std::int64_t k = 0; k < j.n_frames; ++k) {
            std::snprintf(name, sizeof name, "frame_%04lld.png", static_cast<long long>(k));
            frames.push_back("/files/" + j.job_id + "/" + name);
        }
    }
    return {{"job_id", j.job_id},           {"kind", j.kind},
            {"status", status_name(j.status)}, {"input_hash", j.input_hash},
            {"output_path", j.output_path},  {"n_frames", j.n_frames},
            {"frames", frames},              {"metadata", j.metadata},
            {"error", j.error.empty() ? json() : json(j.error)}};
}

namespace {

/// Request error with the JSON path of the offending field.
struct FieldError : std::invalid_argument {
    std::string path;
    int status;
    FieldError(std::string p, const std::string& msg, int code = 422)
        : std::invalid_argument(msg), path(std::move(p)), status(code) {}
};

json error_body(const std::string& path, const std::string& message) {
    return {{"error", {{"path", path}, {"message", message}}}};
}

void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw FieldError("$", std::string("malformed JSON: ") + e.what(), 400);
    }
}

conditions::ConditionClip parse_conditions(const json& j, const std::string& prefix) {
    try {
        auto clip = conditions::from_json(j);
        conditions::validate(clip);
        return clip;
    } catch (const conditions::ConditionError& e) {
        const std::string msg = e.what();
        const auto cut = msg.find(": ");
        throw FieldError(prefix.empty() ? e.path() : prefix + "." + e.path(),
                         cut == std::string::npos ? msg : msg.substr(cut + 2));
    }
}

const json& require(const json& body, const std::string& key) {
    if (!body.is_object()) throw FieldError("$", "expected a JSON object");
    if (!body.contains(key)) throw FieldError(key, "missing required key");
    return body.at(key);
}

std::int64_t int_field(const json& body, const std::string& key, std::int64_t fallback, std::int64_t lo) {
    if (!body.contains(key)) return fallback;
    const auto& v = body.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < lo)
        throw FieldError(key, "expected an integer >= " + std::to_string(lo));
    return v.get<std::int64_t>();
}

conditions::Resolution resolution_field(const json& body, conditions::Resolution fallback) {
    if (!body.contains("resolution")) return fallback;
    try {
        return conditions::parse_resolution(body.at("resolution").get<std::string>());
    } catch (const std::exception& e) {
        throw FieldError("resolution", e.what());
    }
}

std::string base64_decode(const std::string& in) {
    static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : in) {
        if (c == '=') break;
        const auto v = alphabet.find(c);
        if (v == std::string::npos) throw std::invalid_argument("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

Frame png_field(const json& body, const std::string& key) {
    const auto& v = body.at(key);
    if (!v.is_string()) throw FieldError(key, "expected a base64 PNG string");
    try {
        const std::string raw = base64_decode(v.get<std::string>());
        return io::decode_png(std::vector<std::uint8_t>(raw.begin(), raw.end()));
    } catch (const std::exception& e) {
        throw FieldError(key, e.what());
    }
}

std::string png_base64(const Frame& f) {
    const auto bytes = io::encode_png(f);
    return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

}  // namespace

struct Service::Impl {
    ServiceOptions opt;
    httplib::Server server;
    std::thread http_thread, worker;
    std::optional<app::Bundle> bundle;
    std::string load_error;

    mutable std::mutex mu;
    mutable std::condition_variable cv;
    std::map<std::string, JobRecord> jobs;
    std::map<std::string, app::InferRequest> pending;
    std::deque<std::string> queue;
    std::int64_t next_id = 1;
    bool stopping = false;

    explicit Impl(ServiceOptions o) : opt(std::move(o)) {
        fs::create_directories(opt.jobs_dir);
        if (!opt.model_dir.empty()) {
            try {
                bundle = app::load_bundle(opt.model_dir);
            } catch (const std::exception& e) {
                load_error = e.what();
            }
        } else {
            load_error = "no model directory configured (set HOMA_MODEL_DIR)";
        }
        routes();
        worker = std::thread([this] { work(); });
    }

    void transition(const std::string& id, JobStatus to) {
        auto& j = jobs.at(id);
        if (static_cast<int>(to) <= static_cast<int>(j.status) || j.status == JobStatus::done ||
            j.status == JobStatus::failed)
            throw std::logic_error("illegal job transition " + status_name(j.status) + " -> " + status_name(to));
        j.status = to;
    }

    void work() {
        for (;;) {
            std::string id;
            app::InferRequest req;
            {
                std::unique_lock lock(mu);
                cv.wait(lock, [&] { return stopping || !queue.empty(); });
                if (stopping) return;
                id = queue.front();
                queue.pop_front();
                req = std::move(pending.at(id));
                pending.erase(id);
                transition(id, JobStatus::running);
            }
            cv.notify_all();
            const std::string out = (fs::path(opt.jobs_dir) / id).string();
            try {
                auto result = app::run_inference(*bundle, req, out);
                std::lock_guard lock(mu);
                auto& j = jobs.at(id);
                j.n_frames = static_cast<std::int64_t>(result.video.size());
                j.metadata = result.metadata;
                transition(id, JobStatus::done);
            } catch (const std::exception& e) {
                std::lock_guard lock(mu);
                jobs.at(id).error = e.what();
                transition(id, JobStatus::failed);
            }
            cv.notify_all();
        }
    }

    template <class F>
    static void guarded(httplib::Response& res, F&& f) {
        try {
            f();
        } catch (const FieldError& e) {
            send(res, e.status, error_body(e.path, e.what()));
        } catch (const std::exception& e) {
            send(res, 500, error_body("$", e.what()));
        }
    }

    void routes() {
        server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            send(res, 200,
                 {{"status", "ok"}, {"model_loaded", bundle.has_value()}, {"model_dir", opt.model_dir},
                  {"model_error", load_error.empty() ? json() : json(load_error)}});
        });
        server.Post("/conditions/validate", [](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto clip = parse_conditions(parse_body(req), "");
                send(res, 200, {{"valid", true}, {"n", clip.n()}, {"hash", app::condition_hash(clip)}});
            });
        });
        server.Post("/conditions/interpolate", [](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                const auto clip = parse_conditions(require(body, "conditions"), "conditions");
                const auto& ed = require(body, "edited");
                if (!ed.is_array()) throw FieldError("edited", "expected an array of frame indices");
                std::vector<std::int64_t> edited;
                for (std::size_t i = 0; i < ed.size(); ++i) {
                    if (!ed[i].is_number_integer())
                        throw FieldError("edited[" + std::to_string(i) + "]", "expected an integer");
                    edited.push_back(ed[i].get<std::int64_t>());
                }
                conditions::ConditionClip out;
                try {
                    out = conditions::interpolate_keyframes(clip, edited);
                } catch (const std::invalid_argument& e) {
                    throw FieldError("edited", e.what());
                }
                send(res, 200, {{"conditions", conditions::to_json(out)}});
            });
        });
        server.Post("/rasterize", [](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                const auto clip = parse_conditions(require(body, "conditions"), "conditions");
                const auto r = resolution_field(body, {64, 64});
                const Video v = app::rasterize_preview(clip, r);
                json frames = json::array();
                for (const auto& f : v) frames.push_back(png_base64(f));
                send(res, 200, {{"n", v.size()}, {"height", r.height}, {"width", r.width}, {"frames", frames}});
            });
        });
        server.Post("/jobs/infer", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                app::InferRequest r;
                r.clip = parse_conditions(require(body, "conditions"), "conditions");
                if (r.clip.audio_path) throw FieldError("conditions.audio_path", "send audio as audio_features");
                r.options.sampler.steps = int_field(body, "steps", 50, 1);
                r.options.sampler.seed = static_cast<std::uint64_t>(int_field(body, "seed", 0, 0));
                r.options.segment_len = int_field(body, "segment_len", r.options.segment_len, 2);
                r.options.overlap = int_field(body, "overlap", r.options.overlap, 1);
                if (r.options.overlap >= r.options.segment_len)
                    throw FieldError("overlap", "must be smaller than segment_len");
                if (body.contains("resolution")) r.resolution = resolution_field(body, {});
                if (body.contains("human_png")) r.human = png_field(body, "human_png");
                if (body.contains("object_png")) r.object = png_field(body, "object_png");
                if (body.contains("audio_features")) {
                    const auto& a = body.at("audio_features");
                    if (!a.is_array() || static_cast<std::int64_t>(a.size()) != r.clip.n())
                        throw FieldError("audio_features", "expected one feature vector per frame");
                    const auto width = a.empty() || !a[0].is_array() ? 0 : static_cast<std::int64_t>(a[0].size());
                    Array feats(Shape{r.clip.n(), width});
                    for (std::int64_t i = 0; i < r.clip.n(); ++i) {
                        if (!a[i].is_array() || static_cast<std::int64_t>(a[i].size()) != width)
                            throw FieldError("audio_features[" + std::to_string(i) + "]", "ragged feature rows");
                        for (std::int64_t k = 0; k < width; ++k) feats[i * width + k] = a[i][k].get<double>();
                    }
                    r.audio = std::move(feats);
                }
                if (!bundle) throw FieldError("$", "inference unavailable: " + load_error, 503);
                JobRecord job;
                job.input_hash = app::condition_hash(r.clip);
                {
                    std::lock_guard lock(mu);
                    char id[32];
                    std::snprintf(id, sizeof id, "job-%06lld", static_cast<long long>(next_id++));
                    job.job_id = id;
                    job.output_path = (fs::path(opt.jobs_dir) / id).string();
                    jobs.emplace(job.job_id, job);
                    pending.emplace(job.job_id, std::move(r));
                    queue.push_back(job.job_id);
                }
                cv.notify_all();
                send(res, 202, {{"job_id", job.job_id}, {"status", "queued"}, {"input_hash", job.input_hash}});
            });
        });
        server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mu);
            const auto it = jobs.find(req.matches[1]);
            if (it == jobs.end()) return send(res, 404, error_body("job_id", "unknown job " + std::string(req.matches[1])));
            send(res, 200, to_json(it->second));
        });
        server.set_mount_point("/files", opt.jobs_dir);
    }
};

Service::Service(ServiceOptions opt) : impl_(std::make_unique<Impl>(std::move(opt))) {}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
    int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    impl_->http_thread = std::thread([this] { impl_->server.listen_after_bind(); });
    return bound;
}

void Service::listen(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->http_thread.joinable()) impl_->http_thread.join();
    {
        std::lock_guard lock(impl_->mu);
        impl_->stopping = true;
    }
    impl_->cv.notify_all();
    if (impl_->worker.joinable()) impl_->worker.join();
}

std::optional<JobRecord> Service::job(const std::string& id) const {
    std::lock_guard lock(impl_->mu);
    const auto it = impl_->jobs.find(id);
    if (it == impl_->jobs.end()) return std::nullopt;
    return it->second;
}

std::optional<JobRecord> Service::wait(const std::string& id, double timeout_s) const {
    std::unique_lock lock(impl_->mu);
    impl_->cv.wait_for(lock, std::chrono::duration<double>(timeout_s), [&] {
        const auto it = impl_->jobs.find(id);
        return it == impl_->jobs.end() || it->second.status == JobStatus::done || it->second.status == JobStatus::failed;
    });
    const auto it = impl_->jobs.find(id);
    if (it == impl_->jobs.end()) return std::nullopt;
    return it->second;
}

bool Service::model_loaded() const { return impl_->bundle.has_value(); }

}  // namespace homa::service
