#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace homa::service {

enum class JobStatus { queued, running, done, failed };
std::string status_name(JobStatus s);

struct JobRecord {
    std::string job_id;
    std::string kind = "infer";
    JobStatus status = JobStatus::queued;
    std::string input_hash;
    std::string output_path;
    std::int64_t n_frames = 0;
    nlohmann::json metadata;
    std::string error;
};
nlohmann::json to_json(const JobRecord& j);

struct ServiceOptions {
    /// Trained bundle; empty disables inference jobs.
    std::string model_dir;
    /// Where job outputs are written and served from under /files.
    std::string jobs_dir = "homa_jobs";
};

/// HTTP front end for the condition editor. Requests are handled
/// concurrently; inference jobs run one at a time in submission order.
class Service {
public:
    explicit Service(ServiceOptions opt);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Bind (port 0 picks a free port) and serve on a background thread; returns the port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Serve on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

    std::optional<JobRecord> job(const std::string& id) const;
    /// Block until the job leaves the queue or `timeout_s` elapses.
    std::optional<JobRecord> wait(const std::string& id, double timeout_s) const;
    bool model_loaded() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace homa::service
