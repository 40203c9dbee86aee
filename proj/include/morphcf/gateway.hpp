#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "morphcf/synthetic.hpp"
#include "morphcf/types.hpp"

namespace morphcf {

struct Prediction {
    int label = 0;
    double probability = 0;
    std::string model_id;
};

/// Builds a prediction from a probability using the shared tie rule.
Prediction make_prediction(double probability, std::string model_id);

struct PredictRequest {
    const Volume* volume = nullptr;
    const SegmentMap* segmap = nullptr;  // optional; the synthetic model needs it
};

/// A model that maps volumes to probabilities.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual std::string id() const = 0;
    /// One probability per request, in request order.
    virtual std::vector<double> predict(std::span<const PredictRequest> batch) = 0;
};

class SyntheticBackend final : public ModelBackend {
public:
    explicit SyntheticBackend(synthetic::Constants constants = {}) : constants_(constants) {}
    std::string id() const override { return "synthetic"; }
    std::vector<double> predict(std::span<const PredictRequest> batch) override;

private:
    synthetic::Constants constants_;
};

enum class Transport { subprocess, http };

struct ExternalModelConfig {
    Transport transport = Transport::subprocess;
    std::string endpoint;  // shell command line, or http://host:port/path
    double timeout_seconds = 30.0;
    std::size_t batch_size = 16;

    void validate() const;
};

// Wire protocol, one JSON object per line, UTF-8, '\n'-terminated:
//   request:  {"id":"<volume id>","frames":F,"height":H,"width":W,"pixels":"<base64>"}
//   response: {"id":"<volume id>","probability":P}
// `pixels` is the standard base64 (RFC 4648, padded) encoding of the raw frame-major,
// row-major byte buffer. Responses are matched by id and may arrive in any order.
// Over HTTP a batch is one POST whose body holds the request lines; the response body holds
// the response lines.
std::string encode_wire_request(const Volume& volume);

/// Parses response lines for the given batch ids. Throws TransportError naming the offending id.
std::vector<double> decode_wire_responses(std::span<const std::string> lines, std::span<const std::string> ids);

/// Long-lived child process speaking the wire protocol over stdin/stdout.
class SubprocessBackend final : public ModelBackend {
public:
    explicit SubprocessBackend(ExternalModelConfig config);
    ~SubprocessBackend() override;
    std::string id() const override { return "cmd:" + config_.endpoint; }
    std::vector<double> predict(std::span<const PredictRequest> batch) override;

private:
    void start();
    void stop();
    std::string read_line(const std::string& pending_id, std::chrono::steady_clock::time_point deadline);

    ExternalModelConfig config_;
    std::mutex mutex_;  // one in-flight exchange per connection
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

class HttpBackend final : public ModelBackend {
public:
    explicit HttpBackend(ExternalModelConfig config);
    std::string id() const override { return "http:" + config_.endpoint; }
    std::vector<double> predict(std::span<const PredictRequest> batch) override;

private:
    ExternalModelConfig config_;
    std::string host_;
    int port_ = 80;
    std::string path_;
};

/// Parses `synthetic`, `cmd:<command line>` or `http:<url>`.
std::unique_ptr<ModelBackend> make_backend(const std::string& model_spec, double timeout_seconds = 30.0,
                                           std::size_t batch_size = 16);

/// Cached, batched prediction front end. Safe to share between threads.
class ClassifierGateway {
public:
    explicit ClassifierGateway(std::shared_ptr<ModelBackend> backend, std::size_t batch_size = 16);

    const std::string& model_id() const noexcept { return model_id_; }
    std::size_t batch_size() const noexcept { return batch_size_; }

    Prediction predict(const Volume& volume, const SegmentMap* segmap = nullptr);
    std::vector<Prediction> predict(std::span<const PredictRequest> batch);

    /// Number of backend invocations so far.
    std::size_t transport_calls() const noexcept { return transport_calls_.load(); }
    std::size_t cache_size() const;

    /// Digest of pixels (and segment map, when given) plus the model id.
    std::string cache_key(const Volume& volume, const SegmentMap* segmap) const;

private:
    std::shared_ptr<ModelBackend> backend_;
    std::string model_id_;
    std::size_t batch_size_;
    mutable std::shared_mutex cache_mutex_;
    std::unordered_map<std::string, double> cache_;
    std::atomic<std::size_t> transport_calls_{0};
};

}  // namespace morphcf
