#include "morphcf/gateway.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <set>

#include <json.hpp>

#include "morphcf/digest.hpp"
#include "morphcf/error.hpp"

namespace morphcf {

Prediction make_prediction(double probability, std::string model_id) {
    return {label_for(probability), probability, std::move(model_id)};
}

std::vector<double> SyntheticBackend::predict(std::span<const PredictRequest> batch) {
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& r : batch) {
        if (!r.segmap) throw ValidationError("synthetic model needs a segment map for " + r.volume->id());
        check_pairing(*r.volume, *r.segmap);
        out.push_back(synthetic::classify(*r.segmap, constants_).probability);
    }
    return out;
}

void ExternalModelConfig::validate() const {
    if (!(timeout_seconds > 0)) throw ValidationError("model timeout must be positive");
    if (batch_size < 1) throw ValidationError("model batch size must be at least 1");
    if (endpoint.empty()) throw ValidationError("model endpoint is empty");
}

std::string encode_wire_request(const Volume& volume) {
    nlohmann::ordered_json j;
    j["id"] = volume.id();
    j["frames"] = volume.dims().frames;
    j["height"] = volume.dims().height;
    j["width"] = volume.dims().width;
    j["pixels"] = base64_encode(volume.pixels());
    return j.dump() + "\n";
}

std::vector<double> decode_wire_responses(std::span<const std::string> lines, std::span<const std::string> ids) {
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < ids.size(); ++i) slot.emplace(ids[i], i);
    std::vector<std::optional<double>> got(ids.size());
    // A line without a usable id is charged to the first request still unanswered.
    auto first_open = [&]() -> std::string {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!got[i]) return ids[i];
        }
        return {};
    };
    for (const auto& line : lines) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw TransportError(TransportFailure::malformed_response, first_open(),
                                 "malformed model response (not JSON): " + line.substr(0, 200));
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
            throw TransportError(TransportFailure::malformed_response, first_open(),
                                 "malformed model response (no string id): " + line.substr(0, 200));
        }
        const auto id = j["id"].get<std::string>();
        auto it = slot.find(id);
        if (it == slot.end()) {
            throw TransportError(TransportFailure::malformed_response, id, "model response for unknown id " + id);
        }
        if (!j.contains("probability") || !j["probability"].is_number()) {
            throw TransportError(TransportFailure::malformed_response, id, "model response without numeric probability for " + id);
        }
        const double p = j["probability"].get<double>();
        if (!(p >= 0.0 && p <= 1.0)) {
            throw TransportError(TransportFailure::probability_out_of_range, id,
                                 "model probability " + j["probability"].dump() + " out of range for " + id);
        }
        if (got[it->second]) {
            throw TransportError(TransportFailure::malformed_response, id, "duplicate model response for " + id);
        }
        got[it->second] = p;
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!got[i]) {
            throw TransportError(TransportFailure::malformed_response, ids[i], "no model response for " + ids[i]);
        }
        out.push_back(*got[i]);
    }
    return out;
}

SubprocessBackend::SubprocessBackend(ExternalModelConfig config) : config_(std::move(config)) {
    config_.validate();
    struct sigaction ignore {};
    ignore.sa_handler = SIG_IGN;
    ::sigaction(SIGPIPE, &ignore, nullptr);
}

SubprocessBackend::~SubprocessBackend() { stop(); }

void SubprocessBackend::start() {
    int in_pipe[2], out_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0) {
        throw TransportError(TransportFailure::connection, "", "cannot create pipes for model process");
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError(TransportFailure::connection, "", "cannot fork model process");
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::execl("/bin/sh", "sh", "-c", config_.endpoint.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
}

void SubprocessBackend::stop() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        int status = 0;
        // Give a well-behaved model a moment to exit on EOF before killing it.
        for (int i = 0; i < 50 && ::waitpid(pid_, &status, WNOHANG) == 0; ++i) ::usleep(2000);
        if (::waitpid(pid_, &status, WNOHANG) == 0) {
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, &status, 0);
        }
    }
    pid_ = -1;
}

std::string SubprocessBackend::read_line(const std::string& pending_id, std::chrono::steady_clock::time_point deadline) {
    while (true) {
        auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            throw TransportError(TransportFailure::timeout, pending_id,
                                 "model timed out after " + std::to_string(config_.timeout_seconds) + " s waiting for " + pending_id);
        }
        pollfd pfd{from_child_, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
        if (rc < 0 && errno == EINTR) continue;
        if (rc == 0) continue;
        char chunk[65536];
        const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
        if (n <= 0) {
            throw TransportError(TransportFailure::connection, pending_id, "model process closed its output before answering " + pending_id);
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

std::vector<double> SubprocessBackend::predict(std::span<const PredictRequest> batch) {
    std::lock_guard lock(mutex_);
    if (batch.empty()) return {};
    if (pid_ < 0) start();
    std::vector<std::string> ids;
    std::string payload;
    for (const auto& r : batch) {
        ids.push_back(r.volume->id());
        payload += encode_wire_request(*r.volume);
    }
    try {
        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::milliseconds(static_cast<long long>(config_.timeout_seconds * 1000.0));
        std::size_t written = 0;
        while (written < payload.size()) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw TransportError(TransportFailure::timeout, ids.front(), "model timed out accepting requests");
            pollfd pfd{to_child_, POLLOUT, 0};
            if (::poll(&pfd, 1, static_cast<int>(left.count())) <= 0) continue;
            const ssize_t n = ::write(to_child_, payload.data() + written, payload.size() - written);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw TransportError(TransportFailure::connection, ids.front(), "model process is not accepting input");
            }
            written += static_cast<std::size_t>(n);
        }
        std::vector<std::string> lines;
        std::set<std::string> answered;
        while (lines.size() < ids.size()) {
            std::string pending;
            for (const auto& id : ids) {
                if (!answered.count(id)) {
                    pending = id;
                    break;
                }
            }
            auto line = read_line(pending, deadline);
            if (line.empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                if (j.is_object() && j.contains("id") && j["id"].is_string()) answered.insert(j["id"].get<std::string>());
            } catch (const nlohmann::json::exception&) {
            }
            lines.push_back(std::move(line));
        }
        return decode_wire_responses(lines, ids);
    } catch (const TransportError&) {
        // The stream position is unknown after a failure; restart on next use.
        stop();
        throw;
    }
}

std::unique_ptr<ModelBackend> make_backend(const std::string& spec, double timeout_seconds, std::size_t batch_size) {
    if (spec == "synthetic") return std::make_unique<SyntheticBackend>();
    ExternalModelConfig cfg;
    cfg.timeout_seconds = timeout_seconds;
    cfg.batch_size = batch_size;
    if (spec.rfind("cmd:", 0) == 0) {
        cfg.transport = Transport::subprocess;
        cfg.endpoint = spec.substr(4);
        return std::make_unique<SubprocessBackend>(cfg);
    }
    if (spec.rfind("http:", 0) == 0) {
        cfg.transport = Transport::http;
        cfg.endpoint = spec.substr(5);
        if (cfg.endpoint.rfind("//", 0) == 0) cfg.endpoint = "http:" + cfg.endpoint;
        return std::make_unique<HttpBackend>(cfg);
    }
    throw ValidationError("unknown model '" + spec + "'; expected synthetic, cmd:<command> or http:<url>");
}

ClassifierGateway::ClassifierGateway(std::shared_ptr<ModelBackend> backend, std::size_t batch_size)
    : backend_(std::move(backend)), model_id_(backend_->id()), batch_size_(batch_size) {
    if (batch_size_ < 1) throw ValidationError("gateway batch size must be at least 1");
}

std::string ClassifierGateway::cache_key(const Volume& volume, const SegmentMap* segmap) const {
    Sha256 h;
    h.update(to_string(volume.dims()));
    h.update(volume.pixels());
    if (segmap) {
        h.update(std::string_view("|segmap|"));
        h.update(segmap->labels());
    }
    return h.hex() + "|" + model_id_;
}

std::size_t ClassifierGateway::cache_size() const {
    std::shared_lock lock(cache_mutex_);
    return cache_.size();
}

Prediction ClassifierGateway::predict(const Volume& volume, const SegmentMap* segmap) {
    const PredictRequest r{&volume, segmap};
    return predict(std::span(&r, 1)).front();
}

std::vector<Prediction> ClassifierGateway::predict(std::span<const PredictRequest> batch) {
    std::vector<std::string> keys;
    std::vector<std::optional<double>> probs(batch.size());
    keys.reserve(batch.size());
    {
        std::shared_lock lock(cache_mutex_);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            keys.push_back(cache_key(*batch[i].volume, batch[i].segmap));
            if (auto it = cache_.find(keys.back()); it != cache_.end()) probs[i] = it->second;
        }
    }

    // Unique misses, chunked so that no chunk carries the same volume id twice.
    std::vector<std::size_t> misses;
    std::set<std::string> queued;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!probs[i] && queued.insert(keys[i]).second) misses.push_back(i);
    }
    std::size_t pos = 0;
    while (pos < misses.size()) {
        std::vector<PredictRequest> chunk;
        std::vector<std::size_t> chunk_index;
        std::set<std::string> chunk_ids;
        while (pos < misses.size() && chunk.size() < batch_size_ &&
               !chunk_ids.count(batch[misses[pos]].volume->id())) {
            chunk_ids.insert(batch[misses[pos]].volume->id());
            chunk.push_back(batch[misses[pos]]);
            chunk_index.push_back(misses[pos]);
            ++pos;
        }
        ++transport_calls_;
        const auto out = backend_->predict(chunk);
        if (out.size() != chunk.size()) {
            throw TransportError(TransportFailure::malformed_response, chunk.front().volume->id(),
                                 "model returned " + std::to_string(out.size()) + " results for " +
                                     std::to_string(chunk.size()) + " requests");
        }
        std::unique_lock lock(cache_mutex_);
        for (std::size_t k = 0; k < chunk.size(); ++k) cache_[keys[chunk_index[k]]] = out[k];
    }

    std::vector<Prediction> result;
    result.reserve(batch.size());
    std::shared_lock lock(cache_mutex_);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double p = probs[i] ? *probs[i] : cache_.at(keys[i]);
        result.push_back(make_prediction(p, model_id_));
    }
    return result;
}

}  // namespace morphcf
