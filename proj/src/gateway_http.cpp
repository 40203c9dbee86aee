#include <httplib.h>

#include "morphcf/error.hpp"
#include "morphcf/gateway.hpp"

namespace morphcf {

HttpBackend::HttpBackend(ExternalModelConfig config) : config_(std::move(config)) {
    config_.validate();
    std::string rest = config_.endpoint;
    const std::string scheme = "http://";
    if (rest.rfind(scheme, 0) != 0) throw ValidationError("http model endpoint must start with http://: " + rest);
    rest = rest.substr(scheme.size());
    const auto slash = rest.find('/');
    const std::string authority = rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    const auto colon = authority.rfind(':');
    host_ = authority.substr(0, colon);
    if (colon != std::string::npos) {
        try {
            port_ = std::stoi(authority.substr(colon + 1));
        } catch (const std::exception&) {
            throw ValidationError("bad port in model endpoint " + config_.endpoint);
        }
    }
    if (host_.empty()) throw ValidationError("missing host in model endpoint " + config_.endpoint);
}

std::vector<double> HttpBackend::predict(std::span<const PredictRequest> batch) {
    if (batch.empty()) return {};
    std::vector<std::string> ids;
    std::string body;
    for (const auto& r : batch) {
        ids.push_back(r.volume->id());
        body += encode_wire_request(*r.volume);
    }
    httplib::Client client(host_, port_);
    const auto secs = static_cast<time_t>(config_.timeout_seconds);
    const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    auto res = client.Post(path_, body, "application/x-ndjson");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
            throw TransportError(TransportFailure::timeout, ids.front(),
                                 "model at " + config_.endpoint + " timed out on batch starting " + ids.front());
        }
        throw TransportError(TransportFailure::connection, ids.front(),
                             "model at " + config_.endpoint + " unreachable: " + httplib::to_string(err));
    }
    if (res->status != 200) {
        throw TransportError(TransportFailure::connection, ids.front(),
                             "model at " + config_.endpoint + " answered HTTP " + std::to_string(res->status));
    }
    std::vector<std::string> lines;
    std::size_t start = 0;
    const auto& text = res->body;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(std::move(line));
        start = end + 1;
    }
    return decode_wire_responses(lines, ids);
}

}  // namespace morphcf
