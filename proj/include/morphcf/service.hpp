#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "morphcf/dataset.hpp"
#include "morphcf/gateway.hpp"

namespace morphcf {

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::string cors_origin = "*";
    unsigned jobs = 0;
    std::optional<std::filesystem::path> runs_dir;  // completed runs are also written here
};

inline constexpr std::size_t max_page_size = 50;

/// HTTP facade over a loaded dataset.
///
///   GET  /api/schema                              segment schema
///   GET  /api/variables                           demographic variable declarations
///   GET  /api/subjects                            subject records, dataset order
///   GET  /api/subjects/{id}/frames/{f}?overlay=0|1  PNG frame
///   GET  /api/histogram?variable=V&bins=N         histogram or category counts
///   GET  /api/palette                             overlay colours and opacity
///   POST /api/filters      {"clauses":[...]}      cohort state
///   POST /api/runs         {"targets","sources","selections"}  202 + run id
///   GET  /api/runs/{id}                           run status
///   GET  /api/runs/{id}/summary[?by=var=lo:hi]    summary rows
///   GET  /api/runs/{id}/results?offset&limit      page of results (limit <= 50)
///   GET  /api/runs/{id}/recombined/{i}/frames/{f}?overlay=0|1  recomputed PNG
///
/// Every JSON body carries "digest", the dataset content digest. Runs execute one at a time
/// on a background thread; reads never wait for them.
class Service {
public:
    Service(std::shared_ptr<const Dataset> dataset, std::shared_ptr<ClassifierGateway> gateway, ServiceOptions options);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket; returns the bound port.
    int bind();
    /// Serves until stop(). Calls bind() first if needed.
    void listen();
    void stop();
    /// Blocks until queued runs have finished.
    void wait_idle();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace morphcf
