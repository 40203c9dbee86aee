#include "morphcf/service.hpp"

#include <httplib.h>

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <deque>
#include <map>
#include <set>
#include <shared_mutex>
#include <thread>

#include <json.hpp>

#include "morphcf/cohort.hpp"
#include "morphcf/digest.hpp"
#include "morphcf/engine.hpp"
#include "morphcf/error.hpp"
#include "morphcf/render.hpp"

using json = nlohmann::ordered_json;

namespace morphcf {

namespace {

struct FieldError {
    std::string field;
    std::string message;
};

class RequestError : public std::runtime_error {
public:
    RequestError(int status, std::vector<FieldError> errors)
        : std::runtime_error("request error"), status(status), errors(std::move(errors)) {}
    int status;
    std::vector<FieldError> errors;
};

[[noreturn]] void bad_request(std::string field, std::string message) {
    throw RequestError(400, {{std::move(field), std::move(message)}});
}

[[noreturn]] void not_found(std::string what) { throw RequestError(404, {{"path", std::move(what)}}); }

json record_json(const SubjectRecord& r) {
    json demo = json::object();
    for (const auto& [k, v] : r.demographics) {
        if (const auto* d = std::get_if<double>(&v)) demo[k] = *d;
        else demo[k] = std::get<std::string>(v);
    }
    return {{"id", r.id}, {"demographics", demo}, {"predicted_label", r.predicted_label}, {"probability", r.probability}};
}

json summary_json(const std::vector<SummaryRow>& rows, const SegmentSchema& schema) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"segments", r.selection.name(schema)},
                       {"mask", r.selection.mask()},
                       {"counterfactuals", r.counterfactuals},
                       {"unchanged", r.unchanged},
                       {"skipped", r.skipped},
                       {"proportion", r.proportion ? json(*r.proportion) : json(nullptr)}});
    }
    return out;
}

FilterClause clause_from_json(const json& j, std::span<const VariableDecl> variables, const std::string& field) {
    if (!j.is_object() || !j.contains("variable") || !j["variable"].is_string()) bad_request(field, "clause needs a string 'variable'");
    const auto var = j["variable"].get<std::string>();
    FilterClause c;
    if (j.contains("range")) {
        const auto& r = j["range"];
        if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number()) bad_request(field, "'range' must be [lo, hi]");
        c = FilterClause::range(var, r[0].get<double>(), r[1].get<double>());
    } else if (j.contains("categories")) {
        const auto& v = j["categories"];
        if (!v.is_array()) bad_request(field, "'categories' must be an array of strings");
        std::set<std::string> values;
        for (const auto& x : v) {
            if (!x.is_string()) bad_request(field, "'categories' must be an array of strings");
            values.insert(x.get<std::string>());
        }
        c = FilterClause::categories(var, std::move(values));
    } else {
        bad_request(field, "clause needs 'range' or 'categories'");
    }
    try {
        c.validate(variables);
    } catch (const ValidationError& e) {
        bad_request(field, e.what());
    }
    return c;
}

std::size_t parse_index(const std::string& text, const std::string& field) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) bad_request(field, "not a non-negative integer: " + text);
    return v;
}

// A path segment that is not an index names no resource.
std::size_t path_index(const std::string& text, const std::string& what) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) not_found("no " + what + " " + text);
    return v;
}

enum class RunStatus { queued, running, complete, failed };

const char* status_name(RunStatus s) {
    switch (s) {
        case RunStatus::queued: return "queued";
        case RunStatus::running: return "running";
        case RunStatus::complete: return "complete";
        case RunStatus::failed: return "failed";
    }
    return "unknown";
}

struct RunRecord {
    std::string id;
    std::vector<std::string> targets;
    std::vector<std::string> sources;
    std::vector<SegmentSelection> selections;
    std::size_t expected = 0;
    RunStatus status = RunStatus::queued;
    std::shared_ptr<const RunArtifact> artifact;
    std::string error;
};

}  // namespace

struct Service::Impl {
    std::shared_ptr<const Dataset> dataset;
    std::shared_ptr<ClassifierGateway> gateway;
    ServiceOptions options;
    httplib::Server server;
    int bound_port = -1;

    std::shared_mutex runs_mutex;
    std::map<std::string, std::shared_ptr<RunRecord>> runs;
    std::deque<std::shared_ptr<RunRecord>> queue;
    std::mutex queue_mutex;
    std::condition_variable queue_cv;
    std::size_t in_flight = 0;
    std::atomic<unsigned> run_counter{0};
    bool stopping = false;
    std::jthread runner;

    Impl(std::shared_ptr<const Dataset> ds, std::shared_ptr<ClassifierGateway> gw, ServiceOptions opts)
        : dataset(std::move(ds)), gateway(std::move(gw)), options(std::move(opts)) {
        routes();
        runner = std::jthread([this] { run_loop(); });
    }

    ~Impl() {
        {
            std::lock_guard lock(queue_mutex);
            stopping = true;
        }
        queue_cv.notify_all();
        server.stop();
    }

    json envelope() const { return {{"digest", dataset->digest()}}; }

    void send_json(httplib::Response& res, const json& body, int status = 200) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    void send_png(httplib::Response& res, const std::vector<std::uint8_t>& png) {
        res.set_header("X-Dataset-Digest", dataset->digest());
        res.set_content(std::string(png.begin(), png.end()), "image/png");
    }

    template <class Handler>
    httplib::Server::Handler wrap(Handler handler) {
        return [this, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const RequestError& e) {
                json errs = json::array();
                for (const auto& fe : e.errors) errs.push_back({{"field", fe.field}, {"message", fe.message}});
                json body = envelope();
                body["errors"] = errs;
                send_json(res, body, e.status);
            } catch (const ValidationError& e) {
                json body = envelope();
                body["errors"] = json::array({{{"field", "request"}, {"message", e.what()}}});
                send_json(res, body, 400);
            } catch (const std::exception& e) {
                json body = envelope();
                body["errors"] = json::array({{{"field", "server"}, {"message", e.what()}}});
                send_json(res, body, 500);
            }
        };
    }

    json parse_body(const httplib::Request& req) {
        try {
            return json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
            bad_request("body", std::string("invalid JSON: ") + e.what());
        }
    }

    bool overlay_flag(const httplib::Request& req) {
        if (!req.has_param("overlay")) return false;
        const auto v = req.get_param_value("overlay");
        if (v == "0") return false;
        if (v == "1") return true;
        bad_request("overlay", "overlay must be 0 or 1");
    }

    std::shared_ptr<RunRecord> find_run(const std::string& id) {
        std::shared_lock lock(runs_mutex);
        auto it = runs.find(id);
        if (it == runs.end()) not_found("unknown run " + id);
        return it->second;
    }

    std::shared_ptr<const RunArtifact> completed(const std::shared_ptr<RunRecord>& run) {
        std::shared_lock lock(runs_mutex);
        if (run->status != RunStatus::complete) {
            throw RequestError(409, {{"run", "run " + run->id + " is " + status_name(run->status)}});
        }
        return run->artifact;
    }

    std::vector<std::string> id_list(const json& body, const char* field) {
        if (!body.contains(field) || !body[field].is_array()) bad_request(field, "must be an array of subject ids");
        std::vector<std::string> ids;
        std::set<std::string> seen;
        for (const auto& x : body[field]) {
            if (!x.is_string()) bad_request(field, "must be an array of subject ids");
            const auto id = x.get<std::string>();
            if (!dataset->contains(id)) bad_request(field, "unknown subject id " + id);
            if (!seen.insert(id).second) bad_request(field, "duplicate id " + id);
            ids.push_back(id);
        }
        if (ids.empty()) bad_request(field, "must not be empty");
        return ids;
    }

    std::vector<SegmentSelection> selection_list(const json& body) {
        const auto& schema = dataset->schema();
        if (!body.contains("selections")) bad_request("selections", "required");
        const auto& s = body["selections"];
        if (s.is_string() && s.get<std::string>() == "all") return combinations(schema);
        if (!s.is_array() || s.empty()) bad_request("selections", "must be \"all\" or a nonempty array");
        std::vector<SegmentSelection> out;
        try {
            for (const auto& item : s) {
                if (item.is_string()) {
                    out.push_back(SegmentSelection::parse(item.get<std::string>(), schema));
                } else if (item.is_array()) {
                    std::vector<Label> labels;
                    for (const auto& name : item) {
                        if (!name.is_string()) bad_request("selections", "segment names must be strings");
                        labels.push_back(schema.id_of(name.get<std::string>()));
                    }
                    out.push_back(SegmentSelection::from_labels(labels, schema));
                } else {
                    bad_request("selections", "each selection is a name string or an array of names");
                }
            }
        } catch (const ValidationError& e) {
            bad_request("selections", e.what());
        }
        return out;
    }

    void routes() {
        server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                                    {"Access-Control-Allow-Headers", "Content-Type"},
                                    {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        server.Get("/api/schema", wrap([this](const httplib::Request&, httplib::Response& res) {
            json body = envelope();
            body["schema"] = json::array();
            for (const auto& l : dataset->schema().labels()) body["schema"].push_back({{"id", l.id}, {"name", l.name}});
            send_json(res, body);
        }));

        server.Get("/api/variables", wrap([this](const httplib::Request&, httplib::Response& res) {
            json body = envelope();
            body["variables"] = json::array();
            for (const auto& v : dataset->manifest().variables) {
                json jv{{"name", v.name}, {"kind", v.kind == VariableKind::numeric ? "numeric" : "categorical"}};
                if (v.unit) jv["unit"] = *v.unit;
                body["variables"].push_back(jv);
            }
            send_json(res, body);
        }));

        server.Get("/api/palette", wrap([this](const httplib::Request&, httplib::Response& res) {
            json body = envelope();
            body["opacity"] = overlay_opacity;
            body["colours"] = json::array();
            for (const auto& l : dataset->schema().labels()) {
                const auto c = overlay_colour(l.id);
                body["colours"].push_back({{"label", l.id}, {"rgb", {c[0], c[1], c[2]}}});
            }
            send_json(res, body);
        }));

        server.Get("/api/subjects", wrap([this](const httplib::Request&, httplib::Response& res) {
            json body = envelope();
            body["subjects"] = json::array();
            for (const auto& r : dataset->records()) {
                auto jr = record_json(r);
                jr["frames"] = dataset->subject(r.id).volume.dims().frames;
                body["subjects"].push_back(jr);
            }
            send_json(res, body);
        }));

        server.Get(R"(/api/subjects/([^/]+)/frames/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto id = req.matches[1].str();
            if (!dataset->contains(id)) not_found("unknown subject " + id);
            const auto& s = dataset->subject(id);
            const auto f = path_index(req.matches[2].str(), "frame");
            if (f >= s.volume.dims().frames) not_found("frame " + std::to_string(f) + " out of range for " + id);
            send_png(res, render_frame_png(s.volume, s.segmap, f, overlay_flag(req)));
        }));

        server.Get("/api/histogram", wrap([this](const httplib::Request& req, httplib::Response& res) {
            if (!req.has_param("variable")) bad_request("variable", "required");
            const auto var = req.get_param_value("variable");
            const auto& vars = dataset->manifest().variables;
            const auto* decl = dataset->manifest().find_variable(var);
            if (!decl) bad_request("variable", "unknown variable " + var);
            json body = envelope();
            body["variable"] = var;
            if (decl->kind == VariableKind::numeric) {
                const auto bins = req.has_param("bins") ? parse_index(req.get_param_value("bins"), "bins") : 10;
                if (bins < 1) bad_request("bins", "must be at least 1");
                const auto h = histogram(dataset->records(), var, bins, vars);
                body["kind"] = "numeric";
                body["bins"] = json::array();
                for (const auto& b : h.bins) body["bins"].push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
                body["missing"] = h.missing;
            } else {
                const auto c = category_counts(dataset->records(), var, vars);
                body["kind"] = "categorical";
                body["counts"] = json::array();
                for (const auto& [value, n] : c.counts) body["counts"].push_back({{"value", value}, {"count", n}});
                body["missing"] = c.missing;
            }
            send_json(res, body);
        }));

        server.Post("/api/filters", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto in = parse_body(req);
            std::vector<FilterClause> clauses;
            if (in.contains("clauses")) {
                if (!in["clauses"].is_array()) bad_request("clauses", "must be an array");
                for (std::size_t i = 0; i < in["clauses"].size(); ++i) {
                    clauses.push_back(clause_from_json(in["clauses"][i], dataset->manifest().variables,
                                                       "clauses[" + std::to_string(i) + "]"));
                }
            }
            const auto state = apply_filters(dataset->records(), clauses, dataset->manifest().variables);
            json body = envelope();
            body["clauses"] = json::array();
            for (const auto& c : state.clauses) body["clauses"].push_back(c.describe());
            body["layer_counts"] = state.layer_counts;
            body["subset"] = state.subset;
            send_json(res, body);
        }));

        server.Post("/api/runs", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto in = parse_body(req);
            auto run = std::make_shared<RunRecord>();
            run->targets = id_list(in, "targets");
            run->sources = id_list(in, "sources");
            run->selections = selection_list(in);
            validate_cohorts(*run);
            std::sort(run->selections.begin(), run->selections.end());
            run->selections.erase(std::unique(run->selections.begin(), run->selections.end()), run->selections.end());
            run->expected = expected_count(run->targets.size(), run->sources.size(), 1, run->selections.size());
            run->id = Sha256().update(dataset->digest()).update(req.body).hex().substr(0, 12) + "-" +
                      std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(
                                         std::chrono::system_clock::now().time_since_epoch()).count()) +
                      "-" + std::to_string(run_counter++);
            {
                std::unique_lock lock(runs_mutex);
                if (!runs.emplace(run->id, run).second) {
                    throw RequestError(409, {{"run", "run id collision " + run->id}});
                }
            }
            {
                std::lock_guard lock(queue_mutex);
                queue.push_back(run);
                ++in_flight;
            }
            queue_cv.notify_all();
            json body = envelope();
            body["run_id"] = run->id;
            body["status"] = "queued";
            body["expected_results"] = run->expected;
            send_json(res, body, 202);
        }));

        server.Get(R"(/api/runs/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto run = find_run(req.matches[1].str());
            json body = envelope();
            std::shared_lock lock(runs_mutex);
            body["run_id"] = run->id;
            body["status"] = status_name(run->status);
            body["expected_results"] = run->expected;
            body["result_count"] = run->artifact ? run->artifact->results.size() : 0;
            if (!run->error.empty()) body["error"] = run->error;
            send_json(res, body);
        }));

        server.Get(R"(/api/runs/([^/]+)/summary)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto art = completed(find_run(req.matches[1].str()));
            std::vector<SummaryRow> rows;
            json body = envelope();
            body["run_id"] = art->run_id;
            if (req.has_param("by")) {
                FilterClause clause;
                try {
                    clause = parse_clause(req.get_param_value("by"), dataset->manifest().variables);
                } catch (const ValidationError& e) {
                    bad_request("by", e.what());
                }
                rows = subgroup_summarize(*art, clause, dataset->records(), dataset->manifest().variables);
                body["by"] = clause.describe();
            } else {
                rows = summarize(*art);
            }
            body["rows"] = summary_json(rows, art->schema);
            send_json(res, body);
        }));

        server.Get(R"(/api/runs/([^/]+)/results)", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto art = completed(find_run(req.matches[1].str()));
            const auto offset = req.has_param("offset") ? parse_index(req.get_param_value("offset"), "offset") : 0;
            auto limit = req.has_param("limit") ? parse_index(req.get_param_value("limit"), "limit") : max_page_size;
            limit = std::min(limit, max_page_size);
            json body = envelope();
            body["run_id"] = art->run_id;
            body["offset"] = offset;
            body["limit"] = limit;
            body["total"] = art->results.size();
            body["results"] = json::array();
            for (std::size_t i = offset; i < art->results.size() && i < offset + limit; ++i) {
                const auto& r = art->results[i];
                json jr{{"index", i},
                        {"target", r.spec.target_id},
                        {"source", r.spec.source_id},
                        {"segments", r.spec.selection.name(art->schema)},
                        {"mask", r.spec.selection.mask()},
                        {"target_label", r.target_prediction.label},
                        {"target_probability", r.target_prediction.probability},
                        {"label", r.prediction ? json(r.prediction->label) : json(nullptr)},
                        {"probability", r.prediction ? json(r.prediction->probability) : json(nullptr)},
                        {"counterfactual", r.is_counterfactual},
                        {"skipped", r.skipped},
                        {"dropped_pixels", r.dropped_pixels},
                        {"warnings", r.warnings}};
                body["results"].push_back(jr);
            }
            send_json(res, body);
        }));

        server.Get(R"(/api/runs/([^/]+)/recombined/([^/]+)/frames/([^/]+))",
                   wrap([this](const httplib::Request& req, httplib::Response& res) {
                       const auto art = completed(find_run(req.matches[1].str()));
                       const auto index = path_index(req.matches[2].str(), "result");
                       if (index >= art->results.size()) not_found("result index " + std::to_string(index) + " out of range");
                       const auto img = recompute(*dataset, art->results[index].spec);
                       const auto f = path_index(req.matches[3].str(), "frame");
                       if (f >= img.pixels.dims().frames) not_found("frame " + std::to_string(f) + " out of range");
                       send_png(res, render_frame_png(img.pixels, img.expected_segmap, f, overlay_flag(req)));
                   }));
    }

    void validate_cohorts(const RunRecord& run) {
        std::set<std::string> targets(run.targets.begin(), run.targets.end());
        for (const auto& id : run.sources) {
            if (targets.count(id)) bad_request("sources", "id " + id + " is also a target");
        }
        const int label = dataset->record(run.targets.front()).predicted_label;
        for (const auto& id : run.targets) {
            if (dataset->record(id).predicted_label != label) {
                bad_request("targets", "targets must share one predicted label; " + id + " differs from " + run.targets.front());
            }
        }
        for (const auto& id : run.sources) {
            if (dataset->record(id).predicted_label == label) {
                bad_request("sources", "source " + id + " has the same predicted label as the targets");
            }
        }
    }

    void run_loop() {
        while (true) {
            std::shared_ptr<RunRecord> run;
            {
                std::unique_lock lock(queue_mutex);
                queue_cv.wait(lock, [this] { return stopping || !queue.empty(); });
                if (stopping) return;
                run = queue.front();
                queue.pop_front();
            }
            {
                std::unique_lock lock(runs_mutex);
                run->status = RunStatus::running;
            }
            try {
                auto art = std::make_shared<RunArtifact>(
                    morphcf::run(*dataset, run->targets, run->sources, run->selections, *gateway, {options.jobs, false}));
                art->run_id = run->id;
                if (options.runs_dir) write_run(*art, *options.runs_dir / run->id);
                std::unique_lock lock(runs_mutex);
                run->artifact = std::move(art);
                run->status = RunStatus::complete;
            } catch (const std::exception& e) {
                std::unique_lock lock(runs_mutex);
                run->status = RunStatus::failed;
                run->error = e.what();
            }
            {
                std::lock_guard lock(queue_mutex);
                --in_flight;
            }
            queue_cv.notify_all();
        }
    }
};

Service::Service(std::shared_ptr<const Dataset> dataset, std::shared_ptr<ClassifierGateway> gateway, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(dataset), std::move(gateway), std::move(options))) {}

Service::~Service() = default;

int Service::bind() {
    if (impl_->bound_port >= 0) return impl_->bound_port;
    if (impl_->options.port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(impl_->options.host);
    } else if (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)) {
        impl_->bound_port = impl_->options.port;
    }
    if (impl_->bound_port < 0) {
        throw IoError("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
    }
    return impl_->bound_port;
}

void Service::listen() {
    bind();
    impl_->server.listen_after_bind();
}

void Service::stop() { impl_->server.stop(); }

void Service::wait_idle() {
    std::unique_lock lock(impl_->queue_mutex);
    impl_->queue_cv.wait(lock, [this] { return impl_->in_flight == 0; });
}

}  // namespace morphcf
