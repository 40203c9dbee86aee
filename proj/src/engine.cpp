#include "morphcf/engine.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "morphcf/digest.hpp"
#include "morphcf/error.hpp"
#include "morphcf/volume_io.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace morphcf {

std::size_t RunArtifact::skipped_count() const {
    return static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [](const auto& r) { return r.skipped; }));
}

std::size_t expected_count(std::size_t targets, std::size_t sources, std::size_t directions, std::size_t selections) {
    return targets * sources * directions * selections;
}

namespace {

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += items[i];
    }
    return out;
}

std::vector<std::string> sorted_unique(std::vector<std::string> ids, const char* role) {
    std::sort(ids.begin(), ids.end());
    std::vector<std::string> dupes;
    for (std::size_t i = 1; i < ids.size(); ++i) {
        if (ids[i] == ids[i - 1] && (dupes.empty() || dupes.back() != ids[i])) dupes.push_back(ids[i]);
    }
    if (!dupes.empty()) throw ValidationError(std::string("duplicate ") + role + " id(s): " + join(dupes));
    if (ids.empty()) throw ValidationError(std::string("no ") + role + " ids given");
    return ids;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d%02d%02dT%02d%02d%02d%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

void check_cohorts(const Dataset& dataset, const std::vector<std::string>& targets, const std::vector<std::string>& sources) {
    std::vector<std::string> unknown;
    for (const auto* group : {&targets, &sources}) {
        for (const auto& id : *group) {
            if (!dataset.contains(id)) unknown.push_back(id);
        }
    }
    if (!unknown.empty()) throw ValidationError("unknown subject id(s): " + join(unknown));

    std::vector<std::string> overlap;
    std::set_intersection(targets.begin(), targets.end(), sources.begin(), sources.end(), std::back_inserter(overlap));
    if (!overlap.empty()) throw ValidationError("targets and sources overlap: " + join(overlap));

    const int target_label = dataset.record(targets.front()).predicted_label;
    std::vector<std::string> bad_targets, bad_sources;
    for (const auto& id : targets) {
        if (dataset.record(id).predicted_label != target_label) bad_targets.push_back(id);
    }
    for (const auto& id : sources) {
        if (dataset.record(id).predicted_label == target_label) bad_sources.push_back(id);
    }
    if (!bad_targets.empty()) {
        throw ValidationError("targets must share predicted label " + std::to_string(target_label) + " (as " +
                              targets.front() + "); differing: " + join(bad_targets));
    }
    if (!bad_sources.empty()) {
        throw ValidationError("sources must carry predicted label " + std::to_string(1 - target_label) +
                              "; same label as targets: " + join(bad_sources));
    }
}

}  // namespace

RecombinedImage recompute(const Dataset& dataset, const RecombinationSpec& spec) {
    const auto& t = dataset.subject(spec.target_id);
    const auto& s = dataset.subject(spec.source_id);
    return recombine({t.volume, t.segmap}, {s.volume, s.segmap}, spec.selection);
}

RunArtifact run(const Dataset& dataset, std::vector<std::string> targets, std::vector<std::string> sources,
                std::vector<SegmentSelection> selections, ClassifierGateway& gateway, const RunOptions& options) {
    targets = sorted_unique(std::move(targets), "target");
    sources = sorted_unique(std::move(sources), "source");
    if (selections.empty()) throw ValidationError("no segment selections given");
    std::sort(selections.begin(), selections.end());
    selections.erase(std::unique(selections.begin(), selections.end()), selections.end());
    for (const auto& sel : selections) (void)SegmentSelection(sel.mask(), dataset.schema());
    check_cohorts(dataset, targets, sources);

    RunArtifact art;
    art.dataset_path = dataset.dir().string();
    art.dataset_digest = dataset.digest();
    art.model_id = gateway.model_id();
    art.schema = dataset.schema();
    art.targets = targets;
    art.sources = sources;
    art.selections = selections;
    art.volumes_stored = options.store_volumes;
    art.created_at = utc_timestamp();
    {
        Sha256 h;
        h.update(art.dataset_digest).update("|").update(art.model_id);
        for (const auto& id : targets) h.update("|t:").update(id);
        for (const auto& id : sources) h.update("|s:").update(id);
        for (const auto& sel : selections) h.update("|m:").update(std::to_string(sel.mask()));
        art.run_id = h.hex().substr(0, 12) + "-" + art.created_at;
    }

    // Original target predictions, checked against the cached labels that define the cohorts.
    std::map<std::string, Prediction> target_predictions;
    {
        std::vector<PredictRequest> reqs;
        for (const auto& id : targets) {
            const auto& s = dataset.subject(id);
            reqs.push_back({&s.volume, &s.segmap});
        }
        const auto preds = gateway.predict(reqs);
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto& rec = dataset.record(targets[i]);
            if (preds[i].label != rec.predicted_label) {
                throw ValidationError("stale prediction for " + targets[i] + ": table says " +
                                      std::to_string(rec.predicted_label) + ", model " + gateway.model_id() + " says " +
                                      std::to_string(preds[i].label) + "; rerun predict");
            }
            target_predictions.emplace(targets[i], preds[i]);
        }
    }

    const std::size_t total = targets.size() * sources.size() * selections.size();
    std::vector<std::optional<RecombinedResult>> slots(total);
    const std::size_t chunk = gateway.batch_size();
    const std::size_t chunks = (total + chunk - 1) / chunk;
    unsigned jobs = options.jobs ? options.jobs : std::max(1U, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(jobs, chunks)));

    std::atomic<std::size_t> next_chunk{0};
    std::atomic<bool> abort{false};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        try {
            while (!abort.load()) {
                const std::size_t c = next_chunk.fetch_add(1);
                if (c >= chunks) break;
                const std::size_t begin = c * chunk, end = std::min(total, begin + chunk);
                std::vector<RecombinedImage> images;
                std::vector<std::size_t> image_index;
                for (std::size_t i = begin; i < end; ++i) {
                    const std::size_t k = i % selections.size();
                    const std::size_t s = (i / selections.size()) % sources.size();
                    const std::size_t t = i / (selections.size() * sources.size());
                    auto& res = slots[i].emplace(RecombinationSpec{targets[t], sources[s], selections[k]},
                                                     target_predictions.at(targets[t]));
                    auto img = recompute(dataset, res.spec);
                    res.warnings = img.provenance.warnings;
                    res.dropped_pixels = img.provenance.dropped_total();
                    res.skipped = img.provenance.skipped_any();
                    if (!res.skipped) {
                        images.push_back(std::move(img));
                        image_index.push_back(i);
                    }
                }
                std::vector<PredictRequest> reqs;
                for (const auto& img : images) reqs.push_back({&img.pixels, &img.expected_segmap});
                const auto preds = gateway.predict(reqs);
                for (std::size_t j = 0; j < images.size(); ++j) {
                    auto& res = *slots[image_index[j]];
                    res.prediction = preds[j];
                    res.is_counterfactual = preds[j].label != res.target_prediction.label;
                    if (options.store_volumes) {
                        res.volume.emplace(std::move(images[j].pixels));
                        res.expected_segmap.emplace(std::move(images[j].expected_segmap));
                    }
                }
            }
        } catch (...) {
            abort = true;
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 1; w < jobs; ++w) pool.emplace_back(worker);
        worker();
    }
    if (failure) std::rethrow_exception(failure);
    art.results.reserve(total);
    for (auto& slot : slots) art.results.push_back(std::move(*slot));
    return art;
}

std::string format_proportion(double proportion) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", proportion);
    return buf;
}

SummaryRow make_summary_row(const SegmentSelection& selection, std::size_t cf, std::size_t unchanged, std::size_t skipped) {
    SummaryRow row{selection, cf, unchanged, skipped, std::nullopt};
    if (cf + unchanged > 0) {
        const double p = static_cast<double>(cf) / static_cast<double>(cf + unchanged);
        row.proportion = std::round(p * 1000.0) / 1000.0;
    }
    return row;
}

namespace {

std::vector<SummaryRow> summarize_where(const RunArtifact& art, const std::function<bool(const RecombinedResult&)>& keep) {
    std::map<std::uint32_t, std::array<std::size_t, 3>> counts;  // cf, unchanged, skipped
    for (const auto& sel : art.selections) counts[sel.mask()] = {0, 0, 0};
    for (const auto& r : art.results) {
        if (!keep(r)) continue;
        auto& c = counts[r.spec.selection.mask()];
        if (r.skipped) ++c[2];
        else if (r.is_counterfactual) ++c[0];
        else ++c[1];
    }
    std::vector<SummaryRow> rows;
    for (const auto& sel : art.selections) {
        const auto& c = counts[sel.mask()];
        rows.push_back(make_summary_row(sel, c[0], c[1], c[2]));
    }
    return rows;
}

}  // namespace

std::vector<SummaryRow> summarize(const RunArtifact& art) {
    return summarize_where(art, [](const RecombinedResult&) { return true; });
}

std::vector<SummaryRow> subgroup_summarize(const RunArtifact& art, const FilterClause& clause,
                                           std::span<const SubjectRecord> records, std::span<const VariableDecl> variables) {
    clause.validate(variables);
    std::set<std::string> matching;
    for (const auto& r : records) {
        if (clause.matches(r)) matching.insert(r.id);
    }
    return summarize_where(art, [&](const RecombinedResult& r) { return matching.count(r.spec.source_id) != 0; });
}

std::vector<SummaryRow> combine_summaries(std::span<const SummaryRow> a, std::span<const SummaryRow> b) {
    std::map<std::uint32_t, SummaryRow> merged;
    for (const auto* side : {&a, &b}) {
        for (const auto& r : *side) {
            auto [it, fresh] = merged.try_emplace(r.selection.mask(), r);
            if (!fresh) {
                it->second = make_summary_row(r.selection, it->second.counterfactuals + r.counterfactuals,
                                              it->second.unchanged + r.unchanged, it->second.skipped + r.skipped);
            }
        }
    }
    std::vector<SummaryRow> rows;
    for (auto& [mask, row] : merged) rows.push_back(row);
    return rows;
}

std::string summary_csv(std::span<const SummaryRow> rows, const SegmentSchema& schema) {
    std::string out = "segments,counterfactuals,unchanged,skipped,proportion\n";
    for (const auto& r : rows) {
        out += r.selection.name(schema) + "," + std::to_string(r.counterfactuals) + "," + std::to_string(r.unchanged) + "," +
               std::to_string(r.skipped) + "," + (r.proportion ? format_proportion(*r.proportion) : std::string()) + "\n";
    }
    return out;
}

std::string results_csv(const RunArtifact& art) {
    std::string out =
        "index,target,source,segments,mask,target_label,target_probability,label,probability,counterfactual,skipped,"
        "dropped_pixels\n";
    for (std::size_t i = 0; i < art.results.size(); ++i) {
        const auto& r = art.results[i];
        out += std::to_string(i) + "," + r.spec.target_id + "," + r.spec.source_id + "," + r.spec.selection.name(art.schema) +
               "," + std::to_string(r.spec.selection.mask()) + "," + std::to_string(r.target_prediction.label) + "," +
               format_number(r.target_prediction.probability) + ",";
        if (r.prediction) out += std::to_string(r.prediction->label) + "," + format_number(r.prediction->probability);
        else out += ",";
        out += std::string(",") + (r.is_counterfactual ? "1" : "0") + "," + (r.skipped ? "1" : "0") + "," +
               std::to_string(r.dropped_pixels) + "\n";
    }
    return out;
}

namespace {

ojson run_json(const RunArtifact& art) {
    ojson j;
    j["format"] = "morphcf-run";
    j["version"] = 1;
    j["run_id"] = art.run_id;
    j["created_at"] = art.created_at;
    j["dataset"] = {{"path", art.dataset_path}, {"digest", art.dataset_digest}};
    j["model"] = art.model_id;
    j["schema"] = ojson::array();
    for (const auto& l : art.schema.labels()) j["schema"].push_back({{"id", l.id}, {"name", l.name}});
    j["targets"] = art.targets;
    j["sources"] = art.sources;
    j["selections"] = ojson::array();
    for (const auto& s : art.selections) j["selections"].push_back({{"mask", s.mask()}, {"segments", s.name(art.schema)}});
    j["result_count"] = art.results.size();
    j["skipped_count"] = art.skipped_count();
    j["volumes_stored"] = art.volumes_stored;
    j["warnings"] = ojson::array();
    for (std::size_t i = 0; i < art.results.size(); ++i) {
        if (!art.results[i].warnings.empty()) j["warnings"].push_back({{"index", i}, {"messages", art.results[i].warnings}});
    }
    return j;
}

}  // namespace

void write_run(const RunArtifact& art, const fs::path& dir) {
    if (fs::exists(dir)) throw IoError("run directory already exists: " + dir.string());
    static std::atomic<unsigned> counter{0};
    auto tmp = dir;
    tmp += ".partial-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    std::error_code ec;
    fs::create_directories(tmp, ec);
    if (ec) throw IoError("cannot create run directory " + tmp.string() + ": " + ec.message());
    try {
        write_file_atomic(tmp / "run.json", run_json(art).dump(2) + "\n");
        write_file_atomic(tmp / "results.csv", results_csv(art));
        write_file_atomic(tmp / "summary.csv", summary_csv(summarize(art), art.schema));
        if (art.volumes_stored) {
            fs::create_directories(tmp / "volumes");
            for (std::size_t i = 0; i < art.results.size(); ++i) {
                const auto& r = art.results[i];
                if (!r.volume) continue;
                const auto stem = std::to_string(i);
                write_volume(*r.volume, tmp / "volumes" / (stem + ".mvol"));
                write_segmap(*r.expected_segmap, tmp / "volumes" / (stem + ".mseg"));
            }
        }
        if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
        fs::rename(tmp, dir);
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto end = line.find(sep, start);
        out.push_back(line.substr(start, end == std::string::npos ? std::string::npos : end - start));
        if (end == std::string::npos) return out;
        start = end + 1;
    }
}

double parse_prob(const std::string& s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument(s);
    return v;
}

}  // namespace

RunArtifact read_run(const fs::path& dir) {
    const auto meta_bytes = read_file_bytes(dir / "run.json");
    RunArtifact art;
    std::size_t declared = 0;
    std::map<std::size_t, std::vector<std::string>> warnings;
    try {
        const auto j = ojson::parse(std::string(meta_bytes.begin(), meta_bytes.end()));
        if (j.value("format", "") != "morphcf-run") throw ValidationError("not a run artifact: " + dir.string());
        art.run_id = j.at("run_id").get<std::string>();
        art.created_at = j.at("created_at").get<std::string>();
        art.dataset_path = j.at("dataset").at("path").get<std::string>();
        art.dataset_digest = j.at("dataset").at("digest").get<std::string>();
        art.model_id = j.at("model").get<std::string>();
        std::vector<SegmentLabel> labels;
        for (const auto& l : j.at("schema")) labels.push_back({l.at("id").get<Label>(), l.at("name").get<std::string>()});
        art.schema = SegmentSchema(std::move(labels));
        art.targets = j.at("targets").get<std::vector<std::string>>();
        art.sources = j.at("sources").get<std::vector<std::string>>();
        for (const auto& s : j.at("selections")) art.selections.emplace_back(s.at("mask").get<std::uint32_t>(), art.schema);
        art.volumes_stored = j.at("volumes_stored").get<bool>();
        declared = j.at("result_count").get<std::size_t>();
        for (const auto& w : j.at("warnings")) {
            warnings[w.at("index").get<std::size_t>()] = w.at("messages").get<std::vector<std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed run.json in " + dir.string() + ": " + e.what());
    }

    const auto csv_bytes = read_file_bytes(dir / "results.csv");
    std::istringstream in(std::string(csv_bytes.begin(), csv_bytes.end()));
    std::string line;
    std::getline(in, line);
    std::size_t n = 0;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto c = split(line, ',');
            if (c.size() != 12) throw ValidationError("results.csv line " + std::to_string(n + 2) + " has " + std::to_string(c.size()) + " cells");
            const auto index = std::stoul(c[0]);
            if (index != n || n >= declared) throw ValidationError("results.csv out of order at line " + std::to_string(n + 2));
            auto& r = art.results.emplace_back(
                RecombinationSpec{c[1], c[2], SegmentSelection(static_cast<std::uint32_t>(std::stoul(c[4])), art.schema)},
                make_prediction(parse_prob(c[6]), art.model_id));
            if (auto it = warnings.find(n); it != warnings.end()) r.warnings = it->second;
            if (!c[8].empty()) r.prediction = make_prediction(parse_prob(c[8]), art.model_id);
            r.is_counterfactual = c[9] == "1";
            r.skipped = c[10] == "1";
            r.dropped_pixels = std::stoul(c[11]);
            if (art.volumes_stored) {
                const auto stem = std::to_string(n);
                const auto vol = dir / "volumes" / (stem + ".mvol");
                if (fs::exists(vol)) {
                    r.volume.emplace(read_volume(vol));
                    r.expected_segmap.emplace(read_segmap(dir / "volumes" / (stem + ".mseg")));
                }
            }
            ++n;
        }
    } catch (const std::invalid_argument&) {
        throw ValidationError("unparsable number in " + (dir / "results.csv").string() + " near row " + std::to_string(n));
    } catch (const std::out_of_range&) {
        throw ValidationError("number out of range in " + (dir / "results.csv").string() + " near row " + std::to_string(n));
    }
    if (n != declared) {
        throw ValidationError("results.csv holds " + std::to_string(n) + " rows, run.json declares " + std::to_string(declared));
    }
    return art;
}

}  // namespace morphcf
