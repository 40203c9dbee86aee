#include "morphcf/dataset.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "morphcf/digest.hpp"
#include "morphcf/error.hpp"
#include "morphcf/volume_io.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace morphcf {

namespace {

const char* kind_name(VariableKind kind) { return kind == VariableKind::numeric ? "numeric" : "categorical"; }

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        auto end = line.find(',', start);
        cells.push_back(line.substr(start, end == std::string::npos ? std::string::npos : end - start));
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return cells;
}

std::optional<double> parse_double(const std::string& text) {
    double v = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace

std::string format_number(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

const VariableDecl* DatasetManifest::find_variable(const std::string& name) const {
    for (const auto& v : variables) {
        if (v.name == name) return &v;
    }
    return nullptr;
}

std::string manifest_to_json(const DatasetManifest& m) {
    ojson j;
    j["format"] = "morphcf-dataset";
    j["version"] = 1;
    j["schema"] = ojson::array();
    for (const auto& l : m.schema.labels()) j["schema"].push_back({{"id", l.id}, {"name", l.name}});
    j["variables"] = ojson::array();
    for (const auto& v : m.variables) {
        ojson jv{{"name", v.name}, {"kind", kind_name(v.kind)}};
        if (v.unit) jv["unit"] = *v.unit;
        j["variables"].push_back(jv);
    }
    j["demographics"] = m.demographics_path;
    j["subjects"] = ojson::array();
    for (const auto& s : m.subjects) {
        j["subjects"].push_back({{"id", s.id}, {"volume", s.volume_path}, {"segmap", s.segmap_path}});
    }
    j["generator"] = m.generator;
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
    }
    try {
        if (j.value("format", "") != "morphcf-dataset") throw ValidationError("manifest format tag missing");
        if (j.value("version", 0) != 1) throw ValidationError("unsupported manifest version");
        std::vector<SegmentLabel> labels;
        for (const auto& l : j.at("schema")) labels.push_back({l.at("id").get<Label>(), l.at("name").get<std::string>()});
        DatasetManifest m;
        m.schema = SegmentSchema(std::move(labels));
        for (const auto& v : j.at("variables")) {
            VariableDecl decl{v.at("name").get<std::string>(), VariableKind::numeric, std::nullopt};
            const auto kind = v.at("kind").get<std::string>();
            if (kind == "numeric") decl.kind = VariableKind::numeric;
            else if (kind == "categorical") decl.kind = VariableKind::categorical;
            else throw ValidationError("variable " + decl.name + " has unknown kind " + kind);
            if (v.contains("unit")) decl.unit = v.at("unit").get<std::string>();
            if (decl.name == "id" || decl.name == "predicted_label" || decl.name == "probability") {
                throw ValidationError("variable name reserved: " + decl.name);
            }
            if (m.find_variable(decl.name)) throw ValidationError("duplicate variable " + decl.name);
            m.variables.push_back(std::move(decl));
        }
        m.demographics_path = j.value("demographics", "demographics.csv");
        for (const auto& s : j.at("subjects")) {
            m.subjects.push_back({s.at("id").get<std::string>(), s.at("volume").get<std::string>(),
                                  s.at("segmap").get<std::string>()});
        }
        if (j.contains("generator")) m.generator = j.at("generator");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("manifest field error: ") + e.what());
    }
}

std::vector<SubjectRecord> parse_demographics(const std::string& csv, const DatasetManifest& manifest) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw DatasetError({"demographics: missing header row"});
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_line(line);
    std::vector<std::string> problems;
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (!col.emplace(header[i], i).second) problems.push_back("demographics: duplicate column " + header[i]);
    }
    auto require = [&](const std::string& name) -> std::size_t {
        auto it = col.find(name);
        if (it != col.end()) return it->second;
        problems.push_back("demographics: missing column " + name);
        return 0;
    };
    const auto id_col = require("id");
    const auto label_col = require("predicted_label");
    const auto prob_col = require("probability");
    std::vector<std::size_t> var_cols;
    for (const auto& v : manifest.variables) var_cols.push_back(require(v.name));
    if (!problems.empty()) throw DatasetError(std::move(problems));

    std::vector<SubjectRecord> records;
    std::set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_line(line);
        const std::string where = "demographics line " + std::to_string(line_no);
        if (cells.size() != header.size()) {
            problems.push_back(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                               std::to_string(cells.size()));
            continue;
        }
        const auto before = problems.size();
        SubjectRecord r;
        r.id = cells[id_col];
        if (r.id.empty()) problems.push_back(where + ": empty id");
        else if (!seen.insert(r.id).second) problems.push_back(where + ": duplicate id " + r.id);
        for (std::size_t k = 0; k < manifest.variables.size(); ++k) {
            const auto& decl = manifest.variables[k];
            const auto& cell = cells[var_cols[k]];
            if (cell.empty()) continue;
            if (decl.kind == VariableKind::numeric) {
                auto v = parse_double(cell);
                if (v) r.demographics[decl.name] = *v;
                else problems.push_back(where + ": unparsable number '" + cell + "' in column " + decl.name);
            } else {
                r.demographics[decl.name] = cell;
            }
        }
        auto label = parse_double(cells[label_col]);
        if (!label || (*label != 0.0 && *label != 1.0)) {
            problems.push_back(where + ": predicted_label must be 0 or 1, got '" + cells[label_col] + "'");
        }
        auto prob = parse_double(cells[prob_col]);
        if (!prob) {
            problems.push_back(where + ": unparsable number '" + cells[prob_col] + "' in column probability");
        } else if (*prob < 0.0 || *prob > 1.0) {
            problems.push_back(where + ": probability " + cells[prob_col] + " out of range [0,1] for " + r.id);
        }
        if (problems.size() != before) continue;
        r.predicted_label = static_cast<int>(*label);
        r.probability = *prob;
        try {
            r.validate();
        } catch (const ValidationError& e) {
            problems.push_back(where + ": " + e.what());
            continue;
        }
        records.push_back(std::move(r));
    }
    if (!problems.empty()) throw DatasetError(std::move(problems));
    return records;
}

std::vector<SubjectRecord> load_demographics(const fs::path& csv_path, const DatasetManifest& manifest) {
    const auto bytes = read_file_bytes(csv_path);
    return parse_demographics(std::string(bytes.begin(), bytes.end()), manifest);
}

std::string format_demographics(const std::vector<SubjectRecord>& records, const std::vector<VariableDecl>& variables) {
    std::string out = "id";
    for (const auto& v : variables) out += "," + v.name;
    out += ",predicted_label,probability\n";
    for (const auto& r : records) {
        out += r.id;
        for (const auto& v : variables) {
            out += ',';
            auto it = r.demographics.find(v.name);
            if (it == r.demographics.end()) continue;
            if (const auto* d = std::get_if<double>(&it->second)) out += format_number(*d);
            else out += std::get<std::string>(it->second);
        }
        out += "," + std::to_string(r.predicted_label) + "," + format_number(r.probability) + "\n";
    }
    return out;
}

namespace {

std::string compute_digest(const DatasetManifest& manifest, const std::vector<Subject>& subjects,
                           const std::vector<SubjectRecord>& records) {
    Sha256 h;
    h.update(manifest_to_json(manifest));
    h.update(format_demographics(records, manifest.variables));
    for (const auto& s : subjects) {
        h.update(encode_volume(s.volume));
        h.update(encode_segmap(s.segmap));
    }
    return h.hex();
}

}  // namespace

Dataset::Dataset(fs::path dir, DatasetManifest manifest, std::vector<Subject> subjects, std::vector<SubjectRecord> records)
    : dir_(std::move(dir)), manifest_(std::move(manifest)), subjects_(std::move(subjects)), records_(std::move(records)) {
    if (subjects_.size() != manifest_.subjects.size() || records_.size() != subjects_.size()) {
        throw ValidationError("dataset subject, raster and record counts disagree");
    }
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        const auto& id = manifest_.subjects[i].id;
        if (records_[i].id != id || subjects_[i].volume.id() != id) {
            throw ValidationError("dataset order mismatch at subject " + id);
        }
        if (!index_.emplace(id, i).second) throw ValidationError("duplicate subject id " + id);
    }
    digest_ = compute_digest(manifest_, subjects_, records_);
}

const Subject& Dataset::subject(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown subject id " + id);
    return subjects_[it->second];
}

const SubjectRecord& Dataset::record(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown subject id " + id);
    return records_[it->second];
}

Dataset Dataset::load(const fs::path& dir) {
    const auto manifest_bytes = read_file_bytes(dir / "manifest.json");
    auto manifest = manifest_from_json(std::string(manifest_bytes.begin(), manifest_bytes.end()));

    std::vector<std::string> problems;
    std::vector<Subject> subjects;
    std::set<std::string> ids;
    for (const auto& entry : manifest.subjects) {
        if (!ids.insert(entry.id).second) {
            problems.push_back("duplicate subject id " + entry.id);
            continue;
        }
        std::optional<Volume> volume;
        std::optional<SegmentMap> segmap;
        try {
            volume.emplace(read_volume(dir / entry.volume_path, entry.id));
        } catch (const Error& e) {
            problems.push_back(entry.id + " volume: " + e.what());
        }
        try {
            segmap.emplace(read_segmap(dir / entry.segmap_path));
            manifest.schema.validate(*segmap);
        } catch (const Error& e) {
            problems.push_back(entry.id + " segmap: " + e.what());
            segmap.reset();
        }
        if (volume && segmap) {
            try {
                check_pairing(*volume, *segmap);
                subjects.push_back({std::move(*volume), std::move(*segmap)});
            } catch (const Error& e) {
                problems.push_back(entry.id + ": " + e.what());
            }
        }
    }

    std::vector<SubjectRecord> ordered;
    try {
        auto records = load_demographics(dir / manifest.demographics_path, manifest);
        std::map<std::string, SubjectRecord> by_id;
        for (auto& r : records) {
            if (!ids.count(r.id)) problems.push_back("demographics row " + r.id + " matches no subject");
            by_id.emplace(r.id, std::move(r));
        }
        for (const auto& entry : manifest.subjects) {
            auto it = by_id.find(entry.id);
            if (it == by_id.end()) {
                problems.push_back("subject " + entry.id + " has no demographics row");
            } else {
                ordered.push_back(std::move(it->second));
            }
        }
    } catch (const DatasetError& e) {
        problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    } catch (const Error& e) {
        problems.push_back(e.what());
    }

    if (!problems.empty()) throw DatasetError(std::move(problems));
    return Dataset(dir, std::move(manifest), std::move(subjects), std::move(ordered));
}

void write_demographics(const fs::path& dir, const DatasetManifest& manifest, const std::vector<SubjectRecord>& records) {
    write_file_atomic(dir / manifest.demographics_path, format_demographics(records, manifest.variables));
}

void write_dataset(const fs::path& dir, const DatasetManifest& manifest, const std::vector<Subject>& subjects,
                   const std::vector<SubjectRecord>& records) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    if (subjects.size() != manifest.subjects.size()) throw ValidationError("subject count disagrees with manifest");
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& entry = manifest.subjects[i];
        fs::create_directories((dir / entry.volume_path).parent_path(), ec);
        fs::create_directories((dir / entry.segmap_path).parent_path(), ec);
        if (ec) throw IoError("cannot create directories under " + dir.string());
        write_volume(subjects[i].volume, dir / entry.volume_path);
        write_segmap(subjects[i].segmap, dir / entry.segmap_path);
    }
    write_demographics(dir, manifest, records);
    write_file_atomic(dir / "manifest.json", manifest_to_json(manifest));
}

}  // namespace morphcf
