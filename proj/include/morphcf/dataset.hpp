#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphcf/types.hpp"

namespace morphcf {

enum class VariableKind { numeric, categorical };

struct VariableDecl {
    std::string name;
    VariableKind kind = VariableKind::numeric;
    std::optional<std::string> unit;
};

struct SubjectEntry {
    std::string id;
    std::string volume_path;  // relative to the dataset directory
    std::string segmap_path;
};

/// Contents of manifest.json.
///
/// {
///   "format": "morphcf-dataset", "version": 1,
///   "schema": [{"id": 1, "name": "lv_cavity"}, ...],
///   "variables": [{"name": "age", "kind": "numeric", "unit": "years"}, ...],
///   "demographics": "demographics.csv",
///   "subjects": [{"id": "s001", "volume": "volumes/s001.mvol", "segmap": "segmaps/s001.mseg"}, ...],
///   "generator": { ...free-form provenance, e.g. synthetic constants... }
/// }
struct DatasetManifest {
    SegmentSchema schema = SegmentSchema::cardiac();
    std::vector<VariableDecl> variables;
    std::vector<SubjectEntry> subjects;
    std::string demographics_path = "demographics.csv";
    nlohmann::ordered_json generator = nlohmann::ordered_json::object();

    const VariableDecl* find_variable(const std::string& name) const;
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

/// Demographics table: header `id`, the declared variables, `predicted_label`, `probability`
/// in any column order. Empty cells are missing values. Numbers use a dot decimal separator.
/// Throws DatasetError listing every problem in the table.
std::vector<SubjectRecord> parse_demographics(const std::string& csv, const DatasetManifest& manifest);
std::vector<SubjectRecord> load_demographics(const std::filesystem::path& csv_path, const DatasetManifest& manifest);
std::string format_demographics(const std::vector<SubjectRecord>& records, const std::vector<VariableDecl>& variables);

/// Shortest round-trip decimal rendering, locale independent.
std::string format_number(double value);

struct Subject {
    Volume volume;
    SegmentMap segmap;
};

/// A fully validated dataset held in memory. Loading is all-or-nothing.
class Dataset {
public:
    static Dataset load(const std::filesystem::path& dir);

    Dataset(std::filesystem::path dir, DatasetManifest manifest, std::vector<Subject> subjects,
            std::vector<SubjectRecord> records);

    const std::filesystem::path& dir() const noexcept { return dir_; }
    const DatasetManifest& manifest() const noexcept { return manifest_; }
    const SegmentSchema& schema() const noexcept { return manifest_.schema; }
    const std::vector<SubjectRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    const Subject& subject(const std::string& id) const;
    const SubjectRecord& record(const std::string& id) const;
    /// Content digest over the manifest, demographics and every raster.
    const std::string& digest() const noexcept { return digest_; }

private:
    std::filesystem::path dir_;
    DatasetManifest manifest_;
    std::vector<Subject> subjects_;
    std::vector<SubjectRecord> records_;
    std::map<std::string, std::size_t> index_;
    std::string digest_;
};

/// Writes manifest, demographics and rasters under `dir` (created if absent).
void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const std::vector<Subject>& subjects, const std::vector<SubjectRecord>& records);

/// Replaces the demographics table of an existing dataset directory.
void write_demographics(const std::filesystem::path& dir, const DatasetManifest& manifest,
                        const std::vector<SubjectRecord>& records);

}  // namespace morphcf
