#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morphcf/cohort.hpp"
#include "morphcf/dataset.hpp"
#include "morphcf/gateway.hpp"
#include "morphcf/morphmix.hpp"

namespace morphcf {

struct RecombinedResult {
    RecombinedResult(RecombinationSpec spec, Prediction target_prediction)
        : spec(std::move(spec)), target_prediction(std::move(target_prediction)) {}

    RecombinationSpec spec;
    Prediction target_prediction;
    std::optional<Prediction> prediction;  // absent when the spec was skipped
    bool is_counterfactual = false;        // prediction label differs from the target's
    bool skipped = false;                  // a selected source segment was absent
    std::size_t dropped_pixels = 0;
    std::vector<std::string> warnings;
    std::optional<Volume> volume;  // populated only when volumes are stored
    std::optional<SegmentMap> expected_segmap;
};

struct RunArtifact {
    std::string run_id;
    std::string created_at;  // UTC, ISO 8601 basic format
    std::string dataset_path;
    std::string dataset_digest;
    std::string model_id;
    SegmentSchema schema = SegmentSchema::cardiac();
    std::vector<std::string> targets;  // sorted
    std::vector<std::string> sources;  // sorted
    std::vector<SegmentSelection> selections;  // ascending mask
    std::vector<RecombinedResult> results;     // (target, source, selection) order
    bool volumes_stored = false;

    std::size_t skipped_count() const;
};

struct RunOptions {
    unsigned jobs = 0;  // 0 = hardware concurrency
    bool store_volumes = false;
};

/// |targets| * |sources| * directions * |selections|.
std::size_t expected_count(std::size_t targets, std::size_t sources, std::size_t directions, std::size_t selections);

/// Recombines every (target, source, selection) triple, classifies the results and flags
/// counterfactuals. Targets must share one predicted label and sources the other; the two
/// sets must be disjoint. Output order and content do not depend on `options.jobs`.
RunArtifact run(const Dataset& dataset, std::vector<std::string> targets, std::vector<std::string> sources,
                std::vector<SegmentSelection> selections, ClassifierGateway& gateway, const RunOptions& options = {});

/// Rebuilds the recombined image behind a spec.
RecombinedImage recompute(const Dataset& dataset, const RecombinationSpec& spec);

struct SummaryRow {
    SegmentSelection selection;
    std::size_t counterfactuals = 0;
    std::size_t unchanged = 0;
    std::size_t skipped = 0;
    std::optional<double> proportion;  // cf / (cf + unchanged), rounded to 3 decimals; null when both are 0
};

SummaryRow make_summary_row(const SegmentSelection& selection, std::size_t counterfactuals, std::size_t unchanged,
                            std::size_t skipped = 0);

std::vector<SummaryRow> summarize(const RunArtifact& artifact);

/// Summary over the results whose source subject satisfies `clause`.
std::vector<SummaryRow> subgroup_summarize(const RunArtifact& artifact, const FilterClause& clause,
                                           std::span<const SubjectRecord> records,
                                           std::span<const VariableDecl> variables);

/// Adds counts row by row, e.g. the two directions of a swapped-cohort experiment.
std::vector<SummaryRow> combine_summaries(std::span<const SummaryRow> a, std::span<const SummaryRow> b);

/// `segments,counterfactuals,unchanged,skipped,proportion` with a 3-decimal proportion; null proportions are empty.
std::string summary_csv(std::span<const SummaryRow> rows, const SegmentSchema& schema);

std::string format_proportion(double proportion);

/// Writes the artifact to a new directory; refuses to overwrite. Appears atomically.
void write_run(const RunArtifact& artifact, const std::filesystem::path& dir);
RunArtifact read_run(const std::filesystem::path& dir);

std::string results_csv(const RunArtifact& artifact);

}  // namespace morphcf
