#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "morphcf/morphmix.hpp"
#include "morphcf/types.hpp"

namespace morphcf {

/// 2|A n B| / (|A| + |B|); 1.0 when both are empty.
double dice(std::size_t intersection, std::size_t size_a, std::size_t size_b);

/// Dice of two pixel sets given as linear indices (any order, no duplicates).
double dice(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct LabelFidelity {
    Label label = 0;
    double dice = 1.0;  // mean over frames
    std::size_t expected_px = 0;
    std::size_t observed_px = 0;
    std::size_t intersection_px = 0;
};

struct FidelityReport {
    std::vector<LabelFidelity> labels;  // one per schema label
    double mean_dice = 1.0;
};

using Segmenter = std::function<SegmentMap(const Volume&)>;

/// Per-label, per-frame Dice between two maps of equal dims.
FidelityReport compare_segmaps(const SegmentMap& expected, const SegmentMap& observed, const SegmentSchema& schema);

/// Re-segments the recombined pixels and scores them against the expected map.
FidelityReport evaluate(const RecombinedImage& recombined, const Segmenter& segmenter, const SegmentSchema& schema);

/// Label-wise mean of Dice across reports; pixel counts are summed.
FidelityReport aggregate(std::span<const FidelityReport> reports, const SegmentSchema& schema);

/// `label,dice,expected_px,observed_px,intersection_px`, labels by name.
std::string fidelity_csv(const FidelityReport& report, const SegmentSchema& schema);

}  // namespace morphcf
