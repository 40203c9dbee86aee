#include "morphcf/seg_eval.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

#include "morphcf/error.hpp"

namespace morphcf {

double dice(std::size_t intersection, std::size_t size_a, std::size_t size_b) {
    if (size_a + size_b == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection) / static_cast<double>(size_a + size_b);
}

double dice(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    const std::unordered_set<std::size_t> in_a(a.begin(), a.end());
    const auto shared = static_cast<std::size_t>(std::count_if(b.begin(), b.end(), [&](std::size_t i) { return in_a.count(i) != 0; }));
    return dice(shared, a.size(), b.size());
}

FidelityReport compare_segmaps(const SegmentMap& expected, const SegmentMap& observed, const SegmentSchema& schema) {
    if (expected.dims() != observed.dims()) {
        throw ValidationError("segment map dims differ: " + to_string(expected.dims()) + " vs " + to_string(observed.dims()));
    }
    const auto& dims = expected.dims();
    FidelityReport report;
    double dice_sum = 0;
    for (const auto& sl : schema.labels()) {
        LabelFidelity lf{sl.id};
        double per_frame = 0;
        for (std::size_t f = 0; f < dims.frames; ++f) {
            const auto e = expected.frame(f);
            const auto o = observed.frame(f);
            std::size_t ne = 0, no = 0, both = 0;
            for (std::size_t i = 0; i < e.size(); ++i) {
                ne += e[i] == sl.id;
                no += o[i] == sl.id;
                both += e[i] == sl.id && o[i] == sl.id;
            }
            per_frame += dice(both, ne, no);
            lf.expected_px += ne;
            lf.observed_px += no;
            lf.intersection_px += both;
        }
        lf.dice = per_frame / dims.frames;
        dice_sum += lf.dice;
        report.labels.push_back(lf);
    }
    report.mean_dice = dice_sum / static_cast<double>(schema.size());
    return report;
}

FidelityReport evaluate(const RecombinedImage& recombined, const Segmenter& segmenter, const SegmentSchema& schema) {
    return compare_segmaps(recombined.expected_segmap, segmenter(recombined.pixels), schema);
}

FidelityReport aggregate(std::span<const FidelityReport> reports, const SegmentSchema& schema) {
    FidelityReport out;
    for (const auto& sl : schema.labels()) out.labels.push_back({sl.id, 0.0});
    if (reports.empty()) {
        for (auto& l : out.labels) l.dice = 1.0;
        return out;
    }
    for (const auto& r : reports) {
        if (r.labels.size() != out.labels.size()) throw ValidationError("fidelity reports disagree on label count");
        for (std::size_t k = 0; k < r.labels.size(); ++k) {
            out.labels[k].dice += r.labels[k].dice;
            out.labels[k].expected_px += r.labels[k].expected_px;
            out.labels[k].observed_px += r.labels[k].observed_px;
            out.labels[k].intersection_px += r.labels[k].intersection_px;
        }
    }
    double sum = 0;
    for (auto& l : out.labels) {
        l.dice /= static_cast<double>(reports.size());
        sum += l.dice;
    }
    out.mean_dice = sum / static_cast<double>(out.labels.size());
    return out;
}

std::string fidelity_csv(const FidelityReport& report, const SegmentSchema& schema) {
    std::string out = "label,dice,expected_px,observed_px,intersection_px\n";
    for (const auto& l : report.labels) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", l.dice);
        out += schema.name_of(l.label) + "," + buf + "," + std::to_string(l.expected_px) + "," +
               std::to_string(l.observed_px) + "," + std::to_string(l.intersection_px) + "\n";
    }
    return out;
}

}  // namespace morphcf
