#include "morphcf/morphmix.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <algorithm>

#include "morphcf/error.hpp"

namespace morphcf {

PixelCoord centroid(std::span<const PixelCoord> mask) {
    if (mask.empty()) throw ValidationError("centroid of an empty mask");
    std::int64_t rows = 0, cols = 0;
    for (const auto& p : mask) {
        rows += p.row;
        cols += p.col;
    }
    const auto n = static_cast<double>(mask.size());
    // std::round rounds halfway cases away from zero.
    return {static_cast<int>(std::round(static_cast<double>(rows) / n)),
            static_cast<int>(std::round(static_cast<double>(cols) / n))};
}

bool RecombinationProvenance::skipped_any() const noexcept {
    for (const auto& t : transfers) {
        if (t.skipped) return true;
    }
    return false;
}

std::size_t RecombinationProvenance::dropped_total() const noexcept {
    std::size_t n = 0;
    for (const auto& t : transfers) n += t.dropped;
    return n;
}

namespace {

struct FrameView {
    std::size_t height;
    std::size_t width;

    std::size_t index(PixelCoord p) const { return static_cast<std::size_t>(p.row) * width + static_cast<std::size_t>(p.col); }
    PixelCoord coord(std::size_t i) const { return {static_cast<int>(i / width), static_cast<int>(i % width)}; }
    bool in_bounds(PixelCoord p) const {
        return p.row >= 0 && p.col >= 0 && static_cast<std::size_t>(p.row) < height && static_cast<std::size_t>(p.col) < width;
    }
};

std::vector<PixelCoord> pixels_with_label(std::span<const Label> labels, Label label, const FrameView& view) {
    std::vector<PixelCoord> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) out.push_back(view.coord(i));
    }
    return out;
}

// Rounded mean intensity of the nearest unlabelled pixels around the segment: the 8-connected
// outer ring is grown one layer at a time until a layer contains label-0 pixels, and those are
// averaged. A bare ring mean would hand a cavity the intensity of its enclosing wall.
std::uint8_t boundary_fill(std::span<const std::uint8_t> pixels, std::span<const Label> labels,
                           std::span<const PixelCoord> segment, const FrameView& view) {
    std::vector<std::uint8_t> reached(labels.size(), 0);
    std::vector<std::size_t> layer;
    for (const auto& p : segment) reached[view.index(p)] = 1;
    for (const auto& p : segment) layer.push_back(view.index(p));
    while (!layer.empty()) {
        std::vector<std::size_t> next;
        std::uint64_t sum = 0, count = 0;
        for (const auto i : layer) {
            const auto p = view.coord(i);
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const PixelCoord q{p.row + dr, p.col + dc};
                    if (!view.in_bounds(q)) continue;
                    const auto j = view.index(q);
                    if (reached[j]) continue;
                    reached[j] = 1;
                    next.push_back(j);
                    if (labels[j] == 0) {
                        sum += pixels[j];
                        ++count;
                    }
                }
            }
        }
        if (count > 0) return static_cast<std::uint8_t>(std::round(static_cast<double>(sum) / static_cast<double>(count)));
        layer = std::move(next);
    }
    const auto total = std::accumulate(pixels.begin(), pixels.end(), std::uint64_t{0});
    return static_cast<std::uint8_t>(std::round(static_cast<double>(total) / static_cast<double>(pixels.size())));
}

// Connected components (4-connectivity) of the pixels carrying `label`, in order of their
// first pixel in row-major order.
std::vector<std::vector<PixelCoord>> components(std::span<const Label> labels, Label label, const FrameView& view) {
    std::vector<std::uint8_t> seen(labels.size(), 0);
    std::vector<std::vector<PixelCoord>> out;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < labels.size(); ++start) {
        if (labels[start] != label || seen[start]) continue;
        auto& comp = out.emplace_back();
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            const auto p = view.coord(i);
            comp.push_back(p);
            const PixelCoord nbrs[4] = {{p.row - 1, p.col}, {p.row + 1, p.col}, {p.row, p.col - 1}, {p.row, p.col + 1}};
            for (const auto& q : nbrs) {
                if (!view.in_bounds(q)) continue;
                const auto j = view.index(q);
                if (labels[j] == label && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            }
        }
    }
    return out;
}

// Component pixel closest to the component's exact centroid; ties keep the first in row-major order.
PixelCoord flood_seed(std::vector<PixelCoord> comp) {
    std::sort(comp.begin(), comp.end(), [](const PixelCoord& a, const PixelCoord& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    double rows = 0, cols = 0;
    for (const auto& p : comp) {
        rows += p.row;
        cols += p.col;
    }
    const double cr = rows / static_cast<double>(comp.size());
    const double cc = cols / static_cast<double>(comp.size());
    PixelCoord best = comp.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& p : comp) {
        const double d = (p.row - cr) * (p.row - cr) + (p.col - cc) * (p.col - cc);
        if (d < best_d) {
            best_d = d;
            best = p;
        }
    }
    return best;
}

}  // namespace

RecombinedImage recombine(Raster target, Raster source, const SegmentSelection& selection) {
    check_pairing(target.volume, target.segmap);
    check_pairing(source.volume, source.segmap);
    const auto& td = target.volume.dims();
    const auto& sd = source.volume.dims();
    if (td.frames != sd.frames) {
        throw ValidationError("frame-count mismatch: target " + target.volume.id() + " has " + std::to_string(td.frames) +
                              ", source " + source.volume.id() + " has " + std::to_string(sd.frames));
    }
    if (td != sd) {
        throw ValidationError("dimension mismatch: target " + to_string(td) + " vs source " + to_string(sd));
    }

    RecombinationProvenance prov{{target.volume.id(), source.volume.id(), selection}, {}, {}};
    std::vector<std::uint8_t> pixels(target.volume.pixels().begin(), target.volume.pixels().end());
    std::vector<Label> expected(target.segmap.labels().begin(), target.segmap.labels().end());
    const FrameView view{td.height, td.width};
    const auto labels = selection.labels();

    for (std::size_t f = 0; f < td.frames; ++f) {
        const auto t_pixels = target.volume.frame(f);
        const auto t_labels = target.segmap.frame(f);
        const auto s_pixels = source.volume.frame(f);
        const auto s_labels = source.segmap.frame(f);
        std::span<std::uint8_t> out_pixels(pixels.data() + f * td.frame_size(), td.frame_size());
        std::span<Label> out_labels(expected.data() + f * td.frame_size(), td.frame_size());

        struct Pending {
            LabelTransfer transfer;
            std::vector<PixelCoord> target_px;
            std::vector<PixelCoord> source_px;
        };
        std::vector<Pending> pending;
        for (Label l : labels) {
            LabelTransfer transfer;
            transfer.frame = f;
            transfer.label = l;
            Pending p{transfer, pixels_with_label(t_labels, l, view), pixels_with_label(s_labels, l, view)};
            if (p.source_px.empty()) {
                p.transfer.skipped = true;
                prov.warnings.push_back("frame " + std::to_string(f) + ": label " + std::to_string(l) +
                                        " absent in source " + source.volume.id() + "; skipped");
            }
            pending.push_back(std::move(p));
        }

        // Mask every selected segment before any copy.
        for (auto& p : pending) {
            if (p.transfer.skipped || p.target_px.empty()) continue;
            p.transfer.fill_value = boundary_fill(t_pixels, t_labels, p.target_px, view);
            for (const auto& q : p.target_px) {
                out_pixels[view.index(q)] = p.transfer.fill_value;
                out_labels[view.index(q)] = 0;
            }
        }

        for (auto& p : pending) {
            auto& t = p.transfer;
            if (t.skipped) continue;
            const auto source_centre = centroid(p.source_px);
            PixelCoord anchor;
            if (p.target_px.empty()) {
                t.target_empty = true;
                anchor = {static_cast<int>(td.height / 2), static_cast<int>(td.width / 2)};
            } else {
                anchor = centroid(p.target_px);
            }
            t.offset = {anchor.row - source_centre.row, anchor.col - source_centre.col};

            std::vector<std::uint8_t> visited(s_labels.size(), 0);
            std::vector<PixelCoord> stack;
            for (auto& comp : components(s_labels, t.label, view)) {
                const auto seed = flood_seed(std::move(comp));
                visited[view.index(seed)] = 1;
                stack.push_back(seed);
                while (!stack.empty()) {
                    const auto p_src = stack.back();
                    stack.pop_back();
                    const PixelCoord dst{p_src.row + t.offset.row, p_src.col + t.offset.col};
                    if (view.in_bounds(dst)) {
                        out_pixels[view.index(dst)] = s_pixels[view.index(p_src)];
                        out_labels[view.index(dst)] = t.label;
                        ++t.copied;
                    } else {
                        ++t.dropped;
                    }
                    const PixelCoord nbrs[4] = {{p_src.row - 1, p_src.col},
                                                {p_src.row + 1, p_src.col},
                                                {p_src.row, p_src.col - 1},
                                                {p_src.row, p_src.col + 1}};
                    for (const auto& q : nbrs) {
                        if (!view.in_bounds(q)) continue;
                        const auto j = view.index(q);
                        if (s_labels[j] == t.label && !visited[j]) {
                            visited[j] = 1;
                            stack.push_back(q);
                        }
                    }
                }
            }
            if (t.dropped) {
                prov.warnings.push_back("frame " + std::to_string(f) + ": label " + std::to_string(t.label) + " dropped " +
                                        std::to_string(t.dropped) + " out-of-bounds pixel(s)");
            }
        }
        for (auto& p : pending) prov.transfers.push_back(p.transfer);
    }

    const std::string id = target.volume.id() + "~" + source.volume.id() + "#" + std::to_string(selection.mask());
    return {Volume(id, td, std::move(pixels)), SegmentMap(td, std::move(expected)), std::move(prov)};
}

}  // namespace morphcf
