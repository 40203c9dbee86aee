#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morphcf/types.hpp"

namespace morphcf {

struct PixelCoord {
    int row = 0;
    int col = 0;

    friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Mean coordinate, each axis rounded half away from zero. Throws ValidationError on an empty mask.
PixelCoord centroid(std::span<const PixelCoord> mask);

/// One (target, source, segments) transplant.
struct RecombinationSpec {
    std::string target_id;
    std::string source_id;
    SegmentSelection selection;
};

/// What happened to one selected label in one frame.
struct LabelTransfer {
    std::size_t frame = 0;
    Label label = 0;
    bool skipped = false;        // source segment absent in this frame; target left intact
    bool target_empty = false;   // offset anchored on the frame centre
    PixelCoord offset;           // added to source coordinates
    std::uint8_t fill_value = 0; // written over the erased target segment
    std::size_t copied = 0;      // in-bounds pixels written
    std::size_t dropped = 0;     // source pixels that landed out of bounds
};

struct RecombinationProvenance {
    RecombinationSpec spec;
    std::vector<LabelTransfer> transfers;  // frame-major, labels ascending
    std::vector<std::string> warnings;

    bool skipped_any() const noexcept;
    std::size_t dropped_total() const noexcept;
};

struct RecombinedImage {
    Volume pixels;
    SegmentMap expected_segmap;
    RecombinationProvenance provenance;
};

struct Raster {
    const Volume& volume;
    const SegmentMap& segmap;
};

/// Transplants the selected segments of `source` into `target`.
///
/// Per frame, every selected target segment is first erased to the rounded mean of the nearest
/// unlabelled pixels: its 8-connected outer ring, grown outward until a layer holds label-0
/// pixels (frame mean when none exist). Then, in ascending
/// label order, each 4-connected component of the source segment is flood-filled from the
/// component pixel nearest its centroid and written at the offset that aligns the source
/// segment centroid with the target segment centroid. Later labels overwrite earlier ones.
/// Pixels outside the erased and written positions are left untouched.
RecombinedImage recombine(Raster target, Raster source, const SegmentSelection& selection);

}  // namespace morphcf
