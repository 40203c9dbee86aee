#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace morphcf {

using Label = std::uint8_t;

/// Raster extent shared by a volume and its segment map.
struct Dims {
    std::uint16_t frames = 0;
    std::uint16_t height = 0;
    std::uint16_t width = 0;

    std::size_t frame_size() const noexcept { return std::size_t{height} * width; }
    std::size_t voxel_count() const noexcept { return frame_size() * frames; }

    friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// A frames x height x width grayscale raster. Immutable once built.
class Volume {
public:
    static constexpr std::uint16_t min_side = 8;

    Volume(std::string id, Dims dims, std::vector<std::uint8_t> pixels);

    const std::string& id() const noexcept { return id_; }
    const Dims& dims() const noexcept { return dims_; }
    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
    std::span<const std::uint8_t> frame(std::size_t f) const;
    std::uint8_t at(std::size_t f, std::size_t row, std::size_t col) const {
        return pixels_[f * dims_.frame_size() + row * dims_.width + col];
    }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    std::string id_;
    Dims dims_;
    std::vector<std::uint8_t> pixels_;
};

/// Per-pixel structure labels, 0 = background.
class SegmentMap {
public:
    SegmentMap(Dims dims, std::vector<Label> labels);

    const Dims& dims() const noexcept { return dims_; }
    std::span<const Label> labels() const noexcept { return labels_; }
    std::span<const Label> frame(std::size_t f) const;
    Label at(std::size_t f, std::size_t row, std::size_t col) const {
        return labels_[f * dims_.frame_size() + row * dims_.width + col];
    }
    Label max_label() const noexcept;

    friend bool operator==(const SegmentMap&, const SegmentMap&) = default;

private:
    Dims dims_;
    std::vector<Label> labels_;
};

/// Throws ValidationError when a volume and map disagree on extent.
void check_pairing(const Volume& volume, const SegmentMap& map);

struct SegmentLabel {
    Label id = 0;
    std::string name;

    friend bool operator==(const SegmentLabel&, const SegmentLabel&) = default;
};

/// Ordered label schema: ids contiguous from 1, names distinct snake_case.
class SegmentSchema {
public:
    static constexpr std::size_t max_labels = 16;

    explicit SegmentSchema(std::vector<SegmentLabel> labels);

    /// lv_cavity, lv_myocardium, rv_cavity.
    static SegmentSchema cardiac();

    const std::vector<SegmentLabel>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return labels_.size(); }
    bool contains(Label id) const noexcept { return id >= 1 && id <= labels_.size(); }
    const std::string& name_of(Label id) const;
    Label id_of(std::string_view name) const;

    /// Throws ValidationError naming the first label the schema does not know.
    void validate(const SegmentMap& map) const;

    friend bool operator==(const SegmentSchema&, const SegmentSchema&) = default;

private:
    std::vector<SegmentLabel> labels_;
};

/// Nonempty subset of schema labels, stored as a bitmask (label 1 = bit 0).
class SegmentSelection {
public:
    SegmentSelection(std::uint32_t mask, const SegmentSchema& schema);
    static SegmentSelection from_labels(std::span<const Label> labels, const SegmentSchema& schema);
    /// Parses "lv_cavity+rv_cavity" style names.
    static SegmentSelection parse(std::string_view names, const SegmentSchema& schema);

    std::uint32_t mask() const noexcept { return mask_; }
    bool contains(Label id) const noexcept { return id >= 1 && id <= 32 && ((mask_ >> (id - 1)) & 1U); }
    std::vector<Label> labels() const;
    std::size_t size() const noexcept;
    std::string name(const SegmentSchema& schema) const;

    friend bool operator==(const SegmentSelection&, const SegmentSelection&) = default;
    friend auto operator<=>(const SegmentSelection& a, const SegmentSelection& b) { return a.mask_ <=> b.mask_; }

private:
    SegmentSelection() = default;
    std::uint32_t mask_ = 0;
};

/// All 2^k - 1 nonempty selections in ascending bitmask order.
std::vector<SegmentSelection> combinations(const SegmentSchema& schema);

using DemographicValue = std::variant<double, std::string>;

/// Label implied by a probability; exactly 0.5 maps to 0.
int label_for(double probability);

struct SubjectRecord {
    std::string id;
    std::map<std::string, DemographicValue> demographics;  // absent key = missing
    int predicted_label = 0;
    double probability = 0.0;

    /// Throws ValidationError unless probability is in [0,1] and agrees with the label.
    void validate() const;
};

}  // namespace morphcf
