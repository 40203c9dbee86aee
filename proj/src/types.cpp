#include "morphcf/types.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <set>

#include "morphcf/error.hpp"

namespace morphcf {

DatasetError::DatasetError(std::vector<std::string> problems)
    : ValidationError([&] {
          std::string msg = std::to_string(problems.size()) + " dataset problem(s): ";
          for (std::size_t i = 0; i < problems.size(); ++i) {
              if (i) msg += "; ";
              msg += problems[i];
          }
          return msg;
      }()),
      problems_(std::move(problems)) {}

std::string to_string(const Dims& dims) {
    return std::to_string(dims.frames) + "x" + std::to_string(dims.height) + "x" + std::to_string(dims.width);
}

namespace {

void check_dims(const Dims& dims, std::size_t buffer_size, const char* what) {
    if (dims.frames < 1 || dims.height < Volume::min_side || dims.width < Volume::min_side) {
        throw ValidationError(std::string(what) + " dims " + to_string(dims) + " below minimum 1x8x8");
    }
    if (buffer_size != dims.voxel_count()) {
        throw ValidationError(std::string(what) + " buffer holds " + std::to_string(buffer_size) +
                              " values, dims " + to_string(dims) + " need " + std::to_string(dims.voxel_count()));
    }
}

bool is_snake_case(std::string_view s) {
    if (s.empty() || !(s.front() >= 'a' && s.front() <= 'z') || s.back() == '_') return false;
    char prev = 0;
    for (char c : s) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
        if (!ok || (c == '_' && prev == '_')) return false;
        prev = c;
    }
    return true;
}

}  // namespace

Volume::Volume(std::string id, Dims dims, std::vector<std::uint8_t> pixels)
    : id_(std::move(id)), dims_(dims), pixels_(std::move(pixels)) {
    check_dims(dims_, pixels_.size(), "volume");
}

std::span<const std::uint8_t> Volume::frame(std::size_t f) const {
    if (f >= dims_.frames) throw ValidationError("frame " + std::to_string(f) + " out of range for " + id_);
    return std::span<const std::uint8_t>(pixels_).subspan(f * dims_.frame_size(), dims_.frame_size());
}

SegmentMap::SegmentMap(Dims dims, std::vector<Label> labels) : dims_(dims), labels_(std::move(labels)) {
    check_dims(dims_, labels_.size(), "segment map");
}

std::span<const Label> SegmentMap::frame(std::size_t f) const {
    if (f >= dims_.frames) throw ValidationError("frame " + std::to_string(f) + " out of range");
    return std::span<const Label>(labels_).subspan(f * dims_.frame_size(), dims_.frame_size());
}

Label SegmentMap::max_label() const noexcept {
    return labels_.empty() ? Label{0} : *std::max_element(labels_.begin(), labels_.end());
}

void check_pairing(const Volume& volume, const SegmentMap& map) {
    if (volume.dims() != map.dims()) {
        throw ValidationError("dims mismatch pairing " + volume.id() + ": volume " + to_string(volume.dims()) +
                              " vs segment map " + to_string(map.dims()));
    }
}

SegmentSchema::SegmentSchema(std::vector<SegmentLabel> labels) : labels_(std::move(labels)) {
    if (labels_.empty() || labels_.size() > max_labels) {
        throw ValidationError("schema must hold 1.." + std::to_string(max_labels) + " labels");
    }
    std::set<std::string> names;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        const auto& l = labels_[i];
        if (l.id != i + 1) {
            throw ValidationError("schema label ids must be contiguous from 1; got " + std::to_string(l.id) +
                                  " at position " + std::to_string(i));
        }
        if (!is_snake_case(l.name)) throw ValidationError("schema label name not snake_case: '" + l.name + "'");
        if (!names.insert(l.name).second) throw ValidationError("duplicate schema label name: " + l.name);
    }
}

SegmentSchema SegmentSchema::cardiac() {
    return SegmentSchema({{1, "lv_cavity"}, {2, "lv_myocardium"}, {3, "rv_cavity"}});
}

const std::string& SegmentSchema::name_of(Label id) const {
    if (!contains(id)) throw ValidationError("label " + std::to_string(id) + " not in schema");
    return labels_[id - 1].name;
}

Label SegmentSchema::id_of(std::string_view name) const {
    for (const auto& l : labels_) {
        if (l.name == name) return l.id;
    }
    throw ValidationError("unknown segment name: " + std::string(name));
}

void SegmentSchema::validate(const SegmentMap& map) const {
    std::array<bool, 256> seen{};
    for (Label l : map.labels()) seen[l] = true;
    for (std::size_t l = 1; l < seen.size(); ++l) {
        if (seen[l] && !contains(static_cast<Label>(l))) {
            throw ValidationError("label " + std::to_string(l) + " not in schema");
        }
    }
}

SegmentSelection::SegmentSelection(std::uint32_t mask, const SegmentSchema& schema) : mask_(mask) {
    const std::uint32_t all = (1U << schema.size()) - 1U;
    if (mask == 0) throw ValidationError("segment selection must be nonempty");
    if ((mask & ~all) != 0) throw ValidationError("segment selection mask " + std::to_string(mask) + " exceeds schema");
}

SegmentSelection SegmentSelection::from_labels(std::span<const Label> labels, const SegmentSchema& schema) {
    std::uint32_t mask = 0;
    for (Label l : labels) {
        if (!schema.contains(l)) throw ValidationError("label " + std::to_string(l) + " not in schema");
        mask |= 1U << (l - 1);
    }
    return SegmentSelection(mask, schema);
}

SegmentSelection SegmentSelection::parse(std::string_view names, const SegmentSchema& schema) {
    std::vector<Label> ids;
    std::size_t start = 0;
    while (start <= names.size()) {
        auto end = names.find('+', start);
        if (end == std::string_view::npos) end = names.size();
        ids.push_back(schema.id_of(names.substr(start, end - start)));
        start = end + 1;
    }
    return from_labels(ids, schema);
}

std::vector<Label> SegmentSelection::labels() const {
    std::vector<Label> out;
    for (unsigned bit = 0; bit < 32; ++bit) {
        if ((mask_ >> bit) & 1U) out.push_back(static_cast<Label>(bit + 1));
    }
    return out;
}

std::size_t SegmentSelection::size() const noexcept { return static_cast<std::size_t>(std::popcount(mask_)); }

std::string SegmentSelection::name(const SegmentSchema& schema) const {
    std::string out;
    for (Label l : labels()) {
        if (!out.empty()) out += '+';
        out += schema.name_of(l);
    }
    return out;
}

std::vector<SegmentSelection> combinations(const SegmentSchema& schema) {
    std::vector<SegmentSelection> out;
    const std::uint32_t count = (1U << schema.size()) - 1U;
    out.reserve(count);
    for (std::uint32_t mask = 1; mask <= count; ++mask) out.emplace_back(mask, schema);
    return out;
}

int label_for(double probability) { return probability > 0.5 ? 1 : 0; }

void SubjectRecord::validate() const {
    if (!(probability >= 0.0 && probability <= 1.0)) {
        throw ValidationError("probability " + std::to_string(probability) + " out of range [0,1] for " + id);
    }
    if (predicted_label != label_for(probability)) {
        throw ValidationError("predicted_label " + std::to_string(predicted_label) + " inconsistent with probability for " + id);
    }
}

}  // namespace morphcf
