#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "morphcf/dataset.hpp"
#include "morphcf/synthetic.hpp"
#include "morphcf/types.hpp"
#include "morphcf/volume_io.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Fresh directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("morphcf-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// Single-frame map with one filled disk of `label`.
inline morphcf::SegmentMap disk_map(std::uint16_t size, double row, double col, double radius, morphcf::Label label) {
    std::vector<morphcf::Label> labels(std::size_t{size} * size, 0);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            if (std::hypot(r - row, c - col) <= radius) labels[std::size_t(r) * size + c] = label;
        }
    }
    return morphcf::SegmentMap({1, size, size}, std::move(labels));
}

/// Intensities: `fg(r, c)` inside labelled pixels, `bg` elsewhere.
template <class Fg>
morphcf::Volume paint(const std::string& id, const morphcf::SegmentMap& map, std::uint8_t bg, Fg fg) {
    const auto& d = map.dims();
    std::vector<std::uint8_t> px(d.voxel_count(), bg);
    for (std::size_t f = 0; f < d.frames; ++f) {
        for (std::size_t r = 0; r < d.height; ++r) {
            for (std::size_t c = 0; c < d.width; ++c) {
                if (map.at(f, r, c) != 0) px[(f * d.height + r) * d.width + c] = fg(r, c);
            }
        }
    }
    return morphcf::Volume(id, d, std::move(px));
}

/// Generates a synthetic dataset under `dir` and loads it.
inline morphcf::Dataset synthetic_dataset(const fs::path& dir, std::size_t n, std::uint64_t seed,
                                          double noise = 10.0, std::uint16_t frames = 1) {
    morphcf::synthetic::GenerateOptions opt;
    opt.subjects = n;
    opt.seed = seed;
    opt.noise_sigma = noise;
    opt.frames = frames;
    morphcf::synthetic::generate_dataset(opt, dir);
    return morphcf::Dataset::load(dir);
}

inline std::vector<std::string> ids_with_label(const morphcf::Dataset& ds, int label) {
    std::vector<std::string> out;
    for (const auto& r : ds.records()) {
        if (r.predicted_label == label) out.push_back(r.id);
    }
    return out;
}

inline std::string slurp(const fs::path& path) {
    const auto bytes = morphcf::read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

}  // namespace fixtures
