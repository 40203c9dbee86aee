#include "morphcf/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <mutex>
#include <optional>
#include <thread>

#include "morphcf/error.hpp"
#include "morphcf/rng.hpp"

namespace morphcf::synthetic {

namespace {

constexpr double margin = 2.0;

std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

double ring_inner_for(std::uint16_t height, std::uint16_t width) { return std::min(height, width) / 2.0 - 12.0; }

}  // namespace

void PhantomParams::validate(std::uint16_t height, std::uint16_t width) const {
    const double outer = lv_cavity_radius + myocardium_thickness;
    auto fits = [&](double row, double col, double radius, const char* what) {
        if (row - radius < margin || col - radius < margin || row + radius > height - 1 - margin ||
            col + radius > width - 1 - margin) {
            throw ValidationError(std::string("phantom ") + what + " does not fit the frame with a 2-pixel margin");
        }
    };
    if (lv_cavity_radius <= 0 || myocardium_thickness <= 0 || rv_radius <= 0 || chest_wall_width <= 0) {
        throw ValidationError("phantom radii and thicknesses must be positive");
    }
    fits(lv_row, lv_col, outer, "left ventricle");
    fits(lv_row, lv_col + rv_offset, rv_radius, "right ventricle");
    fits(height / 2.0, width / 2.0, chest_wall_inner + chest_wall_width, "chest wall");
    if (rv_offset < outer + rv_radius) throw ValidationError("phantom right ventricle overlaps the myocardium");
    const double centre_row = height / 2.0, centre_col = width / 2.0;
    auto reach = [&](double row, double col, double radius) {
        return std::hypot(row - centre_row, col - centre_col) + radius;
    };
    if (std::max(reach(lv_row, lv_col, outer), reach(lv_row, lv_col + rv_offset, rv_radius)) > chest_wall_inner - margin) {
        throw ValidationError("phantom heart touches the chest wall");
    }
    std::array<double, 5> centres{bands.background, bands.lv_myocardium, bands.chest_wall, bands.lv_cavity, bands.rv_cavity};
    std::sort(centres.begin(), centres.end());
    if (std::adjacent_find(centres.begin(), centres.end()) != centres.end()) {
        throw ValidationError("phantom intensity band centres must be distinct");
    }
}

Subject render_phantom(const std::string& id, const PhantomParams& p, std::uint16_t frames, std::uint16_t height,
                       std::uint16_t width, double systolic_contraction) {
    p.validate(height, width);
    const Dims dims{frames, height, width};
    std::vector<std::uint8_t> pixels(dims.voxel_count());
    std::vector<Label> labels(dims.voxel_count());
    Rng noise(p.noise_seed, 0);
    const double outer0 = p.lv_cavity_radius + p.myocardium_thickness;
    const double centre_row = height / 2.0, centre_col = width / 2.0;
    const double rv_col = p.lv_col + p.rv_offset;
    for (std::size_t f = 0; f < frames; ++f) {
        const double phase = std::sin(std::numbers::pi * static_cast<double>(f) / frames);
        const double cavity = p.lv_cavity_radius * (1.0 - systolic_contraction * phase * phase);
        const double outer = std::sqrt(cavity * cavity + outer0 * outer0 - p.lv_cavity_radius * p.lv_cavity_radius);
        for (std::size_t r = 0; r < height; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                const auto i = f * dims.frame_size() + r * width + c;
                const double d_lv = std::hypot(r - p.lv_row, c - p.lv_col);
                const double d_rv = std::hypot(r - p.lv_row, c - rv_col);
                const double d_centre = std::hypot(r - centre_row, c - centre_col);
                double value = p.bands.background;
                Label label = 0;
                if (d_lv <= cavity) {
                    label = 1;
                    value = p.bands.lv_cavity;
                } else if (d_lv <= outer) {
                    label = 2;
                    value = p.bands.lv_myocardium;
                } else if (d_rv <= p.rv_radius) {
                    label = 3;
                    value = p.bands.rv_cavity;
                } else if (d_centre >= p.chest_wall_inner && d_centre < p.chest_wall_inner + p.chest_wall_width) {
                    value = p.bands.chest_wall;
                }
                if (p.noise_sigma > 0) value += noise.normal(0.0, p.noise_sigma);
                pixels[i] = to_pixel(value);
                labels[i] = label;
            }
        }
    }
    return {Volume(id, dims, std::move(pixels)), SegmentMap(dims, std::move(labels))};
}

std::string subject_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04zu", index + 1);
    return buf;
}

GeneratedSubject generate_subject(const GenerateOptions& o, std::size_t index) {
    const auto& k = o.constants;
    Rng rng(o.seed, index);
    PhantomParams p;
    p.bands = k.bands;
    p.noise_sigma = o.noise_sigma;
    p.lv_row = o.size / 2 + static_cast<double>(rng.uniform_int(-k.centre_jitter, k.centre_jitter));
    p.lv_col = o.size / 2 - 10 + static_cast<double>(rng.uniform_int(-k.centre_jitter, k.centre_jitter));
    p.lv_cavity_radius = rng.uniform(k.cavity_radius_min, k.cavity_radius_max);
    p.myocardium_thickness = rng.uniform(k.thickness_min, k.thickness_max);
    p.rv_radius = rng.uniform(k.rv_radius_min, k.rv_radius_max);
    const double gap = rng.uniform(k.rv_gap_min, k.rv_gap_max);
    p.rv_offset = p.lv_cavity_radius + p.myocardium_thickness + gap + p.rv_radius;
    p.chest_wall_inner = ring_inner_for(o.size, o.size);
    p.noise_seed = rng.next();

    GroundTruth truth;
    truth.thickness = p.myocardium_thickness;
    truth.thickness_noise = rng.normal(0.0, k.truth_noise_sigma);
    truth.threshold = k.truth_threshold;
    truth.true_label = truth.thickness + truth.thickness_noise > truth.threshold ? 1 : 0;

    const auto id = subject_id(index);
    SubjectRecord record;
    record.id = id;
    record.demographics["age"] = std::round(std::clamp(rng.normal(62.0, 9.0), 40.0, 85.0));
    record.demographics["sex"] = std::string(rng.uniform() < 0.5 ? "female" : "male");
    const double bmi = std::round(std::clamp(rng.normal(27.0, 4.0), 16.0, 45.0) * 10.0) / 10.0;
    if (rng.uniform() >= 0.05) record.demographics["bmi"] = bmi;

    auto subject = render_phantom(id, p, o.frames, o.size, o.size, k.systolic_contraction);
    const auto prediction = classify(subject.segmap, k);
    record.predicted_label = prediction.label;
    record.probability = prediction.probability;
    return {std::move(subject), std::move(record), p, truth};
}

namespace {

nlohmann::ordered_json bands_json(const IntensityBands& b) {
    return {{"background", b.background}, {"lv_myocardium", b.lv_myocardium}, {"chest_wall", b.chest_wall},
            {"lv_cavity", b.lv_cavity},   {"rv_cavity", b.rv_cavity}};
}

}  // namespace

DatasetManifest generate_dataset(const GenerateOptions& o, const std::filesystem::path& out_dir) {
    if (o.subjects < 2) throw ValidationError("--subjects must be at least 2");
    if (o.size < 128) throw ValidationError("phantom frame size must be at least 128");
    if (o.frames < 1) throw ValidationError("frame count must be at least 1");

    std::vector<std::optional<GeneratedSubject>> generated(o.subjects);
    unsigned jobs = o.jobs ? o.jobs : std::max(1U, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, o.subjects));
    {
        std::vector<std::jthread> workers;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (unsigned w = 0; w < jobs; ++w) {
            workers.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < o.subjects; i += jobs) generated[i].emplace(generate_subject(o, i));
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            });
        }
        workers.clear();
        if (failure) std::rethrow_exception(failure);
    }

    DatasetManifest manifest;
    manifest.variables = {{"age", VariableKind::numeric, "years"},
                          {"sex", VariableKind::categorical, std::nullopt},
                          {"bmi", VariableKind::numeric, "kg/m2"}};
    const auto& k = o.constants;
    auto& g = manifest.generator;
    g["kind"] = "synthetic-phantom";
    g["seed"] = o.seed;
    g["subjects"] = o.subjects;
    g["frames"] = o.frames;
    g["size"] = o.size;
    g["noise_sigma"] = o.noise_sigma;
    g["constants"] = {{"classifier_slope", k.classifier_slope},
                      {"classifier_threshold", k.classifier_threshold},
                      {"truth_threshold", k.truth_threshold},
                      {"truth_noise_sigma", k.truth_noise_sigma},
                      {"cavity_radius", {k.cavity_radius_min, k.cavity_radius_max}},
                      {"myocardium_thickness", {k.thickness_min, k.thickness_max}},
                      {"rv_radius", {k.rv_radius_min, k.rv_radius_max}},
                      {"rv_gap", {k.rv_gap_min, k.rv_gap_max}},
                      {"centre_jitter", k.centre_jitter},
                      {"systolic_contraction", k.systolic_contraction},
                      {"bands", bands_json(k.bands)}};
    g["ground_truth"] = nlohmann::ordered_json::array();

    std::vector<Subject> subjects;
    std::vector<SubjectRecord> records;
    for (auto& gen : generated) {
        const auto& id = gen->record.id;
        manifest.subjects.push_back({id, "volumes/" + id + ".mvol", "segmaps/" + id + ".mseg"});
        g["ground_truth"].push_back({{"id", id},
                                     {"true_label", gen->truth.true_label},
                                     {"thickness", gen->truth.thickness},
                                     {"thickness_noise", gen->truth.thickness_noise}});
        subjects.push_back(std::move(gen->subject));
        records.push_back(std::move(gen->record));
    }
    write_dataset(out_dir, manifest, subjects, records);
    return manifest;
}

Constants constants_from_manifest(const DatasetManifest& manifest) {
    Constants k;
    const auto& g = manifest.generator;
    if (!g.is_object() || !g.contains("constants")) return k;
    try {
        const auto& c = g.at("constants");
        k.classifier_slope = c.at("classifier_slope").get<double>();
        k.classifier_threshold = c.at("classifier_threshold").get<double>();
        k.truth_threshold = c.at("truth_threshold").get<double>();
        k.truth_noise_sigma = c.at("truth_noise_sigma").get<double>();
        const auto& b = c.at("bands");
        k.bands.background = b.at("background").get<double>();
        k.bands.lv_myocardium = b.at("lv_myocardium").get<double>();
        k.bands.chest_wall = b.at("chest_wall").get<double>();
        k.bands.lv_cavity = b.at("lv_cavity").get<double>();
        k.bands.rv_cavity = b.at("rv_cavity").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("manifest generator constants malformed: ") + e.what());
    }
    return k;
}

double thickness_feature(const SegmentMap& map) {
    std::size_t cavity = 0, myocardium = 0;
    for (Label l : map.frame(0)) {
        cavity += l == 1;
        myocardium += l == 2;
    }
    if (cavity == 0) throw ValidationError("feature error: label 1 absent in frame 0");
    if (myocardium == 0) throw ValidationError("feature error: label 2 absent in frame 0");
    const double pi = std::numbers::pi;
    return std::sqrt(static_cast<double>(cavity + myocardium) / pi) - std::sqrt(static_cast<double>(cavity) / pi);
}

double classifier_probability(double thickness, const Constants& k) {
    return 1.0 / (1.0 + std::exp(-k.classifier_slope * (thickness - k.classifier_threshold)));
}

ClassifierOutput classify(const SegmentMap& map, const Constants& k) {
    const double p = classifier_probability(thickness_feature(map), k);
    return {label_for(p), p};
}

namespace {

// Keeps the largest 4-connected component of `label` in `frame`; ties go to the component
// whose first pixel comes first in row-major order.
void keep_largest_component(std::span<Label> frame, std::size_t height, std::size_t width, Label label) {
    std::vector<std::int32_t> component(frame.size(), -1);
    std::vector<std::size_t> stack;
    std::int32_t best = -1;
    std::size_t best_size = 0;
    std::int32_t next = 0;
    for (std::size_t start = 0; start < frame.size(); ++start) {
        if (frame[start] != label || component[start] >= 0) continue;
        std::size_t size = 0;
        component[start] = next;
        stack.push_back(start);
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            ++size;
            const auto r = i / width, c = i % width;
            auto visit = [&](std::size_t j) {
                if (frame[j] == label && component[j] < 0) {
                    component[j] = next;
                    stack.push_back(j);
                }
            };
            if (r > 0) visit(i - width);
            if (r + 1 < height) visit(i + width);
            if (c > 0) visit(i - 1);
            if (c + 1 < width) visit(i + 1);
        }
        if (size > best_size) {
            best_size = size;
            best = next;
        }
        ++next;
    }
    for (std::size_t i = 0; i < frame.size(); ++i) {
        if (frame[i] == label && component[i] != best) frame[i] = 0;
    }
}

}  // namespace

SegmentMap segment(const Volume& volume, const IntensityBands& bands) {
    const auto& dims = volume.dims();
    // Candidate order doubles as the tie-break on equidistant centres.
    const std::array<std::pair<double, Label>, 5> centres{{{bands.background, 0},
                                                           {bands.lv_cavity, 1},
                                                           {bands.lv_myocardium, 2},
                                                           {bands.rv_cavity, 3},
                                                           {bands.chest_wall, 0}}};
    std::array<Label, 256> lut{};
    for (int v = 0; v < 256; ++v) {
        double best = std::abs(v - centres[0].first);
        lut[v] = centres[0].second;
        for (std::size_t k = 1; k < centres.size(); ++k) {
            const double d = std::abs(v - centres[k].first);
            if (d < best) {
                best = d;
                lut[v] = centres[k].second;
            }
        }
    }

    std::vector<Label> labels(dims.voxel_count());
    const std::size_t h = dims.height, w = dims.width;
    for (std::size_t f = 0; f < dims.frames; ++f) {
        const auto pixels = volume.frame(f);
        std::span<Label> frame(labels.data() + f * dims.frame_size(), dims.frame_size());
        for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = lut[pixels[i]];
        for (Label l = 1; l <= 3; ++l) keep_largest_component(frame, h, w, l);

        const std::vector<Label> cleaned(frame.begin(), frame.end());
        for (std::size_t r = 1; r + 1 < h; ++r) {
            for (std::size_t c = 1; c + 1 < w; ++c) {
                const auto i = r * w + c;
                const Label up = cleaned[i - w];
                if (up != 0 && cleaned[i] != up && cleaned[i + w] == up && cleaned[i - 1] == up && cleaned[i + 1] == up) {
                    frame[i] = up;
                }
            }
        }
    }
    return SegmentMap(dims, std::move(labels));
}

}  // namespace morphcf::synthetic
