#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include "morphcf/dataset.hpp"
#include "morphcf/types.hpp"

namespace morphcf::synthetic {

/// Nominal intensity of each structure. Pixel noise is added on top.
struct IntensityBands {
    double background = 40;
    double lv_myocardium = 90;
    double chest_wall = 120;
    double lv_cavity = 180;
    double rv_cavity = 230;
};

/// Geometry and appearance of one phantom. Lengths in pixels.
struct PhantomParams {
    double lv_row = 64;
    double lv_col = 54;
    double lv_cavity_radius = 10.5;
    double myocardium_thickness = 4.5;
    double rv_offset = 32;  // LV centre to RV centre, along +col
    double rv_radius = 11.5;
    double chest_wall_inner = 52;  // ring centred on the frame centre
    double chest_wall_width = 4;
    IntensityBands bands;
    double noise_sigma = 10.0;
    std::uint64_t noise_seed = 0;

    /// Throws ValidationError unless every structure fits with a 2-pixel margin
    /// and the band centres are distinct.
    void validate(std::uint16_t height, std::uint16_t width) const;
};

/// Generative record for one subject: label = 1 iff thickness + noise > threshold.
struct GroundTruth {
    int true_label = 0;
    double thickness = 0;
    double thickness_noise = 0;
    double threshold = 0;
};

/// Fixed constants of the synthetic world; recorded in every generated manifest.
struct Constants {
    double classifier_slope = 4.0;        // alpha, per pixel of thickness
    double classifier_threshold = 4.5;    // tau_c, pixels
    double truth_threshold = 4.5;         // tau_g, pixels
    double truth_noise_sigma = 0.25;
    double cavity_radius_min = 10.0, cavity_radius_max = 11.0;
    double thickness_min = 3.5, thickness_max = 6.0;
    double rv_radius_min = 10.0, rv_radius_max = 13.0;
    double rv_gap_min = 5.0, rv_gap_max = 7.0;  // myocardium outer edge to RV edge
    int centre_jitter = 3;
    double systolic_contraction = 0.15;  // cavity radius shrink at mid-sequence
    IntensityBands bands;
};

struct GenerateOptions {
    std::size_t subjects = 0;
    std::uint64_t seed = 0;
    std::uint16_t frames = 1;
    std::uint16_t size = 128;
    double noise_sigma = 10.0;
    unsigned jobs = 0;  // 0 = hardware concurrency
    Constants constants;
};

/// Renders the phantom's frames. Frame f contracts the cavity while conserving myocardial area.
Subject render_phantom(const std::string& id, const PhantomParams& params, std::uint16_t frames, std::uint16_t height,
                       std::uint16_t width, double systolic_contraction = 0.0);

struct GeneratedSubject {
    Subject subject;
    SubjectRecord record;
    PhantomParams params;
    GroundTruth truth;
};

/// Samples subject `index` of a dataset. Pure function of (options, index).
GeneratedSubject generate_subject(const GenerateOptions& options, std::size_t index);

/// Generates `options.subjects` phantoms with demographics and synthetic predictions and writes
/// them under `out_dir`. Byte-identical output for identical options.
DatasetManifest generate_dataset(const GenerateOptions& options, const std::filesystem::path& out_dir);

std::string subject_id(std::size_t index);

/// Constants recorded by generate_dataset; defaults when the manifest carries none.
Constants constants_from_manifest(const DatasetManifest& manifest);

/// Mean myocardial thickness from pixel areas in frame 0:
/// sqrt((A_cav + A_myo) / pi) - sqrt(A_cav / pi).
double thickness_feature(const SegmentMap& map);

struct ClassifierOutput {
    int label = 0;
    double probability = 0;
};

/// Closed-form stand-in model: logistic(slope * (thickness - threshold)).
/// Depends on label 1 and 2 areas only; throws ValidationError when either is absent in frame 0.
ClassifierOutput classify(const SegmentMap& map, const Constants& constants = {});
double classifier_probability(double thickness, const Constants& constants = {});

/// Nearest-band pixel classification, then the largest 4-connected component per label,
/// then single-pixel hole filling. Runs frame by frame.
SegmentMap segment(const Volume& volume, const IntensityBands& bands = {});

}  // namespace morphcf::synthetic
