#include <doctest.h>

#include <cmath>
#include <map>

#include "fixtures.hpp"
#include "morphcf/error.hpp"
#include "morphcf/seg_eval.hpp"
#include "morphcf/synthetic.hpp"

using namespace morphcf;
namespace syn = morphcf::synthetic;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> tree_contents(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = fixtures::slurp(e.path());
    }
    return out;
}

SegmentMap annulus(std::uint16_t size, double inner, double outer) {
    std::vector<Label> labels(std::size_t{size} * size, 0);
    const double c = size / 2.0;
    for (int r = 0; r < size; ++r) {
        for (int col = 0; col < size; ++col) {
            const double d = std::hypot(r - c, col - c);
            if (d <= inner) labels[std::size_t(r) * size + col] = 1;
            else if (d <= outer) labels[std::size_t(r) * size + col] = 2;
        }
    }
    return SegmentMap({1, size, size}, labels);
}

struct SeedOne {
    fixtures::TempDir dir{"syn"};
    Dataset ds = fixtures::synthetic_dataset(dir.path(), 100, 1);
};

const SeedOne& seed_one() {
    static SeedOne s;
    return s;
}

}  // namespace

TEST_CASE("generation is byte-identical for a fixed seed") {
    fixtures::TempDir a("gen"), b("gen");
    syn::GenerateOptions opt;
    opt.subjects = 10;
    opt.seed = 7;
    opt.jobs = 1;
    syn::generate_dataset(opt, a.path());
    opt.jobs = 4;
    syn::generate_dataset(opt, b.path());
    CHECK(tree_contents(a.path()) == tree_contents(b.path()));
    CHECK(Dataset::load(a.path()).digest() == Dataset::load(b.path()).digest());
}

TEST_CASE("different seeds give different datasets") {
    fixtures::TempDir a("gen"), b("gen");
    CHECK(fixtures::synthetic_dataset(a.path(), 4, 1).digest() != fixtures::synthetic_dataset(b.path(), 4, 2).digest());
}

TEST_CASE("fewer than two subjects is an argument error") {
    fixtures::TempDir dir("gen");
    syn::GenerateOptions opt;
    opt.subjects = 1;
    CHECK_THROWS_AS(syn::generate_dataset(opt, dir.path()), ValidationError);
}

TEST_CASE("label-1 prevalence of the reference set") {
    const auto& ds = seed_one().ds;
    std::size_t positives = 0;
    for (const auto& gt : ds.manifest().generator.at("ground_truth")) positives += gt.at("true_label").get<int>() == 1;
    CHECK(positives == 56);
    CHECK(positives >= 20);
    CHECK(positives <= 80);
}

TEST_CASE("classifier agrees with ground truth on the reference set") {
    const auto& ds = seed_one().ds;
    const auto k = syn::constants_from_manifest(ds.manifest());
    std::size_t agree = 0;
    for (const auto& gt : ds.manifest().generator.at("ground_truth")) {
        const auto id = gt.at("id").get<std::string>();
        const auto out = syn::classify(ds.subject(id).segmap, k);
        CHECK(out.label == ds.record(id).predicted_label);
        agree += out.label == gt.at("true_label").get<int>();
    }
    CHECK(agree == 93);
    CHECK(agree >= 80);
}

TEST_CASE("thickness of an analytic annulus") {
    CHECK(std::abs(syn::thickness_feature(annulus(64, 8, 12)) - 4.0) <= 0.1);
}

TEST_CASE("thickness at the threshold is a tie resolved to label 0") {
    const syn::Constants k;
    CHECK(syn::classifier_probability(k.classifier_threshold, k) == 0.5);
    CHECK(label_for(syn::classifier_probability(k.classifier_threshold, k)) == 0);
    CHECK(syn::classifier_probability(k.classifier_threshold + 1, k) > 0.5);
}

TEST_CASE("classifier requires cavity and myocardium") {
    CHECK_THROWS_AS(syn::classify(fixtures::disk_map(32, 16, 16, 5, 1)), ValidationError);
    CHECK_THROWS_AS(syn::classify(fixtures::disk_map(32, 16, 16, 5, 2)), ValidationError);
}

TEST_CASE("classifier ignores right-ventricle pixels") {
    const auto& ds = seed_one().ds;
    const auto& map = ds.subject(ds.records()[0].id).segmap;
    std::vector<Label> labels(map.labels().begin(), map.labels().end());
    const auto base = syn::classify(map);
    for (auto& l : labels) {
        if (l == 3) l = 0;
    }
    CHECK(syn::classify(SegmentMap(map.dims(), labels)).probability == base.probability);
    for (std::size_t i = 0; i < 200; ++i) {
        if (labels[i] == 0) labels[i] = 3;
    }
    CHECK(syn::classify(SegmentMap(map.dims(), labels)).probability == base.probability);
}

TEST_CASE("noiseless phantoms segment exactly") {
    fixtures::TempDir dir("syn");
    const auto ds = fixtures::synthetic_dataset(dir.path(), 12, 3, 0.0, 4);
    for (const auto& r : ds.records()) {
        const auto& s = ds.subject(r.id);
        CHECK(syn::segment(s.volume) == s.segmap);
    }
}

TEST_CASE("an all-zero volume segments to background") {
    const Volume v("z", {2, 32, 32}, std::vector<std::uint8_t>(2 * 32 * 32, 0));
    const auto map = syn::segment(v);
    for (auto l : map.labels()) CHECK(l == 0);
}

TEST_CASE("segmenter on noisy phantoms") {
    const auto& ds = seed_one().ds;
    std::vector<FidelityReport> reports;
    for (const auto& r : ds.records()) {
        const auto& s = ds.subject(r.id);
        reports.push_back(compare_segmaps(s.segmap, syn::segment(s.volume), ds.schema()));
    }
    const auto agg = aggregate(reports, ds.schema());
    for (const auto& l : agg.labels) {
        INFO("label " << int(l.label));
        CHECK(l.dice >= 0.95);
    }
}

TEST_CASE("phantom parameters are validated") {
    syn::PhantomParams p;
    CHECK_NOTHROW(p.validate(128, 128));
    p.lv_row = 3;
    CHECK_THROWS_AS(p.validate(128, 128), ValidationError);
    p = {};
    p.bands.rv_cavity = p.bands.lv_cavity;
    CHECK_THROWS_AS(p.validate(128, 128), ValidationError);
    p = {};
    p.rv_offset = p.lv_cavity_radius + p.myocardium_thickness;
    CHECK_THROWS_AS(p.validate(128, 128), ValidationError);
}

TEST_CASE("myocardial area is conserved across frames") {
    syn::PhantomParams p;
    p.noise_sigma = 0;
    const auto s = syn::render_phantom("p", p, 5, 128, 128, 0.15);
    std::vector<std::size_t> cavity(5), myo(5);
    for (std::size_t f = 0; f < 5; ++f) {
        for (auto l : s.segmap.frame(f)) {
            cavity[f] += l == 1;
            myo[f] += l == 2;
        }
    }
    CHECK(cavity[2] < cavity[0]);
    for (std::size_t f = 1; f < 5; ++f) CHECK(std::abs(double(myo[f]) - double(myo[0])) <= 0.05 * myo[0]);
}
