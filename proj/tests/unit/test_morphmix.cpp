#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "morphcf/engine.hpp"
#include "morphcf/error.hpp"
#include "morphcf/morphmix.hpp"
#include "morphcf/seg_eval.hpp"
#include "morphcf/synthetic.hpp"

using namespace morphcf;
namespace syn = morphcf::synthetic;

namespace {

struct Shared {
    fixtures::TempDir dir{"mix"};
    Dataset ds = fixtures::synthetic_dataset(dir.path(), 30, 5, 10.0, 2);
};

const Shared& shared() {
    static Shared s;
    return s;
}

// Offset computed independently of the library: rounded mean position, half away from zero.
std::pair<int, int> mean_offset(const SegmentMap& t, const SegmentMap& s, std::size_t f, Label l) {
    auto mean = [&](const SegmentMap& m) {
        double r = 0, c = 0, n = 0;
        for (std::size_t y = 0; y < m.dims().height; ++y) {
            for (std::size_t x = 0; x < m.dims().width; ++x) {
                if (m.at(f, y, x) == l) {
                    r += y;
                    c += x;
                    ++n;
                }
            }
        }
        return std::pair<double, double>{n ? std::round(r / n) : -1, n ? std::round(c / n) : -1};
    };
    auto [tr, tc] = mean(t);
    const auto [sr, sc] = mean(s);
    if (tr < 0) {
        tr = t.dims().height / 2;
        tc = t.dims().width / 2;
    }
    return {int(tr - sr), int(tc - sc)};
}

}  // namespace

TEST_CASE("centroid rounding") {
    const std::vector<PixelCoord> one{{3, 4}};
    CHECK(centroid(one) == PixelCoord{3, 4});
    const std::vector<PixelCoord> square{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    CHECK(centroid(square) == PixelCoord{1, 1});
    std::vector<PixelCoord> block;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) block.push_back({r, c});
    }
    CHECK(centroid(block) == PixelCoord{1, 1});
    CHECK_THROWS_AS(centroid(std::vector<PixelCoord>{}), ValidationError);
}

TEST_CASE("recombining a subject with itself is the identity") {
    const auto& ds = shared().ds;
    for (std::size_t i = 0; i < 20; ++i) {
        const auto& s = ds.subject(ds.records()[i].id);
        for (const auto& sel : combinations(ds.schema())) {
            const auto out = recombine({s.volume, s.segmap}, {s.volume, s.segmap}, sel);
            CHECK(out.pixels.pixels().size() == s.volume.pixels().size());
            CHECK(std::equal(out.pixels.pixels().begin(), out.pixels.pixels().end(), s.volume.pixels().begin()));
            CHECK(out.expected_segmap == s.segmap);
        }
    }
}

TEST_CASE("congruent disk is translated onto the target centroid") {
    const auto tmap = fixtures::disk_map(128, 40, 40, 9, 1);
    const auto smap = fixtures::disk_map(128, 70, 70, 9, 1);
    const auto target = fixtures::paint("t", tmap, 30, [](auto, auto) { return 200; });
    const auto source = fixtures::paint("s", smap, 30, [](auto r, auto c) { return std::uint8_t(r + 2 * c); });
    const auto sel = SegmentSelection::parse("lv_cavity", SegmentSchema::cardiac());
    const auto out = recombine({target, tmap}, {source, smap}, sel);

    REQUIRE(out.provenance.transfers.size() == 1);
    CHECK(out.provenance.transfers[0].offset == PixelCoord{-30, -30});
    for (int r = 0; r < 128; ++r) {
        for (int c = 0; c < 128; ++c) {
            if (smap.at(0, r, c) == 1) CHECK(out.pixels.at(0, r - 30, c - 30) == source.at(0, r, c));
        }
    }
    std::vector<std::size_t> expected, translated;
    for (std::size_t i = 0; i < 128 * 128; ++i) {
        if (out.expected_segmap.labels()[i] == 1) expected.push_back(i);
        if (smap.labels()[i] == 1) translated.push_back(i - 30 * 128 - 30);
    }
    CHECK(dice(expected, translated) == 1.0);
}

TEST_CASE("myocardium transplant carries the source thickness") {
    syn::PhantomParams thin, thick;
    thin.noise_sigma = thick.noise_sigma = 0;
    thin.myocardium_thickness = 3.5;
    thick.myocardium_thickness = 6.0;
    thick.lv_row = 60;
    thick.lv_col = 50;
    const auto t = syn::render_phantom("t", thin, 1, 128, 128);
    const auto s = syn::render_phantom("s", thick, 1, 128, 128);
    const auto sel = SegmentSelection::parse("lv_myocardium", SegmentSchema::cardiac());
    const auto out = recombine({t.volume, t.segmap}, {s.volume, s.segmap}, sel);
    const double source_t = syn::thickness_feature(s.segmap);
    CHECK(std::abs(syn::thickness_feature(out.expected_segmap) - source_t) <= 0.5);
    CHECK(std::abs(syn::thickness_feature(syn::segment(out.pixels)) - source_t) <= 0.5);
}

TEST_CASE("erased cavity takes the nearest unlabelled intensity") {
    syn::PhantomParams big, small;
    big.noise_sigma = small.noise_sigma = 0;
    big.lv_cavity_radius = 11;
    small.lv_cavity_radius = 8;
    const auto t = syn::render_phantom("t", big, 1, 128, 128);
    const auto s = syn::render_phantom("s", small, 1, 128, 128);
    const auto sel = SegmentSelection::parse("lv_cavity", SegmentSchema::cardiac());
    const auto out = recombine({t.volume, t.segmap}, {s.volume, s.segmap}, sel);
    CHECK(out.provenance.transfers[0].fill_value == 40);
    CHECK(syn::segment(out.pixels) == out.expected_segmap);
}

TEST_CASE("every source component is copied, including annuli") {
    const auto schema = SegmentSchema::cardiac();
    std::vector<Label> labels(64 * 64, 0);
    for (int r = 10; r < 14; ++r) {
        for (int c = 10; c < 14; ++c) labels[r * 64 + c] = 1;
    }
    for (int r = 40; r < 43; ++r) {
        for (int c = 30; c < 35; ++c) labels[r * 64 + c] = 1;
    }
    const SegmentMap smap({1, 64, 64}, labels);
    const auto source = fixtures::paint("s", smap, 0, [](auto r, auto c) { return std::uint8_t(100 + r + c); });
    const auto tmap = fixtures::disk_map(64, 32, 32, 4, 1);
    const auto target = fixtures::paint("t", tmap, 5, [](auto, auto) { return 250; });
    const auto out = recombine({target, tmap}, {source, smap}, SegmentSelection(1, schema));
    std::size_t stamped = 0;
    for (auto l : out.expected_segmap.labels()) stamped += l == 1;
    CHECK(stamped == 16 + 15);
    CHECK(out.provenance.transfers[0].copied == 31);

    const auto& ds = shared().ds;
    const auto& a = ds.subject(ds.records()[0].id);
    const auto& b = ds.subject(ds.records()[1].id);
    const auto myo = recombine({a.volume, a.segmap}, {b.volume, b.segmap}, SegmentSelection(2, schema));
    for (std::size_t f = 0; f < 2; ++f) {
        const auto [dr, dc] = mean_offset(a.segmap, b.segmap, f, 2);
        std::set<std::size_t> want, got;
        for (std::size_t r = 0; r < 128; ++r) {
            for (std::size_t c = 0; c < 128; ++c) {
                if (b.segmap.at(f, r, c) == 2) want.insert((r + dr) * 128 + (c + dc));
                if (myo.expected_segmap.at(f, r, c) == 2) got.insert(r * 128 + c);
            }
        }
        CHECK(want == got);
    }
}

TEST_CASE("modified region bounds every change") {
    const auto& ds = shared().ds;
    const auto sels = combinations(ds.schema());
    std::mt19937 gen(2024);
    std::size_t violations = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto& ti = ds.records()[gen() % ds.size()].id;
        const auto& si = ds.records()[gen() % ds.size()].id;
        const auto& sel = sels[gen() % sels.size()];
        const auto& t = ds.subject(ti);
        const auto& s = ds.subject(si);
        const auto out = recombine({t.volume, t.segmap}, {s.volume, s.segmap}, sel);
        const auto& d = t.volume.dims();
        for (std::size_t f = 0; f < d.frames; ++f) {
            std::vector<char> region(d.frame_size(), 0);
            for (Label l : sel.labels()) {
                for (std::size_t i = 0; i < d.frame_size(); ++i) region[i] |= t.segmap.frame(f)[i] == l;
                const auto [dr, dc] = mean_offset(t.segmap, s.segmap, f, l);
                for (std::size_t r = 0; r < d.height; ++r) {
                    for (std::size_t c = 0; c < d.width; ++c) {
                        if (s.segmap.at(f, r, c) != l) continue;
                        const long rr = long(r) + dr, cc = long(c) + dc;
                        if (rr >= 0 && cc >= 0 && rr < d.height && cc < d.width) region[rr * d.width + cc] = 1;
                    }
                }
            }
            const auto before = t.volume.frame(f);
            const auto after = out.pixels.frame(f);
            for (std::size_t i = 0; i < d.frame_size(); ++i) violations += !region[i] && before[i] != after[i];
        }
    }
    CHECK(violations == 0);
}

TEST_CASE("label coverage accounts for drops and later overwrites") {
    const auto& ds = shared().ds;
    const auto sels = combinations(ds.schema());
    std::mt19937 gen(99);
    for (int trial = 0; trial < 60; ++trial) {
        const auto& t = ds.subject(ds.records()[gen() % ds.size()].id);
        const auto& s = ds.subject(ds.records()[gen() % ds.size()].id);
        const auto& sel = sels[gen() % sels.size()];
        const auto out = recombine({t.volume, t.segmap}, {s.volume, s.segmap}, sel);
        const auto& d = t.volume.dims();
        for (std::size_t f = 0; f < d.frames; ++f) {
            std::vector<int> owner(d.frame_size(), 0);
            std::map<Label, std::size_t> source_px, dropped;
            for (Label l : sel.labels()) {
                const auto [dr, dc] = mean_offset(t.segmap, s.segmap, f, l);
                for (std::size_t r = 0; r < d.height; ++r) {
                    for (std::size_t c = 0; c < d.width; ++c) {
                        if (s.segmap.at(f, r, c) != l) continue;
                        ++source_px[l];
                        const long rr = long(r) + dr, cc = long(c) + dc;
                        if (rr < 0 || cc < 0 || rr >= d.height || cc >= d.width) {
                            ++dropped[l];
                            continue;
                        }
                        owner[rr * d.width + cc] = l;
                    }
                }
            }
            for (Label l : sel.labels()) {
                std::size_t overwritten = 0, count = 0;
                const auto [dr, dc] = mean_offset(t.segmap, s.segmap, f, l);
                for (std::size_t r = 0; r < d.height; ++r) {
                    for (std::size_t c = 0; c < d.width; ++c) {
                        if (s.segmap.at(f, r, c) != l) continue;
                        const long rr = long(r) + dr, cc = long(c) + dc;
                        if (rr >= 0 && cc >= 0 && rr < d.height && cc < d.width) overwritten += owner[rr * d.width + cc] != l;
                    }
                }
                for (auto x : out.expected_segmap.frame(f)) count += x == l;
                CHECK(count == source_px[l] - dropped[l] - overwritten);
            }
        }
    }
}

TEST_CASE("absent source segment is skipped with a warning") {
    const auto schema = SegmentSchema::cardiac();
    const auto tmap = fixtures::disk_map(32, 16, 16, 5, 3);
    const auto smap = fixtures::disk_map(32, 16, 16, 5, 1);
    const auto target = fixtures::paint("t", tmap, 10, [](auto, auto) { return 230; });
    const auto source = fixtures::paint("s", smap, 10, [](auto, auto) { return 180; });
    const auto out = recombine({target, tmap}, {source, smap}, SegmentSelection(0b100, schema));
    CHECK(out.provenance.skipped_any());
    CHECK(out.provenance.warnings.size() == 1);
    CHECK(out.pixels == Volume("t~s#4", target.dims(), {target.pixels().begin(), target.pixels().end()}));
}

TEST_CASE("empty target segment anchors on the frame centre") {
    const auto schema = SegmentSchema::cardiac();
    const auto tmap = fixtures::disk_map(32, 5, 5, 2, 3);
    const auto smap = fixtures::disk_map(32, 6, 8, 2, 1);
    const auto target = fixtures::paint("t", tmap, 10, [](auto, auto) { return 230; });
    const auto source = fixtures::paint("s", smap, 10, [](auto, auto) { return 180; });
    const auto out = recombine({target, tmap}, {source, smap}, SegmentSelection(1, schema));
    CHECK(out.provenance.transfers[0].target_empty);
    CHECK(out.provenance.transfers[0].offset == PixelCoord{10, 8});
    CHECK(out.expected_segmap.at(0, 16, 16) == 1);
}

TEST_CASE("pixels pushed off the frame are dropped and counted") {
    const auto schema = SegmentSchema::cardiac();
    std::vector<Label> tl(32 * 32, 0), sl(32 * 32, 0);
    tl[0] = 1;  // one-pixel target in the corner
    for (int r = 10; r < 15; ++r) {
        for (int c = 10; c < 15; ++c) sl[r * 32 + c] = 1;
    }
    const SegmentMap tmap({1, 32, 32}, tl), smap({1, 32, 32}, sl);
    const auto target = fixtures::paint("t", tmap, 10, [](auto, auto) { return 180; });
    const auto source = fixtures::paint("s", smap, 10, [](auto, auto) { return 170; });
    const auto out = recombine({target, tmap}, {source, smap}, SegmentSelection(1, schema));
    CHECK(out.provenance.dropped_total() == 25 - 9);
    CHECK(out.provenance.transfers[0].copied == 9);
}

TEST_CASE("mismatched rasters are rejected") {
    const auto schema = SegmentSchema::cardiac();
    const auto m32 = fixtures::disk_map(32, 16, 16, 5, 1);
    const auto m16 = fixtures::disk_map(16, 8, 8, 3, 1);
    const auto v32 = fixtures::paint("a", m32, 0, [](auto, auto) { return 1; });
    const auto v16 = fixtures::paint("b", m16, 0, [](auto, auto) { return 1; });
    CHECK_THROWS_AS(recombine({v32, m32}, {v16, m16}, SegmentSelection(1, schema)), ValidationError);
    CHECK_THROWS_AS(recombine({v32, m16}, {v32, m32}, SegmentSelection(1, schema)), ValidationError);
    const SegmentMap two({2, 32, 32}, std::vector<Label>(2 * 32 * 32, 1));
    const Volume two_v("c", {2, 32, 32}, std::vector<std::uint8_t>(2 * 32 * 32, 1));
    CHECK_THROWS_AS(recombine({v32, m32}, {two_v, two}, SegmentSelection(1, schema)), ValidationError);
}

TEST_CASE("frames are aligned independently") {
    const auto& ds = shared().ds;
    const auto& a = ds.subject(ds.records()[2].id);
    const auto& b = ds.subject(ds.records()[3].id);
    const auto out = recombine({a.volume, a.segmap}, {b.volume, b.segmap}, SegmentSelection(1, ds.schema()));
    REQUIRE(out.provenance.transfers.size() == 2);
    for (std::size_t f = 0; f < 2; ++f) {
        const auto [dr, dc] = mean_offset(a.segmap, b.segmap, f, 1);
        CHECK(out.provenance.transfers[f].frame == f);
        CHECK(out.provenance.transfers[f].offset == PixelCoord{dr, dc});
    }
}
