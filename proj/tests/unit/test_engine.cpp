#include <doctest.h>

#include <map>

#include "fixtures.hpp"
#include "morphcf/engine.hpp"
#include "morphcf/error.hpp"

using namespace morphcf;

namespace {

struct Shared {
    fixtures::TempDir dir{"eng"};
    Dataset ds = fixtures::synthetic_dataset(dir.path(), 60, 1);
    std::vector<std::string> pos = fixtures::ids_with_label(ds, 1);
    std::vector<std::string> neg = fixtures::ids_with_label(ds, 0);
};

const Shared& shared() {
    static Shared s;
    return s;
}

std::vector<std::string> head(const std::vector<std::string>& v, std::size_t n) { return {v.begin(), v.begin() + n}; }

std::vector<SegmentSelection> parse_all(std::initializer_list<const char*> names) {
    std::vector<SegmentSelection> out;
    for (const auto* n : names) out.push_back(SegmentSelection::parse(n, SegmentSchema::cardiac()));
    return out;
}

RunArtifact run_5x8(unsigned jobs) {
    const auto& s = shared();
    ClassifierGateway gw(std::make_shared<SyntheticBackend>(), 7);
    return run(s.ds, head(s.pos, 5), head(s.neg, 8), combinations(s.ds.schema()), gw, {jobs, false});
}

}  // namespace

TEST_CASE("expected count reproduces the published total") {
    CHECK(expected_count(21, 79, 2, 7) == 23226);
    CHECK(expected_count(5, 8, 1, 7) == 280);
}

TEST_CASE("5 targets x 8 sources x 7 selections gives 280 ordered results") {
    const auto art = run_5x8(1);
    REQUIRE(art.results.size() == 280);
    std::size_t i = 0;
    for (const auto& t : art.targets) {
        for (const auto& s : art.sources) {
            for (const auto& sel : art.selections) {
                const auto& r = art.results[i++];
                CHECK(r.spec.target_id == t);
                CHECK(r.spec.source_id == s);
                CHECK(r.spec.selection == sel);
            }
        }
    }
    CHECK(std::is_sorted(art.targets.begin(), art.targets.end()));
    CHECK(art.model_id == "synthetic");
    CHECK(art.dataset_digest == shared().ds.digest());
}

TEST_CASE("worker count does not change results") {
    const auto a = run_5x8(1);
    const auto b = run_5x8(4);
    CHECK(results_csv(a) == results_csv(b));
    CHECK(summary_csv(summarize(a), a.schema) == summary_csv(summarize(b), b.schema));
}

TEST_CASE("right-ventricle swaps never flip the synthetic classifier") {
    const auto& s = shared();
    ClassifierGateway gw(std::make_shared<SyntheticBackend>());
    for (const auto& [targets, sources] : {std::pair{s.pos, s.neg}, std::pair{s.neg, s.pos}}) {
        const auto art = run(s.ds, targets, sources, parse_all({"rv_cavity"}), gw);
        const auto rows = summarize(art);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].counterfactuals == 0);
        CHECK(rows[0].unchanged + rows[0].skipped == targets.size() * sources.size());
        REQUIRE(rows[0].proportion);
        CHECK(format_proportion(*rows[0].proportion) == "0.000");
    }
}

TEST_CASE("counterfactual flag compares against the target prediction") {
    const auto art = run_5x8(2);
    for (const auto& r : art.results) {
        if (r.skipped) {
            CHECK_FALSE(r.prediction);
            continue;
        }
        REQUIRE(r.prediction);
        CHECK(r.is_counterfactual == (r.prediction->label != r.target_prediction.label));
    }
}

TEST_CASE("summary proportions round to three decimals") {
    const auto sel = SegmentSelection(1, SegmentSchema::cardiac());
    CHECK(format_proportion(*make_summary_row(sel, 520, 2798).proportion) == "0.157");
    CHECK(format_proportion(*make_summary_row(sel, 0, 3318).proportion) == "0.000");
    CHECK(format_proportion(*make_summary_row(sel, 10, 10).proportion) == "0.500");
    CHECK(*make_summary_row(sel, 520, 2798).proportion == 0.157);
    CHECK_FALSE(make_summary_row(sel, 0, 0, 4).proportion);
    const std::vector<SummaryRow> rows{make_summary_row(sel, 520, 2798), make_summary_row(SegmentSelection(2, SegmentSchema::cardiac()), 0, 0, 3)};
    CHECK(summary_csv(rows, SegmentSchema::cardiac()) ==
          "segments,counterfactuals,unchanged,skipped,proportion\nlv_cavity,520,2798,0,0.157\nlv_myocardium,0,0,3,\n");
}

TEST_CASE("summaries combine row by row") {
    const auto sel = SegmentSelection(1, SegmentSchema::cardiac());
    const std::vector<SummaryRow> a{make_summary_row(sel, 3, 7)}, b{make_summary_row(sel, 1, 9)};
    const auto c = combine_summaries(a, b);
    REQUIRE(c.size() == 1);
    CHECK(c[0].counterfactuals == 4);
    CHECK(c[0].unchanged == 16);
    CHECK(*c[0].proportion == 0.2);
}

TEST_CASE("subgroup summaries") {
    const auto& s = shared();
    const auto art = run_5x8(1);
    const auto& vars = s.ds.manifest().variables;

    const auto all = subgroup_summarize(art, FilterClause::range("age", 0, 1000), s.ds.records(), vars);
    CHECK(summary_csv(all, art.schema) == summary_csv(summarize(art), art.schema));

    const auto none = subgroup_summarize(art, FilterClause::range("age", 200, 300), s.ds.records(), vars);
    REQUIRE(none.size() == 7);
    for (const auto& r : none) {
        CHECK(r.counterfactuals == 0);
        CHECK(r.unchanged == 0);
        CHECK_FALSE(r.proportion);
    }

    const auto mid = subgroup_summarize(art, FilterClause::range("age", 60, 70), s.ds.records(), vars);
    std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> brute;
    for (const auto& r : art.results) {
        const auto& demo = s.ds.record(r.spec.source_id).demographics;
        const auto it = demo.find("age");
        if (it == demo.end() || std::get<double>(it->second) < 60 || std::get<double>(it->second) > 70) continue;
        if (r.skipped) continue;
        auto& c = brute[r.spec.selection.mask()];
        (r.is_counterfactual ? c.first : c.second)++;
    }
    for (const auto& row : mid) {
        CHECK(row.counterfactuals == brute[row.selection.mask()].first);
        CHECK(row.unchanged == brute[row.selection.mask()].second);
    }
}

TEST_CASE("run preconditions") {
    const auto& s = shared();
    ClassifierGateway gw(std::make_shared<SyntheticBackend>());
    const auto sels = parse_all({"lv_cavity"});
    CHECK_THROWS_AS(run(s.ds, {s.pos[0]}, {s.pos[0]}, sels, gw), ValidationError);
    CHECK_THROWS_AS(run(s.ds, {s.pos[0], s.neg[0]}, {s.neg[1]}, sels, gw), ValidationError);
    CHECK_THROWS_AS(run(s.ds, {s.pos[0]}, {s.pos[1]}, sels, gw), ValidationError);
    CHECK_THROWS_AS(run(s.ds, {"nobody"}, {s.neg[0]}, sels, gw), ValidationError);
    CHECK_THROWS_AS(run(s.ds, {s.pos[0], s.pos[0]}, {s.neg[0]}, sels, gw), ValidationError);
    CHECK_THROWS_AS(run(s.ds, {}, {s.neg[0]}, sels, gw), ValidationError);
    CHECK_THROWS_AS(run(s.ds, {s.pos[0]}, {s.neg[0]}, {}, gw), ValidationError);
}

TEST_CASE("stale cached predictions are refused") {
    fixtures::TempDir dir("eng");
    auto ds = fixtures::synthetic_dataset(dir.path(), 6, 2);
    auto records = ds.records();
    const auto pos = fixtures::ids_with_label(ds, 1);
    const auto neg = fixtures::ids_with_label(ds, 0);
    REQUIRE(!pos.empty());
    REQUIRE(!neg.empty());
    for (auto& r : records) {
        if (r.id == neg[0]) {
            r.predicted_label = 1;
            r.probability = 0.99;
        }
    }
    write_demographics(dir.path(), ds.manifest(), records);
    const auto stale = Dataset::load(dir.path());
    ClassifierGateway gw(std::make_shared<SyntheticBackend>());
    std::vector<std::string> targets = pos;
    targets.push_back(neg[0]);
    std::vector<std::string> sources(neg.begin() + 1, neg.end());
    REQUIRE(!sources.empty());
    CHECK_THROWS_WITH_AS(run(stale, targets, sources, parse_all({"lv_cavity"}), gw), doctest::Contains("stale"),
                         ValidationError);
}

TEST_CASE("run artifacts round-trip through disk") {
    const auto& s = shared();
    fixtures::TempDir dir("run");
    ClassifierGateway gw(std::make_shared<SyntheticBackend>());
    const auto art = run(s.ds, head(s.pos, 2), head(s.neg, 3), parse_all({"lv_cavity", "lv_cavity+rv_cavity"}), gw,
                         {2, true});
    REQUIRE(art.results[0].volume);
    write_run(art, dir / "r1");
    CHECK_THROWS_AS(write_run(art, dir / "r1"), IoError);
    const auto back = read_run(dir / "r1");
    CHECK(back.run_id == art.run_id);
    CHECK(back.created_at == art.created_at);
    CHECK(back.dataset_digest == art.dataset_digest);
    CHECK(back.selections == art.selections);
    CHECK(results_csv(back) == results_csv(art));
    CHECK(fixtures::slurp(dir / "r1/results.csv") == results_csv(art));
    CHECK(std::filesystem::exists(dir / "r1/summary.csv"));
    CHECK(std::filesystem::exists(dir / "r1/volumes"));
    for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
        CHECK(e.path().filename().string().find("partial") == std::string::npos);
    }
}

TEST_CASE("recompute rebuilds the stored volume") {
    const auto& s = shared();
    ClassifierGateway gw(std::make_shared<SyntheticBackend>());
    const auto art = run(s.ds, head(s.pos, 2), head(s.neg, 2), combinations(s.ds.schema()), gw, {1, true});
    for (const auto& r : art.results) {
        if (!r.volume) continue;
        const auto img = recompute(s.ds, r.spec);
        CHECK(img.pixels == *r.volume);
        CHECK(img.expected_segmap == *r.expected_segmap);
    }
}

TEST_CASE("replacing cavity and myocardium flips opposite cohorts") {
    const auto& s = shared();
    ClassifierGateway gw(std::make_shared<SyntheticBackend>());
    const auto sel = parse_all({"lv_cavity+lv_myocardium"});
    const auto a = summarize(run(s.ds, s.pos, s.neg, sel, gw));
    const auto b = summarize(run(s.ds, s.neg, s.pos, sel, gw));
    const auto both = combine_summaries(a, b);
    REQUIRE(both[0].proportion);
    CHECK(*both[0].proportion >= 0.70);
}
