#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "morphcf/error.hpp"
#include "morphcf/volume_io.hpp"

using namespace morphcf;

namespace {

ParseFailure failure_of(std::span<const std::uint8_t> bytes) {
    try {
        decode_volume(bytes, "x");
    } catch (const ParseError& e) {
        return e.failure();
    }
    FAIL("decode succeeded");
    return ParseFailure::bad_magic;
}

}  // namespace

TEST_CASE("zero volume of 1x8x8 encodes to an 11-byte header plus 64 pixels") {
    fixtures::TempDir dir("io");
    const Volume v("zeros", {1, 8, 8}, std::vector<std::uint8_t>(64, 0));
    CHECK(encode_volume(v).size() == 75);
    write_volume(v, dir / "zeros.mvol");
    CHECK(std::filesystem::file_size(dir / "zeros.mvol") == 75);
    const auto back = read_volume(dir / "zeros.mvol");
    CHECK(back.id() == "zeros");
    CHECK(back == v);
}

TEST_CASE("header layout is little-endian") {
    const Volume v("v", {2, 9, 300}, std::vector<std::uint8_t>(2 * 9 * 300, 7));
    const auto bytes = encode_volume(v);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MVOL");
    CHECK(bytes[4] == 0x01);
    CHECK(bytes[5] == 2);
    CHECK(bytes[6] == 0);
    CHECK(bytes[7] == 9);
    CHECK(bytes[9] == (300 & 0xff));
    CHECK(bytes[10] == (300 >> 8));
}

TEST_CASE("random rasters round-trip") {
    std::mt19937 gen(11);
    std::vector<std::uint8_t> px(3 * 16 * 16);
    for (auto& p : px) p = static_cast<std::uint8_t>(gen());
    const Volume v("r", {3, 16, 16}, px);
    CHECK(decode_volume(encode_volume(v), "r") == v);

    std::vector<Label> labels(16 * 16);
    for (auto& l : labels) l = static_cast<Label>(gen() % 4);
    const SegmentMap m({1, 16, 16}, labels);
    CHECK(decode_segmap(encode_segmap(m)) == m);
}

TEST_CASE("segment map file passed as a volume is rejected by magic") {
    fixtures::TempDir dir("io");
    write_segmap(SegmentMap({1, 8, 8}, std::vector<Label>(64)), dir / "m.mseg");
    try {
        read_volume(dir / "m.mseg");
        FAIL("wrong magic accepted");
    } catch (const ParseError& e) {
        CHECK(e.failure() == ParseFailure::bad_magic);
    }
}

TEST_CASE("each malformed header has its own failure") {
    const auto good = encode_volume(Volume("v", {1, 8, 8}, std::vector<std::uint8_t>(64, 1)));

    auto bad_version = good;
    bad_version[4] = 0x02;
    CHECK(failure_of(bad_version) == ParseFailure::unsupported_version);

    CHECK(failure_of(std::span(good).first(70)) == ParseFailure::truncated);
    CHECK(failure_of(std::span(good).first(5)) == ParseFailure::truncated);

    auto zero = good;
    zero[7] = 0;
    zero[8] = 0;
    CHECK(failure_of(zero) == ParseFailure::zero_dims);

    auto trailing = good;
    trailing.push_back(0);
    CHECK(failure_of(trailing) == ParseFailure::trailing_bytes);
}

TEST_CASE("missing file is an I/O error") {
    CHECK_THROWS_AS(read_volume("/nonexistent/dir/x.mvol"), IoError);
}
