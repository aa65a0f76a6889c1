#include <doctest.h>

#include <bit>
#include <filesystem>
#include <random>

#include "phasealign/io.hpp"

using namespace phasealign;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "phasealign_test_io";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

} // namespace

TEST_CASE("random 8^3 volume round-trips bit-exactly through a file") {
    std::mt19937_64 rng(123);
    std::normal_distribution<float> g(0.0f, 100.0f);
    Volume v({8, 8, 8});
    for (float& x : v.data()) x = g(rng);
    v.set_spacing({0.5f, 0.7f, 1.25f});
    const auto path = scratch("rt.vol3");
    write_volume(v, path);
    const Volume r = read_volume(path);
    CHECK(r.shape() == v.shape());
    CHECK(r.spacing() == v.spacing());
    for (size_t i = 0; i < v.data().size(); ++i)
        REQUIRE(std::bit_cast<uint32_t>(r.data()[i]) == std::bit_cast<uint32_t>(v.data()[i]));
}

TEST_CASE("property: every dtype round-trips bit-exactly, including special floats") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> ext(1, 9);
        const Shape3 s{ext(rng), ext(rng), ext(rng)};
        Volume v(s);
        for (float& x : v.data()) x = std::bit_cast<float>(static_cast<uint32_t>(rng()));
        const Volume rv = decode_volume(encode_volume(v));
        CHECK(encode_volume(rv) == encode_volume(v));

        std::vector<uint8_t> labels(static_cast<size_t>(s.voxels()));
        for (auto& x : labels) x = static_cast<uint8_t>(rng() % 4);
        const LabelMap l(s, labels);
        CHECK(decode_labels(encode_labels(l)) == l);

        DeformationField f(s);
        for (float& x : f.u) x = std::bit_cast<float>(static_cast<uint32_t>(rng()));
        CHECK(encode_field(decode_field(encode_field(f))) == encode_field(f));
    }
}

TEST_CASE("header layout is byte-exact") {
    Volume v({2, 3, 4}, 1.0f);
    const auto bytes = encode_volume(v);
    REQUIRE(bytes.size() == 4 + 1 + 12 + 12 + 24 * 4);
    CHECK(bytes[0] == 'V');
    CHECK(bytes[3] == '1');
    CHECK(bytes[4] == 0);
    CHECK(bytes[5] == 2);
    CHECK(bytes[9] == 3);
    CHECK(bytes[13] == 4);
    // 1.0f = 0x3f800000 little endian
    CHECK(bytes[29] == 0x00);
    CHECK(bytes[32] == 0x3f);
    CHECK(encode_labels(LabelMap({2, 3, 4}))[4] == 1);
}

TEST_CASE("hand-built header (2,3,4) with 24 float payload is accepted") {
    std::vector<uint8_t> b = {'V', '3', 'D', '1', 0};
    put_u32(b, 2);
    put_u32(b, 3);
    put_u32(b, 4);
    for (int i = 0; i < 3; ++i) put_u32(b, std::bit_cast<uint32_t>(1.0f));
    for (int i = 0; i < 24; ++i) put_u32(b, std::bit_cast<uint32_t>(static_cast<float>(i)));
    const Volume v = decode_volume(b);
    CHECK(v.shape() == Shape3{2, 3, 4});
    CHECK(v.at(0, 0, 1) == 1.0f); // width fastest
    CHECK(v.at(0, 1, 0) == 4.0f);
    CHECK(v.at(1, 0, 0) == 12.0f);
    CHECK(v.at(1, 2, 3) == 23.0f);
}

TEST_CASE("malformed streams raise structured FormatError") {
    const auto good = encode_volume(Volume({2, 2, 2}, 3.0f));

    SUBCASE("truncated payload") {
        std::vector<uint8_t> t(good.begin(), good.end() - 3);
        try {
            decode_volume(t, "t.vol3");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.source() == "t.vol3");
            CHECK(e.reason().find("payload") != std::string::npos);
        }
    }
    SUBCASE("truncated header") {
        std::vector<uint8_t> t(good.begin(), good.begin() + 10);
        CHECK_THROWS_AS(decode_volume(t), FormatError);
    }
    SUBCASE("bad magic") {
        auto t = good;
        t[0] = 'X';
        try {
            decode_volume(t);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.reason() == "bad magic");
            CHECK(e.offset() == 0);
        }
    }
    SUBCASE("trailing bytes") {
        auto t = good;
        t.push_back(0);
        CHECK_THROWS_AS(decode_volume(t), FormatError);
    }
    SUBCASE("dtype mismatch and label range") {
        CHECK_THROWS_AS(decode_labels(good), FormatError);
        auto l = encode_labels(LabelMap({1, 1, 2}));
        l.back() = 7;
        CHECK_THROWS_AS(decode_labels(l), FormatError);
    }
    SUBCASE("field payload mismatch") {
        auto f = encode_field(DeformationField({2, 2, 2}));
        f.resize(f.size() - 4);
        CHECK_THROWS_AS(decode_field(f), FormatError);
    }
    SUBCASE("truncated file on disk") {
        const auto path = scratch("trunc.vol3");
        write_bytes(std::span(good).first(good.size() - 1), path);
        CHECK_THROWS_AS(read_volume(path), FormatError);
    }
}

TEST_CASE("missing file is a DataError") {
    CHECK_THROWS_AS(read_volume(scratch("does_not_exist.vol3")), DataError);
}
