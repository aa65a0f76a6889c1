#include <doctest.h>

#include <array>
#include <random>
#include <set>

#include "phasealign/ensemble.hpp"
#include "phasealign/errors.hpp"

using namespace phasealign;

namespace {

LabelMap single(uint8_t v) {
    LabelMap l({1, 1, 1});
    l.data()[0] = v;
    return l;
}

LabelMap random_map(Shape3 s, std::mt19937_64& rng) {
    LabelMap l(s);
    for (auto& x : l.data()) x = static_cast<uint8_t>(rng() % 4);
    return l;
}

} // namespace

TEST_CASE("majority and fallback rules") {
    const std::array<LabelMap, 3> a{single(1), single(1), single(2)};
    CHECK(majority_vote(a, 2).data()[0] == 1);
    const std::array<LabelMap, 3> b{single(1), single(2), single(3)};
    CHECK(majority_vote(b, 2).data()[0] == 3);
    CHECK(majority_vote(b, 0).data()[0] == 1);
}

TEST_CASE("idempotence and error paths") {
    std::mt19937_64 rng(1);
    const LabelMap p = random_map({5, 5, 5}, rng);
    const std::array<LabelMap, 3> same{p, p, p};
    CHECK(majority_vote(same, 2) == p);

    const std::array<LabelMap, 1> one{p};
    CHECK_THROWS_AS(majority_vote(one, 0), DataError);
    const std::array<LabelMap, 2> mismatch{p, LabelMap({5, 5, 4})};
    CHECK_THROWS_AS(majority_vote(mismatch, 0), DataError);
    const std::array<LabelMap, 2> two{p, p};
    CHECK_THROWS_AS(majority_vote(two, 2), DataError);
}

TEST_CASE("property: matches a brute-force vote counter") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 30; ++t) {
        const size_t m = 2 + rng() % 4;
        const size_t fb = rng() % m;
        std::vector<LabelMap> preds;
        for (size_t k = 0; k < m; ++k) preds.push_back(random_map({4, 4, 4}, rng));
        const LabelMap out = majority_vote(preds, fb);
        for (int64_t i = 0; i < 64; ++i) {
            // brute force: try every label, keep the ones reaching quorum with a unique top count
            std::vector<size_t> cnt(4, 0);
            for (const auto& p : preds) cnt[p.data()[i]]++;
            size_t top = 0;
            for (size_t c : cnt) top = std::max(top, c);
            int winners = 0, winner = -1;
            for (int c = 0; c < 4; ++c)
                if (cnt[c] == top) {
                    ++winners;
                    winner = c;
                }
            const int expected = (winners == 1 && 2 * top >= m) ? winner : preds[fb].data()[i];
            CHECK(out.data()[i] == expected);
            std::set<uint8_t> inputs;
            for (const auto& p : preds) inputs.insert(p.data()[i]);
            CHECK(inputs.count(out.data()[i]) == 1);
        }
    }
}

TEST_CASE("property: permutation invariant where a strict majority exists") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const LabelMap base = random_map({4, 4, 4}, rng);
        LabelMap other = random_map({4, 4, 4}, rng);
        // two voters agree everywhere -> strict majority of three
        const std::array<LabelMap, 3> order1{base, base, other};
        const std::array<LabelMap, 3> order2{other, base, base};
        CHECK(majority_vote(order1, 2) == majority_vote(order2, 0));
        CHECK(majority_vote(order1, 2) == base);
    }
}

TEST_CASE("mean-probability mode averages then takes argmax") {
    ProbabilityMap a({1, 1, 2}), b({1, 1, 2});
    // voxel 0: a favours 1 strongly, b favours 2 weakly -> 1
    // voxel 1: a is certain of 3, b splits between 0 and 2 -> 3
    a.p = {0.0f, 0.0f, 0.9f, 0.0f, 0.1f, 0.0f, 0.0f, 1.0f};
    b.p = {0.0f, 0.4f, 0.3f, 0.0f, 0.7f, 0.6f, 0.0f, 0.0f};
    const std::array<ProbabilityMap, 2> both{a, b};
    const LabelMap out = mean_probability_vote(both);
    CHECK(out.data()[0] == 1);
    CHECK(out.data()[1] == 3);
    CHECK_THROWS_AS(mean_probability_vote(std::span<const ProbabilityMap>{}), DataError);
}
