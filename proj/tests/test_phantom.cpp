#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "phasealign/errors.hpp"
#include "phasealign/filters.hpp"
#include "phasealign/io.hpp"
#include "phasealign/phantom.hpp"
#include "phasealign/warp.hpp"

using namespace phasealign;

namespace {

PhantomConfig small_cfg() {
    PhantomConfig c;
    c.shape = {32, 32, 32};
    c.seed = 17;
    return c;
}

// Direct (non-separable) 3D convolution with replicate border.
std::vector<float> direct_smooth(std::span<const float> in, Shape3 s, double sigma) {
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    std::vector<float> out(in.size());
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                double acc = 0;
                for (int a = -r; a <= r; ++a)
                    for (int b = -r; b <= r; ++b)
                        for (int c = -r; c <= r; ++c) {
                            const int64_t zz = std::clamp<int64_t>(z + a, 0, s.d - 1);
                            const int64_t yy = std::clamp<int64_t>(y + b, 0, s.h - 1);
                            const int64_t xx = std::clamp<int64_t>(x + c, 0, s.w - 1);
                            acc += k[a + r] * k[b + r] * k[c + r] * in[s.index(zz, yy, xx)];
                        }
                out[s.index(z, y, x)] = static_cast<float>(acc);
            }
    return out;
}

double gradient_energy(std::span<const float> v, Shape3 s) {
    double e = 0;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const float c = v[s.index(z, y, x)];
                if (z + 1 < s.d) e += std::pow(v[s.index(z + 1, y, x)] - c, 2);
                if (y + 1 < s.h) e += std::pow(v[s.index(z, y + 1, x)] - c, 2);
                if (x + 1 < s.w) e += std::pow(v[s.index(z, y, x + 1)] - c, 2);
            }
    return e;
}

} // namespace

TEST_CASE("smooth_random_field: zero magnitude gives the zero field") {
    std::mt19937_64 rng(1);
    const auto f = smooth_random_field({16, 16, 16}, 3.0, 0.0, rng);
    for (float x : f.u) CHECK(x == 0.0f);
}

TEST_CASE("smooth_random_field: largest vector norm equals deform_max") {
    std::mt19937_64 rng(2);
    for (double m : {0.5, 3.0, 4.0}) {
        const auto f = smooth_random_field({16, 20, 12}, 2.5, m, rng);
        CHECK(std::abs(f.max_norm() - m) < 1e-5);
    }
    CHECK_THROWS_AS(smooth_random_field({4, 4, 4}, 0.0, 1.0, rng), DataError);
}

TEST_CASE("separable smoothing matches a direct convolution and reduces gradient energy") {
    std::mt19937_64 rng(3);
    const Shape3 s{16, 16, 16};
    std::vector<float> noise(s.voxels());
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (float& x : noise) x = g(rng);
    std::vector<float> sep = noise;
    gaussian_smooth(sep, s, 1.5);
    const auto direct = direct_smooth(noise, s, 1.5);
    double worst = 0;
    for (size_t i = 0; i < sep.size(); ++i) worst = std::max(worst, double(std::abs(sep[i] - direct[i])));
    CHECK(worst < 1e-5);
    CHECK(gradient_energy(direct, s) < gradient_energy(noise, s));
    CHECK(gradient_energy(sep, s) < gradient_energy(noise, s));
}

TEST_CASE("tumor_rate 0 never produces class 3") {
    PhantomConfig c = small_cfg();
    c.tumor_rate = 0.0;
    for (int i = 0; i < 5; ++i) CHECK(generate_case(c, i).label.count(kTumor) == 0);
}

TEST_CASE("identity configuration makes the arterial phase equal the venous phase") {
    PhantomConfig c = small_cfg();
    c.deform_max = 0.0;
    c.noise_std = 0.0;
    c.tumor_rate = 1.0;
    c.arterial_tumor_contrast = c.venous_tumor_contrast;
    const CasePair p = generate_case(c, 3);
    CHECK(std::equal(p.venous.data().begin(), p.venous.data().end(), p.arterial.data().begin()));
}

TEST_CASE("same seed gives identical case bytes, different index differs") {
    const PhantomConfig c = small_cfg();
    const CasePair a = generate_case(c, 2), b = generate_case(c, 2), d = generate_case(c, 3);
    CHECK(encode_volume(a.venous) == encode_volume(b.venous));
    CHECK(encode_volume(a.arterial) == encode_volume(b.arterial));
    CHECK(encode_labels(a.label) == encode_labels(b.label));
    CHECK(encode_field(*a.true_field) == encode_field(*b.true_field));
    CHECK(encode_volume(a.venous) != encode_volume(d.venous));
}

TEST_CASE("class geometry nests: duct inside pancreas, tumor touches pancreas") {
    PhantomConfig c;
    c.tumor_rate = 1.0;
    c.seed = 5;
    for (int i = 0; i < 4; ++i) {
        const CasePair p = generate_case(c, i);
        const Shape3 s = p.label.shape();
        REQUIRE(p.label.count(kPancreas) > 0);
        REQUIRE(p.label.count(kDuct) > 0);
        REQUIRE(p.label.count(kTumor) > 50);
        bool tumor_touches_pancreas = false;
        for (int64_t z = 1; z + 1 < s.d; ++z)
            for (int64_t y = 1; y + 1 < s.h; ++y)
                for (int64_t x = 1; x + 1 < s.w; ++x) {
                    const uint8_t l = p.label.at(z, y, x);
                    const uint8_t nb[6] = {p.label.at(z - 1, y, x), p.label.at(z + 1, y, x), p.label.at(z, y - 1, x),
                                           p.label.at(z, y + 1, x), p.label.at(z, y, x - 1), p.label.at(z, y, x + 1)};
                    for (uint8_t q : nb) {
                        if (l == kDuct) CHECK(q != kBackground);
                        if (l == kTumor && (q == kPancreas || q == kDuct)) tumor_touches_pancreas = true;
                    }
                }
        CHECK(tumor_touches_pancreas);
    }
}

TEST_CASE("tumor contrast gap between phases matches the configuration") {
    PhantomConfig c = small_cfg();
    c.shape = {48, 48, 48};
    c.deform_max = 0.0;
    c.tumor_rate = 1.0;
    c.noise_std = 15.0;
    c.venous_tumor_contrast = 10.0;
    c.arterial_tumor_contrast = 35.0;
    const CasePair p = generate_case(c, 1);
    double sv = 0, sa = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < p.label.shape().voxels(); ++i)
        if (p.label.data()[i] == kTumor) {
            sv += p.venous.data()[i];
            sa += p.arterial.data()[i];
            ++n;
        }
    REQUIRE(n > 0);
    const double gap = sv / n - sa / n;
    const double tol = 3.0 * c.noise_std * std::sqrt(2.0 / n);
    CHECK(std::abs(gap - (c.arterial_tumor_contrast - c.venous_tumor_contrast)) < tol);
}

TEST_CASE("true field is bounded and realigns the arterial phase") {
    PhantomConfig c = small_cfg();
    c.shape = {40, 40, 40};
    c.noise_std = 0.0;
    c.deform_max = 3.0;
    c.arterial_tumor_contrast = c.venous_tumor_contrast;
    const CasePair p = generate_case(c, 4);
    REQUIRE(p.true_field);
    CHECK(p.true_field->max_norm() <= c.deform_max + 1e-5);
    const Volume back = warp_scalar(*p.true_field, p.arterial);
    double before = 0, after = 0;
    for (int64_t i = 0; i < p.venous.shape().voxels(); ++i) {
        before += std::abs(p.arterial.data()[i] - p.venous.data()[i]);
        after += std::abs(back.data()[i] - p.venous.data()[i]);
    }
    CHECK(after < 0.35 * before);
}

TEST_CASE("too small grids and bad configs are rejected") {
    PhantomConfig c = small_cfg();
    c.shape = {8, 32, 32};
    CHECK_THROWS_AS(generate_case(c, 0), ConfigError);
    c = small_cfg();
    c.tumor_rate = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_cfg();
    c.deform_max = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dataset writer produces a manifest that loads back") {
    PhantomConfig c = small_cfg();
    c.n_cases = 3;
    c.tumor_rate = 0.5;
    const auto dir = std::filesystem::temp_directory_path() / "phasealign_test_phantom";
    std::filesystem::remove_all(dir);
    const auto manifest = write_phantom_dataset(c, dir);
    const auto entries = read_manifest(manifest);
    REQUIRE(entries.size() == 3);
    for (int i = 0; i < 3; ++i) {
        const CasePair loaded = load_case(entries[i]);
        const CasePair fresh = generate_case(c, i);
        CHECK(loaded.case_id == fresh.case_id);
        CHECK(entries[i].has_tumor == (fresh.label.count(kTumor) > 0));
        CHECK(encode_volume(loaded.arterial) == encode_volume(fresh.arterial));
        CHECK(loaded.label == fresh.label);
        CHECK(loaded.true_field->u == fresh.true_field->u);
    }
}
