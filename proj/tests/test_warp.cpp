#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "phasealign/errors.hpp"
#include "phasealign/filters.hpp"
#include "phasealign/phantom.hpp"
#include "phasealign/warp.hpp"
#include "phasealign/warp_kernels.hpp"

using namespace phasealign;

namespace {

Volume random_volume(Shape3 s, std::mt19937_64& rng) {
    Volume v(s);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (float& x : v.data()) x = u(rng);
    return v;
}

DeformationField random_field(Shape3 s, std::mt19937_64& rng, float amp) {
    DeformationField f(s);
    std::uniform_real_distribution<float> u(-amp, amp);
    for (float& x : f.u) x = u(rng);
    return f;
}

DeformationField constant_field(Shape3 s, float a, float b, float c) {
    DeformationField f(s);
    const int64_t n = s.voxels();
    for (int64_t i = 0; i < n; ++i) {
        f.u[i] = a;
        f.u[n + i] = b;
        f.u[2 * n + i] = c;
    }
    return f;
}

// Brute force: every grid point contributes with the tent weight
// prod_a max(0, 1 - |p_a - i_a|) after clamping p into the grid.
double brute_force_sample(const Volume& v, double pz, double py, double px) {
    const Shape3 s = v.shape();
    pz = std::clamp(pz, 0.0, double(s.d - 1));
    py = std::clamp(py, 0.0, double(s.h - 1));
    px = std::clamp(px, 0.0, double(s.w - 1));
    double acc = 0.0;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const double w = std::max(0.0, 1.0 - std::abs(pz - z)) * std::max(0.0, 1.0 - std::abs(py - y)) *
                                 std::max(0.0, 1.0 - std::abs(px - x));
                if (w > 0.0) acc += w * v.at(z, y, x);
            }
    return acc;
}

Volume gaussian_blob(Shape3 s, double sigma) {
    Volume v(s);
    const double cz = (s.d - 1) / 2.0, cy = (s.h - 1) / 2.0, cx = (s.w - 1) / 2.0;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const double r2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx);
                v.at(z, y, x) = static_cast<float>(std::exp(-r2 / (2 * sigma * sigma)));
            }
    return v;
}

DeformationField smooth_field(Shape3 s, std::mt19937_64& rng, double sigma, float max_norm) {
    return smooth_random_field(s, sigma, max_norm, rng);
}

} // namespace

TEST_CASE("zero field is the identity") {
    std::mt19937_64 rng(1);
    const Volume v = random_volume({5, 6, 7}, rng);
    const Volume w = warp_scalar(DeformationField(v.shape()), v);
    CHECK(std::equal(v.data().begin(), v.data().end(), w.data().begin()));
    const Volume z = warp_scalar(DeformationField(v.shape()), v, Border::zero);
    CHECK(std::equal(v.data().begin(), v.data().end(), z.data().begin()));
}

TEST_CASE("constant unit shift along depth moves voxels by one with clamped border") {
    std::mt19937_64 rng(2);
    const Volume v = random_volume({6, 4, 5}, rng);
    const Volume w = warp_scalar(constant_field(v.shape(), 1, 0, 0), v);
    for (int64_t z = 0; z < 6; ++z)
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 5; ++x) CHECK(w.at(z, y, x) == v.at(std::min<int64_t>(z + 1, 5), y, x));
    const Volume zf = warp_scalar(constant_field(v.shape(), 1, 0, 0), v, Border::zero);
    CHECK(zf.at(5, 0, 0) == 0.0f);
    CHECK(zf.at(4, 0, 0) == v.at(5, 0, 0));
}

TEST_CASE("half-voxel shift of a ramp offsets interior values by exactly 0.5") {
    Volume ramp({8, 3, 3});
    for (int64_t z = 0; z < 8; ++z)
        for (int64_t y = 0; y < 3; ++y)
            for (int64_t x = 0; x < 3; ++x) ramp.at(z, y, x) = static_cast<float>(z);
    const Volume w = warp_scalar(constant_field(ramp.shape(), 0.5f, 0, 0), ramp);
    for (int64_t z = 0; z < 7; ++z) CHECK(w.at(z, 1, 1) == doctest::Approx(z + 0.5).epsilon(1e-7));
    CHECK(w.at(7, 1, 1) == 7.0f); // clamped
}

TEST_CASE("warp matches a brute-force tent-weight oracle") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const Volume v = random_volume({8, 8, 8}, rng);
        const DeformationField f = random_field(v.shape(), rng, 3.0f);
        const Volume w = warp_scalar(f, v);
        const int64_t n = v.shape().voxels();
        double worst = 0.0;
        for (int64_t z = 0; z < 8; ++z)
            for (int64_t y = 0; y < 8; ++y)
                for (int64_t x = 0; x < 8; ++x) {
                    const int64_t i = v.shape().index(z, y, x);
                    const double o = brute_force_sample(v, z + f.u[i], y + f.u[n + i], x + f.u[2 * n + i]);
                    worst = std::max(worst, std::abs(o - w.at(z, y, x)));
                }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("property: warp is linear in the image") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const Shape3 s{5, 6, 7};
        const Volume a = random_volume(s, rng), b = random_volume(s, rng);
        const DeformationField f = random_field(s, rng, 2.5f);
        const float alpha = 0.75f, beta = -1.5f;
        Volume mix(s);
        for (int64_t i = 0; i < s.voxels(); ++i) mix.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
        const Volume wa = warp_scalar(f, a), wb = warp_scalar(f, b), wm = warp_scalar(f, mix);
        for (int64_t i = 0; i < s.voxels(); ++i)
            CHECK(wm.data()[i] == doctest::Approx(alpha * wa.data()[i] + beta * wb.data()[i]).epsilon(1e-5));
    }
}

TEST_CASE("property: interior warped values stay within the 8 neighbouring samples") {
    std::mt19937_64 rng(5);
    const Shape3 s{9, 9, 9};
    const Volume v = random_volume(s, rng);
    const DeformationField f = random_field(s, rng, 2.0f);
    const Volume w = warp_scalar(f, v);
    const int64_t n = s.voxels();
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const int64_t i = s.index(z, y, x);
                const double pz = z + f.u[i], py = y + f.u[n + i], px = x + f.u[2 * n + i];
                if (pz < 0 || py < 0 || px < 0 || pz > s.d - 1 || py > s.h - 1 || px > s.w - 1) continue;
                const int64_t z0 = int64_t(std::floor(pz)), y0 = int64_t(std::floor(py)), x0 = int64_t(std::floor(px));
                float lo = 1e9f, hi = -1e9f;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const float s8 = v.at(std::min(z0 + dz, s.d - 1), std::min(y0 + dy, s.h - 1),
                                                  std::min(x0 + dx, s.w - 1));
                            lo = std::min(lo, s8);
                            hi = std::max(hi, s8);
                        }
                CHECK(w.data()[i] >= lo - 1e-6f);
                CHECK(w.data()[i] <= hi + 1e-6f);
            }
}

TEST_CASE("warp rejects mismatched grids") {
    CHECK_THROWS_AS(warp_scalar(DeformationField({2, 2, 2}), Volume({2, 2, 3})), DataError);
    CHECK_THROWS_AS(compose(DeformationField({2, 2, 2}), DeformationField({2, 2, 3})), DataError);
}

TEST_CASE("kernel backward matches central differences") {
    std::mt19937_64 rng(6);
    const Shape3 s{8, 8, 8};
    const int64_t n = s.voxels();
    std::normal_distribution<double> g(0.0, 1.0);
    // smooth source so the sampled positions see a smooth landscape
    std::vector<double> src(n), field(3 * n), weights(n);
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x)
                src[s.index(z, y, x)] = std::sin(0.7 * z) * std::cos(0.5 * y) + 0.3 * std::sin(0.9 * x + 0.2 * z);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (auto& x : field) x = u(rng);
    for (auto& x : weights) x = g(rng);
    auto loss = [&](const std::vector<double>& sv, const std::vector<double>& fv) {
        std::vector<double> out(n);
        kernels::warp_forward(sv.data(), fv.data(), out.data(), s, kernels::Boundary::clamp);
        double l = 0;
        for (int64_t i = 0; i < n; ++i) l += weights[i] * out[i];
        return l;
    };
    const double h = 1e-3;
    std::vector<double> gsrc(n, 0.0), gfield(3 * n, 0.0);
    kernels::warp_backward(src.data(), field.data(), weights.data(), gsrc.data(), gfield.data(), s,
                           kernels::Boundary::clamp);
    // Trilinear interpolation has kinks at integer sample positions and the
    // clamp border; entries whose sample lies within a few steps of a kink are
    // not differentiable there and are left out of the comparison.
    auto smooth_at = [&](size_t entry) {
        const int64_t i = static_cast<int64_t>(entry % n);
        const int64_t z = i / (s.h * s.w), y = (i / s.w) % s.h, x = i % s.w;
        const double p[3] = {z + field[i], y + field[n + i], x + field[2 * n + i]};
        const int64_t ext[3] = {s.d, s.h, s.w};
        for (int a = 0; a < 3; ++a) {
            if (std::abs(p[a] - std::round(p[a])) < 5 * h) return false;
            if (p[a] < 5 * h || p[a] > ext[a] - 1 - 5 * h) return false;
        }
        return true;
    };
    auto rel_err = [&](std::vector<double>& param, const std::vector<double>& analytic, bool is_field) {
        double num = 0, den = 0;
        for (size_t i = 0; i < param.size(); ++i) {
            if (is_field && !smooth_at(i)) continue;
            const double keep = param[i];
            param[i] = keep + h;
            const double lp = is_field ? loss(src, param) : loss(param, field);
            param[i] = keep - h;
            const double lm = is_field ? loss(src, param) : loss(param, field);
            param[i] = keep;
            const double fd = (lp - lm) / (2 * h);
            num += (fd - analytic[i]) * (fd - analytic[i]);
            den += analytic[i] * analytic[i];
        }
        return std::sqrt(num / den);
    };
    CHECK(rel_err(src, gsrc, false) < 1e-3);
    CHECK(rel_err(field, gfield, true) < 1e-3);
}

TEST_CASE("compose has the zero field as two-sided identity") {
    std::mt19937_64 rng(7);
    const DeformationField f = random_field({6, 6, 6}, rng, 2.0f);
    const DeformationField zero({6, 6, 6});
    CHECK(compose(zero, f) == f);
    CHECK(compose(f, zero) == f);
}

TEST_CASE("compose of two constant shifts is their sum in the interior") {
    const Shape3 s{10, 10, 10};
    const DeformationField a = constant_field(s, 1.0f, -2.0f, 0.5f);
    const DeformationField b = constant_field(s, 2.0f, 1.0f, 0.25f);
    const DeformationField c = compose(a, b);
    const int64_t n = s.voxels();
    for (int64_t z = 0; z < 6; ++z)
        for (int64_t y = 2; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x) {
                const int64_t i = s.index(z, y, x);
                CHECK(c.u[i] == doctest::Approx(3.0));
                CHECK(c.u[n + i] == doctest::Approx(-1.0));
                CHECK(c.u[2 * n + i] == doctest::Approx(0.75));
            }
}

TEST_CASE("warping by a composition equals warping twice on a smooth volume") {
    // Both routes interpolate, so they only agree where the data is smooth
    // relative to the grid and away from the clamped border.
    const Shape3 s{48, 48, 48};
    const Volume v = gaussian_blob(s, 20.0);
    const int64_t m = 6;
    for (uint64_t seed : {8u, 18u, 28u}) {
        std::mt19937_64 rng(seed);
        const DeformationField outer = smooth_field(s, rng, 10.0, 0.5f);
        const DeformationField inner = smooth_field(s, rng, 10.0, 0.5f);
        const Volume once = warp_scalar(compose(outer, inner), v);
        const Volume twice = warp_scalar(inner, warp_scalar(outer, v));
        double worst = 0.0;
        for (int64_t z = m; z < s.d - m; ++z)
            for (int64_t y = m; y < s.h - m; ++y)
                for (int64_t x = m; x < s.w - m; ++x) {
                    const int64_t i = s.index(z, y, x);
                    worst = std::max(worst, double(std::abs(once.data()[i] - twice.data()[i])));
                }
        MESSAGE("seed " << seed << " interior max error " << worst);
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("resample_field identity, scaling and smooth round trip") {
    std::mt19937_64 rng(9);
    const DeformationField f = random_field({4, 5, 6}, rng, 1.0f);
    CHECK(resample_field(f, f.shape) == f);

    const DeformationField c = constant_field({4, 4, 4}, 2.0f, 0.0f, 0.0f);
    const DeformationField up = resample_field(c, {8, 4, 4});
    for (int64_t i = 0; i < up.shape.voxels(); ++i) {
        CHECK(up.u[i] == doctest::Approx(4.0));
        CHECK(up.u[up.shape.voxels() + i] == 0.0f);
    }

    const Shape3 fine{32, 32, 32};
    const DeformationField smooth = smooth_field(fine, rng, 8.0, 2.0f);
    const DeformationField back = resample_field(resample_field(smooth, {16, 16, 16}), fine);
    double worst = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int64_t z = 2; z < fine.d - 2; ++z)
            for (int64_t y = 2; y < fine.h - 2; ++y)
                for (int64_t x = 2; x < fine.w - 2; ++x) {
                    const int64_t i = c * fine.voxels() + fine.index(z, y, x);
                    worst = std::max(worst, double(std::abs(back.u[i] - smooth.u[i])));
                }
    MESSAGE("round-trip interior max error " << worst);
    CHECK(worst < 0.1);
    CHECK_THROWS_AS(resample_field(f, {0, 1, 1}), DataError);
}
