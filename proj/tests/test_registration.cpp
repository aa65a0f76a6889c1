#include <doctest.h>

#include <filesystem>

#include "phasealign/errors.hpp"
#include "phasealign/io.hpp"
#include "phasealign/phantom.hpp"
#include "phasealign/registration.hpp"
#include "phasealign/warp.hpp"

using namespace phasealign;

namespace {

std::pair<Volume, Volume> clipped_pair(const CasePair& c) {
    return {clip(c.venous, kHuLow, kHuHigh), clip(c.arterial, kHuLow, kHuHigh)};
}

} // namespace

TEST_CASE("registering a volume to itself yields a near-zero field") {
    PhantomConfig pc;
    pc.seed = 3;
    const CasePair c = generate_case(pc, 0);
    const Volume v = clip(c.venous, kHuLow, kHuHigh);
    const DeformationField f = register_demons(v, v);
    CHECK(f.max_norm() < 0.1);
}

TEST_CASE("demons recovers most of a known phantom deformation") {
    PhantomConfig pc;
    pc.deform_max = 3.0;
    pc.seed = 21;
    for (int i = 0; i < 2; ++i) {
        const CasePair c = generate_case(pc, i);
        const auto [fixed, moving] = clipped_pair(c);
        const DeformationField f = register_demons(fixed, moving);
        const double base = mean_displacement_error(DeformationField(f.shape), *c.true_field);
        const double err = mean_displacement_error(f, *c.true_field);
        MESSAGE("case " << i << ": zero-field error " << base << ", demons error " << err);
        CHECK(err <= 0.5 * base);
        CHECK(mean_squared_error(warp_scalar(f, moving), fixed) <= mean_squared_error(moving, fixed));
    }
}

TEST_CASE("registration is deterministic") {
    PhantomConfig pc;
    pc.shape = {32, 32, 32};
    pc.seed = 8;
    const CasePair c = generate_case(pc, 1);
    const auto [fixed, moving] = clipped_pair(c);
    RegistrationConfig rc;
    rc.iters_per_level = 5;
    CHECK(register_demons(fixed, moving, rc) == register_demons(fixed, moving, rc));
}

TEST_CASE("registration config and shape validation") {
    RegistrationConfig rc;
    rc.levels = 0;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    rc = {};
    rc.field_smooth_sigma = 0.0;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    CHECK_THROWS_AS(register_demons(Volume({4, 4, 4}), Volume({4, 4, 5})), DataError);
}

TEST_CASE("external fields load, round-trip and are checked against the target grid") {
    const auto dir = std::filesystem::temp_directory_path() / "phasealign_test_reg";
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(4);
    const DeformationField f = smooth_random_field({8, 9, 10}, 2.0, 1.5, rng);
    write_field(f, dir / "f.def3");
    CHECK(load_external_field(dir / "f.def3") == f);
    CHECK(load_external_field(dir / "f.def3", Shape3{8, 9, 10}) == f);
    CHECK_THROWS_AS(load_external_field(dir / "f.def3", Shape3{8, 9, 11}), DataError);

    write_field(DeformationField({4, 4, 4}), dir / "zero.def3");
    const DeformationField z = load_external_field(dir / "zero.def3", Shape3{4, 4, 4});
    CHECK(z.max_norm() == 0.0f);
}
