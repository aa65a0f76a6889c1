#pragma once

#include "phasealign/field.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

/// Out-of-grid sampling policy. clamp repeats the border value; zero fills.
enum class Border { clamp, zero };

/// out(x) = trilinear sample of v at x + u(x).
Volume warp_scalar(const DeformationField& field, const Volume& v, Border border = Border::clamp);
void warp_scalar(const DeformationField& field, std::span<const float> in, std::span<float> out,
                 Border border = Border::clamp);

/// result(x) = inner(x) + outer(x + inner(x)); warping by the result equals
/// warping by outer first and then by inner.
DeformationField compose(const DeformationField& outer, const DeformationField& inner);

/// Cell-centred trilinear resampling of each component onto new_shape, with
/// displacements rescaled by the per-axis grid ratio.
DeformationField resample_field(const DeformationField& field, Shape3 new_shape);

/// Throws DataError unless the field grid matches `target`.
void require_same_shape(const DeformationField& field, Shape3 target, const char* what);

} // namespace phasealign
