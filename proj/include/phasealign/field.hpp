#pragma once

#include <span>
#include <vector>

#include "phasealign/shape.hpp"

namespace phasealign {

/// Dense displacement field in voxel units, stored component-major
/// (all depth offsets, then height, then width). Warping is backward:
/// out(x) = in(x + u(x)).
struct DeformationField {
    Shape3 shape{};
    std::vector<float> u;

    DeformationField() = default;
    explicit DeformationField(Shape3 s) : shape(s), u(static_cast<size_t>(3 * s.voxels()), 0.0f) {}
    DeformationField(Shape3 s, std::vector<float> data);

    std::span<float> component(int c) {
        return {u.data() + c * shape.voxels(), static_cast<size_t>(shape.voxels())};
    }
    std::span<const float> component(int c) const {
        return {u.data() + c * shape.voxels(), static_cast<size_t>(shape.voxels())};
    }

    float max_norm() const;
    bool all_finite() const;
    bool operator==(const DeformationField&) const = default;
};

} // namespace phasealign
