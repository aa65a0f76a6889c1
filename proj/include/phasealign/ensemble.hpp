#pragma once

#include <span>
#include <vector>

#include "phasealign/volume.hpp"

namespace phasealign {

/// Per-voxel class probabilities, class-major (kNumClasses x N).
struct ProbabilityMap {
    Shape3 shape{};
    std::vector<float> p;

    ProbabilityMap() = default;
    explicit ProbabilityMap(Shape3 s) : shape(s), p(static_cast<size_t>(kNumClasses * s.voxels()), 0.0f) {}
    LabelMap argmax() const;
};

/// Label held by at least ceil(m/2) voters; otherwise preds[fallback_index].
LabelMap majority_vote(std::span<const LabelMap> preds, size_t fallback_index);

/// Average the probability maps, then argmax.
LabelMap mean_probability_vote(std::span<const ProbabilityMap> probs);

} // namespace phasealign
