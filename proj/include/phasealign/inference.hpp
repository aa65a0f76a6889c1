#pragma once

#include <vector>

#include "phasealign/ensemble.hpp"
#include "phasealign/models.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

struct PredictConfig {
    Shape3 patch{64, 64, 64};
    double overlap = 0.5;  // fraction of the patch shared by neighbouring windows
    bool gaussian = false; // weight windows by a centred Gaussian (sigma = patch / 8)

    void validate() const; // throws ConfigError
};

/// Window origins along one axis: 0, step, ..., with the last window flush
/// against the end. step = max(1, floor(patch * (1 - overlap))).
std::vector<int64_t> window_starts(int64_t size, int64_t patch, double overlap);

/// Sliding-window softmax averaged over overlapping windows. Inputs are
/// normalized volumes on the same grid; for early alignment the arterial
/// volume must already be warped. Volumes smaller than the patch are padded
/// and the result cropped back.
ProbabilityMap predict_probabilities(SegmentationNet& model, const Volume& venous, const Volume& arterial,
                                     const PredictConfig& cfg);

LabelMap predict(SegmentationNet& model, const Volume& venous, const Volume& arterial, const PredictConfig& cfg);

} // namespace phasealign
