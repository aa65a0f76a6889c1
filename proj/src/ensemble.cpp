#include "phasealign/ensemble.hpp"

#include <array>

#include "phasealign/errors.hpp"

namespace phasealign {

LabelMap ProbabilityMap::argmax() const {
    LabelMap out(shape);
    const int64_t n = shape.voxels();
    auto d = out.data();
    for (int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c)
            if (p[c * n + i] > p[best * n + i]) best = c;
        d[i] = static_cast<uint8_t>(best);
    }
    return out;
}

LabelMap majority_vote(std::span<const LabelMap> preds, size_t fallback_index) {
    if (preds.size() < 2) throw DataError("majority_vote: need at least two predictions");
    if (fallback_index >= preds.size())
        throw DataError("majority_vote: fallback index " + std::to_string(fallback_index) + " out of range");
    const Shape3 s = preds[0].shape();
    for (const auto& p : preds)
        if (!(p.shape() == s)) throw DataError("majority_vote: prediction shapes differ");

    const size_t m = preds.size();
    const size_t quorum = (m + 1) / 2;
    LabelMap out(s);
    auto dst = out.data();
    for (size_t i = 0; i < dst.size(); ++i) {
        std::array<size_t, kNumClasses> votes{};
        for (const auto& p : preds) ++votes[p.data()[i]];
        int best = 0;
        bool unique = true;
        for (int c = 1; c < kNumClasses; ++c) {
            if (votes[c] > votes[best]) {
                best = c;
                unique = true;
            } else if (votes[c] == votes[best]) {
                unique = false;
            }
        }
        dst[i] = (unique && votes[best] >= quorum) ? static_cast<uint8_t>(best) : preds[fallback_index].data()[i];
    }
    return out;
}

LabelMap mean_probability_vote(std::span<const ProbabilityMap> probs) {
    if (probs.empty()) throw DataError("mean_probability_vote: no inputs");
    ProbabilityMap acc(probs[0].shape);
    for (const auto& p : probs) {
        if (!(p.shape == acc.shape) || p.p.size() != acc.p.size())
            throw DataError("mean_probability_vote: probability map shapes differ");
        for (size_t i = 0; i < acc.p.size(); ++i) acc.p[i] += p.p[i];
    }
    return acc.argmax();
}

} // namespace phasealign
