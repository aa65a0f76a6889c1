#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "phasealign/field.hpp"
#include "phasealign/shape.hpp"

namespace phasealign {


struct Spacing {
    float d = 1.0f;
    float h = 1.0f;
    float w = 1.0f;
    bool operator==(const Spacing&) const = default;
};

enum class Phase { venous, arterial };

class Volume {
public:
    Volume() = default;
    explicit Volume(Shape3 shape, float fill = 0.0f, Phase frame = Phase::venous);
    Volume(Shape3 shape, std::vector<float> data, Spacing spacing = {}, Phase frame = Phase::venous);

    const Shape3& shape() const { return shape_; }
    const Spacing& spacing() const { return spacing_; }
    Phase frame() const { return frame_; }
    void set_spacing(Spacing s) { spacing_ = s; }
    void set_frame(Phase p) { frame_ = p; }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    float at(int64_t z, int64_t y, int64_t x) const { return data_[shape_.index(z, y, x)]; }
    float& at(int64_t z, int64_t y, int64_t x) { return data_[shape_.index(z, y, x)]; }

    bool all_finite() const;

private:
    Shape3 shape_{};
    Spacing spacing_{};
    Phase frame_ = Phase::venous;
    std::vector<float> data_;
};

inline constexpr int kNumClasses = 4;
enum Label : uint8_t { kBackground = 0, kPancreas = 1, kDuct = 2, kTumor = 3 };

/// Voxel-wise class map over {0,1,2,3}.
class LabelMap {
public:
    LabelMap() = default;
    explicit LabelMap(Shape3 shape, uint8_t fill = kBackground);
    LabelMap(Shape3 shape, std::vector<uint8_t> data, Spacing spacing = {});

    const Shape3& shape() const { return shape_; }
    const Spacing& spacing() const { return spacing_; }
    void set_spacing(Spacing s) { spacing_ = s; }

    std::span<const uint8_t> data() const { return data_; }
    std::span<uint8_t> data() { return data_; }

    uint8_t at(int64_t z, int64_t y, int64_t x) const { return data_[shape_.index(z, y, x)]; }
    uint8_t& at(int64_t z, int64_t y, int64_t x) { return data_[shape_.index(z, y, x)]; }

    int64_t count(uint8_t cls) const;
    bool operator==(const LabelMap& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape3 shape_{};
    Spacing spacing_{};
    std::vector<uint8_t> data_;
};

/// One subject: labelled venous volume plus the unaligned arterial volume.
struct CasePair {
    Volume venous;
    Volume arterial;
    LabelMap label;
    std::string case_id;
    std::optional<DeformationField> true_field; // phantom cases only
};

// ---- preprocessing ----------------------------------------------------------

/// Clamp every voxel into [lo, hi]. Throws DataError on non-finite input.
Volume clip(const Volume& v, float lo, float hi);

/// Clip to [lo, hi], then z-score with the clipped volume's own statistics.
/// A constant (zero-variance) volume maps to all zeros.
Volume clip_and_normalize(const Volume& v, float lo, float hi);

inline constexpr float kHuLow = -100.0f;
inline constexpr float kHuHigh = 240.0f;

// ---- patch extraction -------------------------------------------------------

struct CropBox {
    std::array<int64_t, 3> origin{};
    Shape3 size{};
};

struct PatchPair {
    Volume venous;
    LabelMap label;
    Volume arterial;
    CropBox venous_box;   // in padded venous coordinates
    CropBox arterial_box; // in padded arterial coordinates
};

inline constexpr int kDefaultJitter = 4;

/// Extract a training patch at a random position in the venous grid and at
/// roughly the same place (uniform per-axis offset within +-jitter) in the
/// arterial grid. Volumes smaller than the patch are zero padded symmetrically.
PatchPair crop_pair(const CasePair& c, Shape3 size, int jitter, std::mt19937_64& rng);

/// Symmetric zero padding so that every axis is at least `min_shape`.
Volume pad_to(const Volume& v, Shape3 min_shape);
LabelMap pad_to(const LabelMap& v, Shape3 min_shape);

Volume crop(const Volume& v, const CropBox& box);
LabelMap crop(const LabelMap& v, const CropBox& box);

} // namespace phasealign
