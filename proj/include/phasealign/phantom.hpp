#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "phasealign/field.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

/// Synthetic two-phase abdomen: a textured background, an ellipsoidal
/// pancreas (class 1) with a duct (class 2) and optionally a hypo-attenuating
/// tumor (class 3). Intensities are in HU. Tumor contrast is the HU drop
/// relative to pancreas parenchyma in each phase.
struct PhantomConfig {
    Shape3 shape{64, 64, 64};
    int n_cases = 40;
    double tumor_rate = 0.7;
    double deform_sigma = 6.0; // voxels
    double deform_max = 4.0;   // voxels
    double venous_tumor_contrast = 20.0;
    double arterial_tumor_contrast = 40.0;
    double noise_std = 12.0;
    uint64_t seed = 0;

    void validate() const; // throws ConfigError
};

inline constexpr int64_t kMinPhantomExtent = 24;

/// Gaussian-smoothed zero-mean white noise rescaled so the largest vector
/// norm equals deform_max (zero field when deform_max is 0).
DeformationField smooth_random_field(Shape3 shape, double deform_sigma, double deform_max,
                                     std::mt19937_64& rng);

/// Fixed-point inverse: returns v with v(y) = -u(y + v(y)).
DeformationField invert_field(const DeformationField& u, int iterations = 30);

/// One case. true_field is the fixed-to-moving field a registration should
/// recover: warp_scalar(true_field, arterial) lines up with venous.
CasePair generate_case(const PhantomConfig& cfg, std::mt19937_64& rng, std::string case_id);

/// Deterministic per (cfg.seed, index).
CasePair generate_case(const PhantomConfig& cfg, int index);
std::string phantom_case_id(int index);

// ---- on-disk dataset ---------------------------------------------------------

struct ManifestEntry {
    std::string case_id;
    std::filesystem::path venous;
    std::filesystem::path arterial;
    std::filesystem::path label;
    std::filesystem::path field; // empty if absent
    bool has_tumor = false;
};

/// Writes <dir>/<case_id>_{venous,arterial,label}.vol3, <case_id>_field.def3
/// and <dir>/manifest.jsonl. Returns the manifest path.
std::filesystem::path write_phantom_dataset(const PhantomConfig& cfg, const std::filesystem::path& dir);

void write_case(const CasePair& c, const std::filesystem::path& dir, std::vector<ManifestEntry>& manifest);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

/// Paths in the returned entries are resolved against the manifest directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
CasePair load_case(const ManifestEntry& e);

} // namespace phasealign
