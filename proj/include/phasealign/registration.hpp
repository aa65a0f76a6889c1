#pragma once

#include <filesystem>
#include <optional>

#include "phasealign/field.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

struct RegistrationConfig {
    int levels = 3;
    int iters_per_level = 30;
    double field_smooth_sigma = 2.0; // voxels at each pyramid level
    double update_clip = 2.0;        // max update norm per iteration, voxels
    double intensity_eps = 1e-3;

    void validate() const; // throws ConfigError
};

/// Multi-resolution Thirion demons. Returns the field that warps `moving`
/// onto `fixed` (backward convention, fixed grid).
DeformationField register_demons(const Volume& fixed, const Volume& moving,
                                 const RegistrationConfig& cfg = {});

double mean_squared_error(const Volume& a, const Volume& b);

/// Mean Euclidean distance between two fields' vectors.
double mean_displacement_error(const DeformationField& a, const DeformationField& b);

/// Loads a field produced elsewhere (.def3). When `target` is given the grid
/// must match it.
DeformationField load_external_field(const std::filesystem::path& path,
                                     std::optional<Shape3> target = std::nullopt);

} // namespace phasealign
