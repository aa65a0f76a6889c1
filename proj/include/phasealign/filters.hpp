#pragma once

#include <array>
#include <span>
#include <vector>

#include "phasealign/shape.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

/// Normalized 1D Gaussian taps with radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian smoothing in place, replicate border. sigma <= 0 is a no-op.
void gaussian_smooth(std::span<float> data, Shape3 shape, double sigma);
Volume gaussian_smooth(const Volume& v, double sigma);

/// 2x2x2 block average (odd extents keep the trailing voxel as its own block).
std::vector<float> downsample2(std::span<const float> data, Shape3 shape, Shape3* out_shape);
Shape3 halved(Shape3 s);

/// Central-difference gradient (one-sided at the border), voxel units,
/// component-major output of length 3*N.
std::vector<float> gradient(std::span<const float> data, Shape3 shape);

} // namespace phasealign
