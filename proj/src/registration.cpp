#include "phasealign/registration.hpp"

#include <cmath>

#include "phasealign/errors.hpp"
#include "phasealign/filters.hpp"
#include "phasealign/io.hpp"
#include "phasealign/warp.hpp"

namespace phasealign {

void RegistrationConfig::validate() const {
    if (levels < 1) throw ConfigError("registration.levels: must be >= 1");
    if (iters_per_level < 0) throw ConfigError("registration.iters_per_level: must be >= 0");
    if (!(field_smooth_sigma > 0.0)) throw ConfigError("registration.field_smooth_sigma: must be > 0");
    if (!(update_clip > 0.0)) throw ConfigError("registration.update_clip: must be > 0");
    if (!(intensity_eps >= 0.0)) throw ConfigError("registration.intensity_eps: must be >= 0");
}

namespace {

// Images are lightly smoothed at every level so the fixed-image gradient is
// not dominated by voxel noise.
constexpr double kImagePresmoothSigma = 1.0;

struct Level {
    Shape3 shape;
    std::vector<float> fixed;
    std::vector<float> moving;
};

std::vector<Level> build_pyramid(const Volume& fixed, const Volume& moving, int levels) {
    std::vector<Level> pyr;
    pyr.push_back({fixed.shape(), {fixed.data().begin(), fixed.data().end()},
                   {moving.data().begin(), moving.data().end()}});
    for (int l = 1; l < levels; ++l) {
        const Level& prev = pyr.back();
        Level next;
        next.fixed = downsample2(prev.fixed, prev.shape, &next.shape);
        next.moving = downsample2(prev.moving, prev.shape, nullptr);
        pyr.push_back(std::move(next));
    }
    for (auto& lv : pyr) {
        gaussian_smooth(lv.fixed, lv.shape, kImagePresmoothSigma);
        gaussian_smooth(lv.moving, lv.shape, kImagePresmoothSigma);
    }
    return pyr;
}

void demons_level(const Level& lv, DeformationField& field, const RegistrationConfig& cfg) {
    const Shape3 s = lv.shape;
    const int64_t n = s.voxels();
    const std::vector<float> grad = gradient(lv.fixed, s);
    std::vector<float> warped(static_cast<size_t>(n));
    const double clip2 = cfg.update_clip * cfg.update_clip;
    for (int it = 0; it < cfg.iters_per_level; ++it) {
        warp_scalar(field, lv.moving, warped, Border::clamp);
        for (int64_t i = 0; i < n; ++i) {
            const double diff = static_cast<double>(lv.fixed[i]) - warped[i];
            const double gz = grad[i], gy = grad[n + i], gx = grad[2 * n + i];
            const double denom = gz * gz + gy * gy + gx * gx + diff * diff + cfg.intensity_eps;
            if (denom <= 0.0) continue;
            double uz = diff * gz / denom, uy = diff * gy / denom, ux = diff * gx / denom;
            const double norm2 = uz * uz + uy * uy + ux * ux;
            if (norm2 > clip2) {
                const double k = cfg.update_clip / std::sqrt(norm2);
                uz *= k;
                uy *= k;
                ux *= k;
            }
            field.u[i] += static_cast<float>(uz);
            field.u[n + i] += static_cast<float>(uy);
            field.u[2 * n + i] += static_cast<float>(ux);
        }
        for (int c = 0; c < 3; ++c) gaussian_smooth(field.component(c), s, cfg.field_smooth_sigma);
    }
}

} // namespace

DeformationField register_demons(const Volume& fixed, const Volume& moving, const RegistrationConfig& cfg) {
    cfg.validate();
    if (!(fixed.shape() == moving.shape()))
        throw DataError("register: fixed " + to_string(fixed.shape()) + " and moving " + to_string(moving.shape()) +
                        " grids differ");
    if (!fixed.all_finite() || !moving.all_finite()) throw DataError("register: non-finite intensities");

    const auto pyr = build_pyramid(fixed, moving, cfg.levels);
    DeformationField field(pyr.back().shape);
    for (int l = static_cast<int>(pyr.size()) - 1; l >= 0; --l) {
        if (!(field.shape == pyr[l].shape)) field = resample_field(field, pyr[l].shape);
        demons_level(pyr[l], field, cfg);
    }
    if (!field.all_finite()) throw NumericError("register: field diverged");
    return field;
}

double mean_squared_error(const Volume& a, const Volume& b) {
    if (!(a.shape() == b.shape())) throw DataError("mean_squared_error: shape mismatch");
    double acc = 0.0;
    auto x = a.data();
    auto y = b.data();
    for (size_t i = 0; i < x.size(); ++i) acc += (double(x[i]) - y[i]) * (double(x[i]) - y[i]);
    return acc / static_cast<double>(x.size());
}

double mean_displacement_error(const DeformationField& a, const DeformationField& b) {
    require_same_shape(a, b.shape, "mean_displacement_error");
    const int64_t n = a.shape.voxels();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = double(a.u[c * n + i]) - b.u[c * n + i];
            s += d * d;
        }
        acc += std::sqrt(s);
    }
    return acc / static_cast<double>(n);
}

DeformationField load_external_field(const std::filesystem::path& path, std::optional<Shape3> target) {
    DeformationField f = read_field(path);
    if (!f.all_finite()) throw DataError(path.string() + ": field contains non-finite displacements");
    if (target) require_same_shape(f, *target, path.string().c_str());
    return f;
}

} // namespace phasealign
