#include "phasealign/warp.hpp"

#include <cmath>

#include "phasealign/errors.hpp"
#include "phasealign/warp_kernels.hpp"

namespace phasealign {

DeformationField::DeformationField(Shape3 s, std::vector<float> data) : shape(s), u(std::move(data)) {
    if (static_cast<int64_t>(u.size()) != 3 * s.voxels())
        throw DataError("DeformationField: payload has " + std::to_string(u.size()) + " values, shape " +
                        to_string(s) + " needs " + std::to_string(3 * s.voxels()));
}

float DeformationField::max_norm() const {
    const int64_t n = shape.voxels();
    double best = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double a = u[i], b = u[n + i], c = u[2 * n + i];
        best = std::max(best, a * a + b * b + c * c);
    }
    return static_cast<float>(std::sqrt(best));
}

bool DeformationField::all_finite() const {
    for (float x : u)
        if (!std::isfinite(x)) return false;
    return true;
}

void require_same_shape(const DeformationField& field, Shape3 target, const char* what) {
    if (!(field.shape == target))
        throw DataError(std::string(what) + ": field grid " + to_string(field.shape) + " does not match " +
                        to_string(target));
}

namespace {

kernels::Boundary to_kernel(Border b) {
    return b == Border::clamp ? kernels::Boundary::clamp : kernels::Boundary::zero;
}

} // namespace

void warp_scalar(const DeformationField& field, std::span<const float> in, std::span<float> out, Border border) {
    const int64_t n = field.shape.voxels();
    if (static_cast<int64_t>(in.size()) != n || static_cast<int64_t>(out.size()) != n)
        throw DataError("warp_scalar: buffer size does not match field grid " + to_string(field.shape));
    kernels::warp_forward(in.data(), field.u.data(), out.data(), field.shape, to_kernel(border));
}

Volume warp_scalar(const DeformationField& field, const Volume& v, Border border) {
    require_same_shape(field, v.shape(), "warp_scalar");
    Volume out(v.shape(), 0.0f, v.frame());
    out.set_spacing(v.spacing());
    warp_scalar(field, v.data(), out.data(), border);
    return out;
}

DeformationField compose(const DeformationField& outer, const DeformationField& inner) {
    require_same_shape(outer, inner.shape, "compose");
    DeformationField out(inner.shape);
    for (int c = 0; c < 3; ++c) {
        auto dst = out.component(c);
        warp_scalar(inner, outer.component(c), dst, Border::clamp);
        auto in_c = inner.component(c);
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += in_c[i];
    }
    return out;
}

DeformationField resample_field(const DeformationField& field, Shape3 ns) {
    if (ns.d < 1 || ns.h < 1 || ns.w < 1) throw DataError("resample_field: target extents must be >= 1");
    if (ns == field.shape) return field;
    const Shape3 os = field.shape;
    const double rz = static_cast<double>(os.d) / ns.d;
    const double ry = static_cast<double>(os.h) / ns.h;
    const double rx = static_cast<double>(os.w) / ns.w;
    DeformationField out(ns);
    const int64_t n = ns.voxels();
    for (int64_t z = 0; z < ns.d; ++z)
        for (int64_t y = 0; y < ns.h; ++y)
            for (int64_t x = 0; x < ns.w; ++x) {
                const double pz = (z + 0.5) * rz - 0.5;
                const double py = (y + 0.5) * ry - 0.5;
                const double px = (x + 0.5) * rx - 0.5;
                const int64_t i = ns.index(z, y, x);
                for (int c = 0; c < 3; ++c) {
                    const double scale = c == 0 ? 1.0 / rz : (c == 1 ? 1.0 / ry : 1.0 / rx);
                    const float v = kernels::sample(field.component(c).data(), os, static_cast<float>(pz),
                                                    static_cast<float>(py), static_cast<float>(px),
                                                    kernels::Boundary::clamp);
                    out.u[c * n + i] = static_cast<float>(v * scale);
                }
            }
    return out;
}

} // namespace phasealign
