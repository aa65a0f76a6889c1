#pragma once

// Trilinear backward-warp kernels shared by the image-space path (float) and
// the autograd feature path (float/double). Field layout is component-major:
// field[c * N + i] is the displacement along axis c (0 = depth, 1 = height,
// 2 = width) at voxel i.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "phasealign/shape.hpp"

namespace phasealign::kernels {

enum class Boundary { clamp, zero };

template <class T>
struct AxisTaps {
    int64_t i0 = 0;
    int64_t i1 = 0;
    T w0 = 0;
    T w1 = 0;
    bool valid0 = true;
    bool valid1 = true;
    bool clamped = false; // coordinate left [0, n-1]; derivative is zero there
};

template <class T>
inline AxisTaps<T> axis_taps(T p, int64_t n, Boundary b) {
    AxisTaps<T> t;
    if (b == Boundary::clamp) {
        const T hi = static_cast<T>(n - 1);
        if (p < T(0) || p > hi) {
            t.clamped = true;
            p = std::clamp(p, T(0), hi);
        }
        const T fl = std::floor(p);
        t.i0 = static_cast<int64_t>(fl);
        t.i1 = std::min<int64_t>(t.i0 + 1, n - 1);
        t.w1 = p - fl;
        t.w0 = T(1) - t.w1;
    } else {
        const T fl = std::floor(p);
        t.i0 = static_cast<int64_t>(fl);
        t.i1 = t.i0 + 1;
        t.w1 = p - fl;
        t.w0 = T(1) - t.w1;
        t.valid0 = t.i0 >= 0 && t.i0 < n;
        t.valid1 = t.i1 >= 0 && t.i1 < n;
        if (!t.valid0) t.i0 = 0;
        if (!t.valid1) t.i1 = 0;
    }
    return t;
}

template <class T>
inline T sample(const T* src, const Shape3& s, T pz, T py, T px, Boundary b) {
    const auto tz = axis_taps(pz, s.d, b);
    const auto ty = axis_taps(py, s.h, b);
    const auto tx = axis_taps(px, s.w, b);
    T acc = 0;
    for (int cz = 0; cz < 2; ++cz) {
        const bool vz = cz ? tz.valid1 : tz.valid0;
        if (!vz) continue;
        const int64_t iz = cz ? tz.i1 : tz.i0;
        const T wz = cz ? tz.w1 : tz.w0;
        for (int cy = 0; cy < 2; ++cy) {
            const bool vy = cy ? ty.valid1 : ty.valid0;
            if (!vy) continue;
            const int64_t iy = cy ? ty.i1 : ty.i0;
            const T wy = cy ? ty.w1 : ty.w0;
            const T* row = src + (iz * s.h + iy) * s.w;
            if (tx.valid0) acc += wz * wy * tx.w0 * row[tx.i0];
            if (tx.valid1) acc += wz * wy * tx.w1 * row[tx.i1];
        }
    }
    return acc;
}

/// dst(x) = src(x + u(x)) for one channel.
template <class T>
void warp_forward(const T* src, const T* field, T* dst, const Shape3& s, Boundary b) {
    const int64_t n = s.voxels();
    const T* uz = field;
    const T* uy = field + n;
    const T* ux = field + 2 * n;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const int64_t i = s.index(z, y, x);
                dst[i] = sample(src, s, static_cast<T>(z) + uz[i], static_cast<T>(y) + uy[i],
                                static_cast<T>(x) + ux[i], b);
            }
}

/// Accumulates d(loss)/d(src) and d(loss)/d(field) for one channel given
/// d(loss)/d(dst). Either output may be null.
template <class T>
void warp_backward(const T* src, const T* field, const T* grad_dst, T* grad_src, T* grad_field,
                   const Shape3& s, Boundary b) {
    const int64_t n = s.voxels();
    const T* uz = field;
    const T* uy = field + n;
    const T* ux = field + 2 * n;
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const int64_t i = s.index(z, y, x);
                const T g = grad_dst[i];
                if (g == T(0)) continue;
                const auto tz = axis_taps(static_cast<T>(z) + uz[i], s.d, b);
                const auto ty = axis_taps(static_cast<T>(y) + uy[i], s.h, b);
                const auto tx = axis_taps(static_cast<T>(x) + ux[i], s.w, b);
                T dz = 0, dy = 0, dx = 0;
                for (int cz = 0; cz < 2; ++cz) {
                    if (!(cz ? tz.valid1 : tz.valid0)) continue;
                    const int64_t iz = cz ? tz.i1 : tz.i0;
                    const T wz = cz ? tz.w1 : tz.w0;
                    const T sz = cz ? T(1) : T(-1);
                    for (int cy = 0; cy < 2; ++cy) {
                        if (!(cy ? ty.valid1 : ty.valid0)) continue;
                        const int64_t iy = cy ? ty.i1 : ty.i0;
                        const T wy = cy ? ty.w1 : ty.w0;
                        const T sy = cy ? T(1) : T(-1);
                        for (int cx = 0; cx < 2; ++cx) {
                            if (!(cx ? tx.valid1 : tx.valid0)) continue;
                            const int64_t ix = cx ? tx.i1 : tx.i0;
                            const T wx = cx ? tx.w1 : tx.w0;
                            const T sx = cx ? T(1) : T(-1);
                            const int64_t j = (iz * s.h + iy) * s.w + ix;
                            if (grad_src) grad_src[j] += g * wz * wy * wx;
                            if (grad_field) {
                                const T v = src[j];
                                dz += sz * wy * wx * v;
                                dy += sy * wz * wx * v;
                                dx += sx * wz * wy * v;
                            }
                        }
                    }
                }
                if (grad_field) {
                    if (!tz.clamped) grad_field[i] += g * dz;
                    if (!ty.clamped) grad_field[n + i] += g * dy;
                    if (!tx.clamped) grad_field[2 * n + i] += g * dx;
                }
            }
}

} // namespace phasealign::kernels
