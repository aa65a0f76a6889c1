#include "phasealign/filters.hpp"

#include <algorithm>
#include <cmath>

namespace phasealign {

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + r];
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace {

// One pass along `axis`, replicate border.
void smooth_axis(std::span<float> data, const Shape3& s, int axis, const std::vector<double>& k) {
    const int r = static_cast<int>(k.size() / 2);
    const int64_t len = s[axis];
    const int64_t stride = axis == 0 ? s.h * s.w : (axis == 1 ? s.w : 1);
    const int64_t outer_a = axis == 0 ? s.h : s.d;
    const int64_t outer_b = axis == 2 ? s.h : s.w;
    std::vector<double> line(len), out(len);
    for (int64_t a = 0; a < outer_a; ++a)
        for (int64_t b = 0; b < outer_b; ++b) {
            int64_t base;
            if (axis == 0) base = a * s.w + b;
            else if (axis == 1) base = a * s.h * s.w + b;
            else base = (a * s.h + b) * s.w;
            for (int64_t i = 0; i < len; ++i) line[i] = data[base + i * stride];
            for (int64_t i = 0; i < len; ++i) {
                double acc = 0.0;
                for (int j = -r; j <= r; ++j) {
                    const int64_t q = std::clamp<int64_t>(i + j, 0, len - 1);
                    acc += k[j + r] * line[q];
                }
                out[i] = acc;
            }
            for (int64_t i = 0; i < len; ++i) data[base + i * stride] = static_cast<float>(out[i]);
        }
}

} // namespace

void gaussian_smooth(std::span<float> data, Shape3 shape, double sigma) {
    if (sigma <= 0.0) return;
    const auto k = gaussian_kernel(sigma);
    for (int axis = 0; axis < 3; ++axis) smooth_axis(data, shape, axis, k);
}

Volume gaussian_smooth(const Volume& v, double sigma) {
    Volume out = v;
    gaussian_smooth(out.data(), out.shape(), sigma);
    return out;
}

Shape3 halved(Shape3 s) { return {(s.d + 1) / 2, (s.h + 1) / 2, (s.w + 1) / 2}; }

std::vector<float> downsample2(std::span<const float> data, Shape3 s, Shape3* out_shape) {
    const Shape3 o = halved(s);
    std::vector<float> out(static_cast<size_t>(o.voxels()));
    for (int64_t z = 0; z < o.d; ++z)
        for (int64_t y = 0; y < o.h; ++y)
            for (int64_t x = 0; x < o.w; ++x) {
                double acc = 0.0;
                int cnt = 0;
                for (int64_t dz = 0; dz < 2; ++dz)
                    for (int64_t dy = 0; dy < 2; ++dy)
                        for (int64_t dx = 0; dx < 2; ++dx) {
                            const int64_t zz = 2 * z + dz, yy = 2 * y + dy, xx = 2 * x + dx;
                            if (!s.contains(zz, yy, xx)) continue;
                            acc += data[s.index(zz, yy, xx)];
                            ++cnt;
                        }
                out[o.index(z, y, x)] = static_cast<float>(acc / cnt);
            }
    if (out_shape) *out_shape = o;
    return out;
}

std::vector<float> gradient(std::span<const float> data, Shape3 s) {
    const int64_t n = s.voxels();
    std::vector<float> g(static_cast<size_t>(3 * n), 0.0f);
    auto diff = [&](int64_t i, int64_t lo_ok, int64_t hi_ok, int64_t stride) -> float {
        if (lo_ok && hi_ok) return 0.5f * (data[i + stride] - data[i - stride]);
        if (hi_ok) return data[i + stride] - data[i];
        if (lo_ok) return data[i] - data[i - stride];
        return 0.0f;
    };
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w; ++x) {
                const int64_t i = s.index(z, y, x);
                g[i] = diff(i, z > 0, z + 1 < s.d, s.h * s.w);
                g[n + i] = diff(i, y > 0, y + 1 < s.h, s.w);
                g[2 * n + i] = diff(i, x > 0, x + 1 < s.w, 1);
            }
    return g;
}

} // namespace phasealign
