#include "phasealign/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "phasealign/errors.hpp"

namespace phasealign {

std::string to_string(const Shape3& s) {
    std::ostringstream os;
    os << "(" << s.d << "," << s.h << "," << s.w << ")";
    return os.str();
}

namespace {

void require_positive(const Shape3& s, const char* what) {
    if (s.d < 1 || s.h < 1 || s.w < 1)
        throw DataError(std::string(what) + ": extents must be >= 1, got " + to_string(s));
}

} // namespace

Volume::Volume(Shape3 shape, float fill, Phase frame)
    : shape_(shape), frame_(frame) {
    require_positive(shape, "Volume");
    data_.assign(static_cast<size_t>(shape.voxels()), fill);
}

Volume::Volume(Shape3 shape, std::vector<float> data, Spacing spacing, Phase frame)
    : shape_(shape), spacing_(spacing), frame_(frame), data_(std::move(data)) {
    require_positive(shape, "Volume");
    if (static_cast<int64_t>(data_.size()) != shape.voxels())
        throw DataError("Volume: payload has " + std::to_string(data_.size()) + " values, shape " +
                        to_string(shape) + " needs " + std::to_string(shape.voxels()));
}

bool Volume::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

LabelMap::LabelMap(Shape3 shape, uint8_t fill) : shape_(shape) {
    require_positive(shape, "LabelMap");
    data_.assign(static_cast<size_t>(shape.voxels()), fill);
}

LabelMap::LabelMap(Shape3 shape, std::vector<uint8_t> data, Spacing spacing)
    : shape_(shape), spacing_(spacing), data_(std::move(data)) {
    require_positive(shape, "LabelMap");
    if (static_cast<int64_t>(data_.size()) != shape.voxels())
        throw DataError("LabelMap: payload has " + std::to_string(data_.size()) + " values, shape " +
                        to_string(shape) + " needs " + std::to_string(shape.voxels()));
    for (uint8_t v : data_)
        if (v >= kNumClasses) throw DataError("LabelMap: label " + std::to_string(v) + " outside {0,1,2,3}");
}

int64_t LabelMap::count(uint8_t cls) const {
    return std::count(data_.begin(), data_.end(), cls);
}

Volume clip(const Volume& v, float lo, float hi) {
    if (!(lo < hi)) throw DataError("clip: requires lo < hi");
    if (!v.all_finite()) throw DataError("clip: volume contains non-finite values");
    Volume out = v;
    for (float& x : out.data()) x = std::clamp(x, lo, hi);
    return out;
}

Volume clip_and_normalize(const Volume& v, float lo, float hi) {
    Volume out = clip(v, lo, hi);
    auto d = out.data();
    double sum = 0.0;
    for (float x : d) sum += x;
    const double mean = sum / static_cast<double>(d.size());
    double ss = 0.0;
    for (float x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(d.size()));
    if (sd == 0.0 || !std::isfinite(sd)) {
        std::fill(d.begin(), d.end(), 0.0f);
        return out;
    }
    for (float& x : d) x = static_cast<float>((x - mean) / sd);
    return out;
}

namespace {

template <class Grid, class T>
Grid pad_grid(const Grid& v, Shape3 min_shape) {
    const Shape3 s = v.shape();
    const Shape3 p{std::max(s.d, min_shape.d), std::max(s.h, min_shape.h), std::max(s.w, min_shape.w)};
    if (p == s) return v;
    const int64_t oz = (p.d - s.d) / 2, oy = (p.h - s.h) / 2, ox = (p.w - s.w) / 2;
    std::vector<T> data(static_cast<size_t>(p.voxels()), T(0));
    auto src = v.data();
    for (int64_t z = 0; z < s.d; ++z)
        for (int64_t y = 0; y < s.h; ++y)
            std::copy_n(src.begin() + s.index(z, y, 0), s.w, data.begin() + p.index(z + oz, y + oy, ox));
    if constexpr (std::is_same_v<Grid, Volume>)
        return Volume(p, std::move(data), v.spacing(), v.frame());
    else
        return LabelMap(p, std::move(data), v.spacing());
}

template <class Grid, class T>
Grid crop_grid(const Grid& v, const CropBox& box) {
    const Shape3 s = v.shape();
    const Shape3 c = box.size;
    for (int a = 0; a < 3; ++a)
        if (box.origin[a] < 0 || box.origin[a] + c[a] > s[a])
            throw DataError("crop: box " + to_string(c) + " at axis " + std::to_string(a) + " origin " +
                            std::to_string(box.origin[a]) + " exceeds grid " + to_string(s));
    std::vector<T> data(static_cast<size_t>(c.voxels()));
    auto src = v.data();
    for (int64_t z = 0; z < c.d; ++z)
        for (int64_t y = 0; y < c.h; ++y)
            std::copy_n(src.begin() + s.index(z + box.origin[0], y + box.origin[1], box.origin[2]), c.w,
                        data.begin() + c.index(z, y, 0));
    if constexpr (std::is_same_v<Grid, Volume>)
        return Volume(c, std::move(data), v.spacing(), v.frame());
    else
        return LabelMap(c, std::move(data), v.spacing());
}

} // namespace

Volume pad_to(const Volume& v, Shape3 min_shape) { return pad_grid<Volume, float>(v, min_shape); }
LabelMap pad_to(const LabelMap& v, Shape3 min_shape) { return pad_grid<LabelMap, uint8_t>(v, min_shape); }
Volume crop(const Volume& v, const CropBox& box) { return crop_grid<Volume, float>(v, box); }
LabelMap crop(const LabelMap& v, const CropBox& box) { return crop_grid<LabelMap, uint8_t>(v, box); }

PatchPair crop_pair(const CasePair& c, Shape3 size, int jitter, std::mt19937_64& rng) {
    if (size.d < 1 || size.h < 1 || size.w < 1) throw DataError("crop_pair: patch extents must be >= 1");
    if (jitter < 0) throw DataError("crop_pair: jitter must be >= 0");
    if (!(c.label.shape() == c.venous.shape()))
        throw DataError("crop_pair: label shape " + to_string(c.label.shape()) + " differs from venous " +
                        to_string(c.venous.shape()));

    const Volume ven = pad_to(c.venous, size);
    const LabelMap lab = pad_to(c.label, size);
    const Volume art = pad_to(c.arterial, size);
    const Shape3 vs = ven.shape();
    const Shape3 as = art.shape();
    for (int a = 0; a < 3; ++a)
        if (size[a] > vs[a] || size[a] > as[a])
            throw DataError("crop_pair: patch " + to_string(size) + " larger than padded volume");

    PatchPair out;
    out.venous_box.size = size;
    out.arterial_box.size = size;
    for (int a = 0; a < 3; ++a) {
        std::uniform_int_distribution<int64_t> pick(0, vs[a] - size[a]);
        const int64_t o = pick(rng);
        // Offsets that keep the arterial box inside its grid.
        const int64_t lo = std::max<int64_t>(-jitter, -o);
        const int64_t hi = std::min<int64_t>(jitter, as[a] - size[a] - o);
        int64_t ao;
        if (lo <= hi) {
            std::uniform_int_distribution<int64_t> off(lo, hi);
            ao = o + off(rng);
        } else {
            ao = std::clamp<int64_t>(o, 0, as[a] - size[a]);
        }
        out.venous_box.origin[a] = o;
        out.arterial_box.origin[a] = ao;
    }
    out.venous = crop(ven, out.venous_box);
    out.label = crop(lab, out.venous_box);
    out.arterial = crop(art, out.arterial_box);
    return out;
}

} // namespace phasealign
