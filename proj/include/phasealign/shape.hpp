#pragma once

#include <cstdint>
#include <string>

namespace phasealign {

/// Grid extent in (depth, height, width) order. Width varies fastest in memory.
struct Shape3 {
    int64_t d = 0;
    int64_t h = 0;
    int64_t w = 0;

    int64_t voxels() const { return d * h * w; }
    int64_t index(int64_t z, int64_t y, int64_t x) const { return (z * h + y) * w + x; }
    bool contains(int64_t z, int64_t y, int64_t x) const {
        return z >= 0 && y >= 0 && x >= 0 && z < d && y < h && x < w;
    }
    int64_t operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
    bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& s);

} // namespace phasealign
