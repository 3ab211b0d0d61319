#pragma once

#include <vector>

#include "extremal/types.hpp"

namespace extremal {

/// Axis-aligned box sampled by an inclusive uniform grid, last axis fastest.
struct GridBox {
    Vector lo, hi;
    std::vector<int> nodes_per_axis; // >= 2 each
};

inline std::vector<long> grid_strides(const std::vector<int>& shape) {
    std::vector<long> strides(shape.size(), 1);
    for (int a = static_cast<int>(shape.size()) - 2; a >= 0; --a)
        strides[a] = strides[a + 1] * shape[a + 1];
    return strides;
}

inline long grid_count(const GridBox& box) {
    long count = 1;
    for (int n : box.nodes_per_axis) count *= n;
    return count;
}

inline Vector grid_node(const GridBox& box, const std::vector<long>& strides, long index) {
    const int dim = static_cast<int>(box.nodes_per_axis.size());
    Vector z(dim);
    for (int a = 0; a < dim; ++a) {
        const long ia = (index / strides[a]) % box.nodes_per_axis[a];
        const int last = box.nodes_per_axis[a] - 1;
        z[a] = last == 0 ? box.lo[a]
                         : box.lo[a] + (box.hi[a] - box.lo[a]) * static_cast<double>(ia) /
                                           static_cast<double>(last);
    }
    return z;
}

inline void validate_grid(const GridBox& box) {
    const int dim = static_cast<int>(box.nodes_per_axis.size());
    if (dim == 0 || box.lo.size() != dim || box.hi.size() != dim)
        throw DimensionMismatch("grid box dimensions disagree");
    for (int a = 0; a < dim; ++a)
        if (box.nodes_per_axis[a] < 2)
            throw ConfigError("grid box needs at least 2 nodes per axis");
}

} // namespace extremal
