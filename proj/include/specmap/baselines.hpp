#pragma once

#include <cmath>
#include <thread>
#include <vector>

#include "specmap/errors.hpp"
#include "specmap/grid.hpp"

namespace specmap {

// Inverse-distance-weighted completion. Unmeasured voxels take the weighted
// mean of all measured samples with weights d^-p over block-center distances;
// measured voxels are copied through unchanged. Distances are normalized by
// the per-voxel minimum before powering so large p stays finite.
inline SpectrumMap idw_complete(const SpectrumMap& masked, const SampleMask& mask, double p,
                                int threads = 1) {
    if (!(masked.grid == mask.grid)) throw ValidationError("idw_complete: shape mismatch");
    if (!(p > 0.0)) throw ValidationError("idw_complete: p must be > 0");
    const GridSpec& grid = masked.grid;

    std::vector<int> sample_idx;
    for (int i = 0; i < grid.cell_count(); ++i)
        if (mask.measured[size_t(i)]) sample_idx.push_back(i);
    if (sample_idx.empty()) throw ValidationError("idw_complete: no measured voxels");

    std::vector<std::array<double, 3>> sample_pos(sample_idx.size());
    std::vector<double> sample_val(sample_idx.size());
    for (size_t s = 0; s < sample_idx.size(); ++s) {
        sample_pos[s] = grid.center_of(grid.coords_of(sample_idx[s]));
        sample_val[s] = masked.values_dbm[size_t(sample_idx[s])];
    }

    SpectrumMap out = masked;
    const auto complete_range = [&](int begin, int end) {
        std::vector<double> dist(sample_idx.size());
        for (int i = begin; i < end; ++i) {
            if (mask.measured[size_t(i)]) continue;
            const auto pos = grid.center_of(grid.coords_of(i));
            double dmin = std::numeric_limits<double>::infinity();
            for (size_t s = 0; s < sample_pos.size(); ++s) {
                const double dx = pos[0] - sample_pos[s][0];
                const double dy = pos[1] - sample_pos[s][1];
                const double dz = pos[2] - sample_pos[s][2];
                dist[s] = std::sqrt(dx * dx + dy * dy + dz * dz);
                dmin = std::min(dmin, dist[s]);
            }
            double num = 0.0, den = 0.0;
            for (size_t s = 0; s < sample_pos.size(); ++s) {
                const double w = std::pow(dmin / dist[s], p);
                num += w * sample_val[s];
                den += w;
            }
            out.values_dbm[size_t(i)] = num / den;
        }
    };

    const int n = grid.cell_count();
    if (threads <= 1) {
        complete_range(0, n);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (n + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int b = t * chunk, e = std::min(n, b + chunk);
            if (b < e) pool.emplace_back(complete_range, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

}  // namespace specmap
