#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "specmap/grid.hpp"
#include "specmap/rng.hpp"

namespace specmap {

enum class MaskMode { Trajectory, Uniform };

inline std::string to_string(MaskMode m) {
    return m == MaskMode::Trajectory ? "trajectory" : "uniform";
}

inline MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "trajectory") return MaskMode::Trajectory;
    if (s == "uniform") return MaskMode::Uniform;
    throw std::invalid_argument("unknown mask mode: " + s);
}

// UAV sampling mask at ratio tau. Trajectory mode marks voxels along random
// horizontal axis-aligned flight segments at random altitudes until the
// target count round(tau * N_B) is reached; a segment may stop mid-way so
// the count is exact. Uniform mode picks a random subset of the same size.
inline SampleMask generate_mask(const GridSpec& grid, double tau, MaskMode mode, uint64_t seed) {
    grid.validate();
    if (!(tau > 0.0) || tau > 1.0)
        throw std::invalid_argument("generate_mask: tau must be in (0, 1]");

    const int n = grid.cell_count();
    const int target = int(std::llround(tau * double(n)));
    SampleMask mask(grid);
    mask.sampling_ratio = tau;
    if (target == 0) return mask;

    Rng rng = Rng::derive(seed, 0x3a5cu);
    int marked = 0;

    if (mode == MaskMode::Uniform) {
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[size_t(i)] = i;
        for (int i = 0; i < target; ++i) {
            const int j = i + int(rng.next_below(uint64_t(n - i)));
            std::swap(order[size_t(i)], order[size_t(j)]);
            mask.measured[size_t(order[size_t(i)])] = 1;
        }
        return mask;
    }

    const auto mark_segment = [&](int axis, std::array<int, 3> start, int len) {
        std::array<int, 3> cur = start;
        for (int s = 0; s < len && marked < target; ++s) {
            cur[size_t(axis)] = start[size_t(axis)] + s;
            if (cur[size_t(axis)] >= grid.blocks[size_t(axis)]) break;
            uint8_t& cell = mask.measured[size_t(grid.index_of(cur))];
            if (!cell) {
                cell = 1;
                ++marked;
            }
        }
    };

    int stalls = 0;
    while (marked < target) {
        const int before = marked;
        const int axis = int(rng.next_below(2));  // flight along x or y
        std::array<int, 3> start;
        start[0] = int(rng.next_below(uint64_t(grid.blocks[0])));
        start[1] = int(rng.next_below(uint64_t(grid.blocks[1])));
        start[2] = int(rng.next_below(uint64_t(grid.blocks[2])));  // altitude
        const int dim = grid.blocks[size_t(axis)];
        const int len = int(rng.next_int(std::min(4, dim), dim));
        start[size_t(axis)] = int(rng.next_below(uint64_t(dim)));
        mark_segment(axis, start, len);

        if (marked == before) {
            // segment fell entirely on already-measured cells; after a run of
            // these, route the next segment through a known unmeasured cell
            if (++stalls >= 64) {
                for (int idx = 0; idx < n && marked < target; ++idx) {
                    if (mask.measured[size_t(idx)]) continue;
                    auto cell = grid.coords_of(idx);
                    const int a2 = int(rng.next_below(2));
                    cell[size_t(a2)] = 0;
                    mark_segment(a2, cell, grid.blocks[size_t(a2)]);
                    break;
                }
                stalls = 0;
            }
        } else {
            stalls = 0;
        }
    }
    return mask;
}

// Keep measured voxels, blank the rest with the EMPTY sentinel.
inline SpectrumMap apply_mask(const SpectrumMap& map, const SampleMask& mask) {
    if (!(map.grid == mask.grid) || map.values_dbm.size() != mask.measured.size())
        throw std::invalid_argument("apply_mask: map and mask shapes differ");
    SpectrumMap out = map;
    for (size_t i = 0; i < out.values_dbm.size(); ++i)
        if (!mask.measured[i]) out.values_dbm[i] = kEmptyDbm;
    return out;
}

}  // namespace specmap
