#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace specmap {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

// Received-power sentinel for voxels the UAV never measured.
inline constexpr double kEmptyDbm = -200.0;

// Linear power floor (watts) applied before dBm conversion so that log10
// never sees zero or a negative noise-perturbed sum.
inline constexpr double kLinearFloorW = 1e-15;

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

inline double watts_to_dbm(double w) {
    return 10.0 * std::log10(w < kLinearFloorW ? kLinearFloorW : w) + 30.0;
}

// Uniformly blocked cuboid monitoring space. Cell (a,b,c) indexes length,
// width and height; the flat layout is x-major, then y, then z.
struct GridSpec {
    std::array<double, 3> extent_m{160.0, 160.0, 120.0};  // L, W, H
    std::array<int, 3> blocks{64, 64, 24};                // N_L, N_W, N_H

    void validate() const {
        for (int i = 0; i < 3; ++i) {
            if (!(extent_m[i] > 0.0))
                throw std::invalid_argument("GridSpec: extents must be positive");
            if (blocks[i] < 1)
                throw std::invalid_argument("GridSpec: block counts must be >= 1");
        }
    }

    int cell_count() const { return blocks[0] * blocks[1] * blocks[2]; }

    std::array<double, 3> block_size_m() const {
        return {extent_m[0] / blocks[0], extent_m[1] / blocks[1], extent_m[2] / blocks[2]};
    }

    bool contains(const std::array<int, 3>& c) const {
        for (int i = 0; i < 3; ++i)
            if (c[i] < 0 || c[i] >= blocks[i]) return false;
        return true;
    }

    int index_of(int a, int b, int c) const { return (a * blocks[1] + b) * blocks[2] + c; }

    int index_of(const std::array<int, 3>& c) const { return index_of(c[0], c[1], c[2]); }

    std::array<int, 3> coords_of(int idx) const {
        const int c = idx % blocks[2];
        const int rest = idx / blocks[2];
        return {rest / blocks[1], rest % blocks[1], c};
    }

    // Center of cell (a,b,c) = ((a+0.5)*L/N_L, (b+0.5)*W/N_W, (c+0.5)*H/N_H).
    std::array<double, 3> center_of(const std::array<int, 3>& c) const {
        const auto bs = block_size_m();
        return {(c[0] + 0.5) * bs[0], (c[1] + 0.5) * bs[1], (c[2] + 0.5) * bs[2]};
    }

    double distance_m(const std::array<int, 3>& a, const std::array<int, 3>& b) const {
        const auto pa = center_of(a);
        const auto pb = center_of(b);
        const double dx = pa[0] - pb[0], dy = pa[1] - pb[1], dz = pa[2] - pb[2];
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }

    bool operator==(const GridSpec& o) const {
        return extent_m == o.extent_m && blocks == o.blocks;
    }
};

struct Transmitter {
    std::array<int, 3> cell{0, 0, 0};
    double power_dbm = 30.0;
};

struct PropagationParams {
    double freq_hz = 75e6;
    double antenna_gain = 1.0;     // G_t, linear
    double shadow_sigma_db = 0.0;  // std-dev of the per-(tx,voxel) dB fading term
    double noise_sigma_w = 0.0;    // std-dev of additive power noise, linear watts
    uint64_t rng_seed = 0;

    double wavelength_m() const { return kSpeedOfLight / freq_hz; }

    void validate() const {
        if (!(freq_hz > 0.0)) throw std::invalid_argument("PropagationParams: freq_hz must be > 0");
        if (!(antenna_gain > 0.0))
            throw std::invalid_argument("PropagationParams: antenna_gain must be > 0");
        if (shadow_sigma_db < 0.0)
            throw std::invalid_argument("PropagationParams: shadow_sigma_db must be >= 0");
        if (noise_sigma_w < 0.0)
            throw std::invalid_argument("PropagationParams: noise_sigma must be >= 0");
    }
};

// Dense received-power map in dBm, one scalar per block.
struct SpectrumMap {
    GridSpec grid;
    std::vector<double> values_dbm;

    SpectrumMap() = default;
    explicit SpectrumMap(const GridSpec& g, double fill = kEmptyDbm)
        : grid(g), values_dbm(size_t(g.cell_count()), fill) {}

    double& at(int a, int b, int c) { return values_dbm[size_t(grid.index_of(a, b, c))]; }
    double at(int a, int b, int c) const { return values_dbm[size_t(grid.index_of(a, b, c))]; }
    double& at(const std::array<int, 3>& p) { return at(p[0], p[1], p[2]); }
    double at(const std::array<int, 3>& p) const { return at(p[0], p[1], p[2]); }
};

struct SampleMask {
    GridSpec grid;
    std::vector<uint8_t> measured;
    double sampling_ratio = 0.0;

    SampleMask() = default;
    explicit SampleMask(const GridSpec& g, bool fill = false)
        : grid(g), measured(size_t(g.cell_count()), fill ? 1 : 0) {}

    int measured_count() const {
        int n = 0;
        for (uint8_t m : measured) n += m;
        return n;
    }
};

}  // namespace specmap
