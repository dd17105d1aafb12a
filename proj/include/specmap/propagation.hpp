#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "specmap/grid.hpp"
#include "specmap/rng.hpp"

namespace specmap {

// Log-distance path loss in dB between two points d_m apart:
//   PL = -10*log10( G_t * lambda^2 / (4*pi*d)^2 ) + shadow
inline double path_loss_db(double d_m, const PropagationParams& params, double shadow_db = 0.0) {
    if (!(d_m > 0.0)) throw std::domain_error("path_loss_db: distance must be > 0");
    const double lambda = params.wavelength_m();
    const double denom = 4.0 * std::numbers::pi * d_m;
    return -10.0 * std::log10(params.antenna_gain * lambda * lambda / (denom * denom)) + shadow_db;
}

// Propagation operator phi = 10^(-PL/10); scales linear transmit power down
// to linear received power.
inline double propagation_gain(double d_m, const PropagationParams& params,
                               double shadow_db = 0.0) {
    return std::pow(10.0, -path_loss_db(d_m, params, shadow_db) / 10.0);
}

// Received power per block: linear superposition of every transmitter's
// contribution plus additive power noise, floored and stored in dBm.
// At a transmitter's own cell its contribution is its full transmit power
// (phi = 1), so a lone noise-free transmitter peaks at exactly power_dbm.
inline SpectrumMap synthesize_map(const GridSpec& grid, const std::vector<Transmitter>& txs,
                                  const PropagationParams& params) {
    grid.validate();
    params.validate();
    if (txs.empty()) throw std::invalid_argument("synthesize_map: need at least one transmitter");
    for (size_t i = 0; i < txs.size(); ++i) {
        if (!grid.contains(txs[i].cell))
            throw std::invalid_argument("synthesize_map: transmitter cell out of grid bounds");
        for (size_t j = i + 1; j < txs.size(); ++j)
            if (txs[i].cell == txs[j].cell)
                throw std::invalid_argument("synthesize_map: duplicate transmitter cells");
    }

    const int n = grid.cell_count();
    std::vector<double> linear(size_t(n), 0.0);

    for (size_t t = 0; t < txs.size(); ++t) {
        const double p_lin = dbm_to_watts(txs[t].power_dbm);
        Rng shadow_rng = Rng::derive(params.rng_seed, 0x5ad0u + t);
        for (int idx = 0; idx < n; ++idx) {
            const double shadow =
                params.shadow_sigma_db > 0.0 ? params.shadow_sigma_db * shadow_rng.next_normal()
                                             : 0.0;
            const auto cell = grid.coords_of(idx);
            if (cell == txs[t].cell) {
                linear[size_t(idx)] += p_lin;
            } else {
                const double d = grid.distance_m(cell, txs[t].cell);
                linear[size_t(idx)] += propagation_gain(d, params, shadow) * p_lin;
            }
        }
    }

    if (params.noise_sigma_w > 0.0) {
        Rng noise_rng = Rng::derive(params.rng_seed, 0xa015eu);
        for (int idx = 0; idx < n; ++idx)
            linear[size_t(idx)] += params.noise_sigma_w * noise_rng.next_normal();
    }

    SpectrumMap out(grid);
    for (int idx = 0; idx < n; ++idx) out.values_dbm[size_t(idx)] = watts_to_dbm(linear[size_t(idx)]);
    return out;
}

}  // namespace specmap
