#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "specmap/grid.hpp"
#include "specmap/propagation.hpp"

namespace specmap {

// Neighborhood of one transmitter (true or estimated) in which its signal is
// taken to dominate. `cells` is an axis-aligned box clipped to the grid;
// `exclusive_cells` removes every cell also covered by another region.
// `norm_count` is the number of (transmitter, cell) pairs in the box, i.e.
// the box size minus the transmitter's own cell; region loss terms divide
// by it so that one pair contributes its raw squared violation.
struct CorrelationRegion {
    int tx_index = 0;
    std::array<int, 3> tx_cell{0, 0, 0};
    std::array<int, 3> lo{0, 0, 0};
    std::array<int, 3> hi{0, 0, 0};  // inclusive
    std::vector<int> cells;
    std::vector<int> exclusive_cells;
    std::array<int, 3> nominal_blocks{0, 0, 0};
    int norm_count = 1;

    bool covers(const std::array<int, 3>& c) const {
        for (int i = 0; i < 3; ++i)
            if (c[i] < lo[i] || c[i] > hi[i]) return false;
        return true;
    }
};

inline std::vector<CorrelationRegion> build_regions(const std::vector<std::array<int, 3>>& tx_cells,
                                                    const GridSpec& grid, int radius_blocks) {
    if (tx_cells.empty()) throw std::invalid_argument("build_regions: need >= 1 transmitter");
    if (radius_blocks < 0) throw std::invalid_argument("build_regions: radius must be >= 0");

    std::vector<CorrelationRegion> regions(tx_cells.size());
    for (size_t i = 0; i < tx_cells.size(); ++i) {
        CorrelationRegion& r = regions[i];
        r.tx_index = int(i);
        r.tx_cell = tx_cells[i];
        for (int a = 0; a < 3; ++a) {
            r.lo[a] = std::max(0, tx_cells[i][size_t(a)] - radius_blocks);
            r.hi[a] = std::min(grid.blocks[size_t(a)] - 1, tx_cells[i][size_t(a)] + radius_blocks);
            r.nominal_blocks[a] = 2 * radius_blocks + 1;
        }
        for (int x = r.lo[0]; x <= r.hi[0]; ++x)
            for (int y = r.lo[1]; y <= r.hi[1]; ++y)
                for (int z = r.lo[2]; z <= r.hi[2]; ++z) r.cells.push_back(grid.index_of(x, y, z));
        r.norm_count = std::max(1, int(r.cells.size()) - 1);
    }
    for (size_t i = 0; i < regions.size(); ++i) {
        for (int idx : regions[i].cells) {
            const auto c = grid.coords_of(idx);
            bool overlapped = false;
            for (size_t j = 0; j < regions.size() && !overlapped; ++j)
                if (j != i && regions[j].covers(c)) overlapped = true;
            if (!overlapped) regions[i].exclusive_cells.push_back(idx);
        }
    }
    return regions;
}

inline std::vector<CorrelationRegion> build_regions(const std::vector<Transmitter>& txs,
                                                    const GridSpec& grid, int radius_blocks) {
    std::vector<std::array<int, 3>> cells;
    cells.reserve(txs.size());
    for (const auto& t : txs) cells.push_back(t.cell);
    return build_regions(cells, grid, radius_blocks);
}

inline void check_same_shape(const SpectrumMap& a, const SpectrumMap& b, const char* where) {
    if (!(a.grid == b.grid) || a.values_dbm.size() != b.values_dbm.size())
        throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

// Mean over all blocks of the squared dBm error.
inline double mse(const SpectrumMap& truth, const SpectrumMap& recon) {
    check_same_shape(truth, recon, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < truth.values_dbm.size(); ++i) {
        const double e = truth.values_dbm[i] - recon.values_dbm[i];
        acc += e * e;
    }
    return acc / double(truth.values_dbm.size());
}

namespace detail {

// One-sided propagation-direction violation. The ground truth says power
// drops from the transmitter toward x by t = Omega(x_T) - Omega(x); the
// reconstruction is penalized only where its own drop g runs against the
// direction of t. A reconstruction equal to the truth (or offset by any
// constant) scores zero; inverting a decay, as in the worked KMSE example,
// scores the full inversion magnitude squared.
inline double direction_violation(double truth_drop, double recon_drop) {
    if (truth_drop > 0.0) return std::max(0.0, -recon_drop);
    if (truth_drop < 0.0) return std::max(0.0, recon_drop);
    return 0.0;
}

}  // namespace detail

// Supervised knowledge loss over correlation regions built from the true
// transmitters. Exclusive cells compare the drop from the owning transmitter;
// overlap cells compare the drop from the superposed peak values of every
// covering transmitter. Each region is normalized by its pair count.
inline double knowledge_loss_supervised(const SpectrumMap& truth, const SpectrumMap& recon,
                                        const std::vector<CorrelationRegion>& regions) {
    check_same_shape(truth, recon, "knowledge_loss_supervised");
    const GridSpec& grid = truth.grid;
    double total = 0.0;
    for (const auto& region : regions) {
        const int peak_idx = grid.index_of(region.tx_cell);
        double acc = 0.0;
        for (int idx : region.exclusive_cells) {
            const double t = truth.values_dbm[size_t(peak_idx)] - truth.values_dbm[size_t(idx)];
            const double g = recon.values_dbm[size_t(peak_idx)] - recon.values_dbm[size_t(idx)];
            const double v = detail::direction_violation(t, g);
            acc += v * v;
        }
        for (int idx : region.cells) {
            const auto c = grid.coords_of(idx);
            bool exclusive = true;
            double t_peaks = 0.0, g_peaks = 0.0;
            for (const auto& other : regions) {
                if (other.tx_index != region.tx_index && other.covers(c)) exclusive = false;
                if (other.covers(c)) {
                    const int p = grid.index_of(other.tx_cell);
                    t_peaks += truth.values_dbm[size_t(p)];
                    g_peaks += recon.values_dbm[size_t(p)];
                }
            }
            if (exclusive) continue;
            const double t = t_peaks - truth.values_dbm[size_t(idx)];
            const double g = g_peaks - recon.values_dbm[size_t(idx)];
            const double v = detail::direction_violation(t, g);
            acc += v * v;
        }
        total += acc / double(region.norm_count);
    }
    return total;
}

inline double kmse(const SpectrumMap& truth, const SpectrumMap& recon,
                   const std::vector<CorrelationRegion>& regions) {
    return mse(truth, recon) + knowledge_loss_supervised(truth, recon, regions);
}

inline double rkmse(const SpectrumMap& truth, const SpectrumMap& recon,
                    const std::vector<CorrelationRegion>& regions) {
    return std::sqrt(kmse(truth, recon, regions));
}

// Semi-supervised data term: measured voxels at full weight, unmeasured
// scaled by the confidence factor kappa. Both sides squared.
inline double data_loss(const SpectrumMap& truth, const SpectrumMap& recon, const SampleMask& mask,
                        double kappa) {
    check_same_shape(truth, recon, "data_loss");
    if (!(kappa > 0.0) || !(kappa < 1.0))
        throw std::invalid_argument("data_loss: kappa must be in (0, 1)");
    double acc = 0.0;
    for (size_t i = 0; i < truth.values_dbm.size(); ++i) {
        const double e = truth.values_dbm[i] - recon.values_dbm[i];
        acc += mask.measured[i] ? e * e : kappa * e * e;
    }
    return acc / double(truth.values_dbm.size());
}

struct EstimatedTransmitters {
    struct Peak {
        std::array<int, 3> cell;
        double value_dbm;
    };
    std::vector<Peak> peaks;
    int varphi = 2;
    double zeta_db = 3.0;
};

// Reverse transmitter search: a cell is a peak when it strictly exceeds every
// neighbor within Chebyshev radius varphi AND its dB drop to each of those
// neighbors matches the shadow-free path loss within zeta.
inline EstimatedTransmitters estimate_transmitters(const SpectrumMap& recon, int varphi,
                                                   double zeta_db,
                                                   const PropagationParams& params) {
    if (varphi < 1) throw std::invalid_argument("estimate_transmitters: varphi must be >= 1");
    if (!(zeta_db > 0.0)) throw std::invalid_argument("estimate_transmitters: zeta must be > 0");

    const GridSpec& grid = recon.grid;
    EstimatedTransmitters est;
    est.varphi = varphi;
    est.zeta_db = zeta_db;

    for (int idx = 0; idx < grid.cell_count(); ++idx) {
        const auto c = grid.coords_of(idx);
        const double v = recon.values_dbm[size_t(idx)];
        bool is_peak = true;
        for (int dx = -varphi; dx <= varphi && is_peak; ++dx)
            for (int dy = -varphi; dy <= varphi && is_peak; ++dy)
                for (int dz = -varphi; dz <= varphi && is_peak; ++dz) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    const std::array<int, 3> nb{c[0] + dx, c[1] + dy, c[2] + dz};
                    if (!grid.contains(nb)) continue;
                    const double nv = recon.at(nb);
                    if (!(v > nv)) {
                        is_peak = false;
                        break;
                    }
                    const double drop = v - nv;
                    const double pl = path_loss_db(grid.distance_m(c, nb), params);
                    if (std::abs(drop - pl) >= zeta_db) {
                        is_peak = false;
                        break;
                    }
                }
        if (is_peak) est.peaks.push_back({c, v});
    }
    std::sort(est.peaks.begin(), est.peaks.end(),
              [](const auto& a, const auto& b) { return a.value_dbm > b.value_dbm; });
    return est;
}

struct UnsupervisedLossResult {
    double value = 0.0;
    bool no_peaks = false;
};

// Unsupervised knowledge loss over regions built around the estimated peaks.
// Needs no ground truth: the reconstruction's own drop from each peak is
// compared against the propagation model's path loss.
inline UnsupervisedLossResult knowledge_loss_unsupervised(
    const SpectrumMap& recon, const EstimatedTransmitters& est,
    const std::vector<CorrelationRegion>& regions, const PropagationParams& params) {
    if (est.peaks.empty()) return {0.0, true};
    if (regions.size() != est.peaks.size())
        throw std::invalid_argument("knowledge_loss_unsupervised: regions/peaks mismatch");

    const GridSpec& grid = recon.grid;
    double total = 0.0;
    for (const auto& region : regions) {
        const auto peak_cell = region.tx_cell;
        const int peak_idx = grid.index_of(peak_cell);
        double acc = 0.0;
        for (int idx : region.exclusive_cells) {
            if (idx == peak_idx) continue;
            const auto c = grid.coords_of(idx);
            const double pl = path_loss_db(grid.distance_m(peak_cell, c), params);
            const double r =
                recon.values_dbm[size_t(peak_idx)] - recon.values_dbm[size_t(idx)] - pl;
            acc += r * r;
        }
        for (int idx : region.cells) {
            const auto c = grid.coords_of(idx);
            bool exclusive = true;
            double g_peaks = 0.0, pl_sum = 0.0;
            bool at_peak = false;
            for (const auto& other : regions) {
                if (other.tx_index != region.tx_index && other.covers(c)) exclusive = false;
                if (other.covers(c)) {
                    const int p = grid.index_of(other.tx_cell);
                    g_peaks += recon.values_dbm[size_t(p)];
                    if (p == idx)
                        at_peak = true;
                    else
                        pl_sum += path_loss_db(grid.distance_m(other.tx_cell, c), params);
                }
            }
            if (exclusive || at_peak) continue;
            const double r = (g_peaks - recon.values_dbm[size_t(idx)]) - pl_sum;
            acc += r * r;
        }
        total += acc / double(region.norm_count);
    }
    return {total, false};
}

struct MetricReport {
    double mse = 0.0;
    double kmse = 0.0;
    double rkmse = 0.0;
    double knowledge_supervised = 0.0;
    double knowledge_unsupervised = 0.0;
    int n_estimated_tx = 0;

    nlohmann::json to_json() const {
        return {{"mse", mse},
                {"kmse", kmse},
                {"rkmse", rkmse},
                {"knowledge_supervised", knowledge_supervised},
                {"knowledge_unsupervised", knowledge_unsupervised},
                {"n_estimated_tx", n_estimated_tx}};
    }
};

// Full physics-aware score of a reconstruction against its ground truth,
// with correlation regions built from the true transmitters.
inline MetricReport score_reconstruction(const SpectrumMap& truth, const SpectrumMap& recon,
                                         const std::vector<Transmitter>& txs, int region_radius,
                                         int varphi, double zeta_db,
                                         const PropagationParams& params) {
    MetricReport rep;
    const auto regions = build_regions(txs, truth.grid, region_radius);
    rep.mse = mse(truth, recon);
    rep.knowledge_supervised = knowledge_loss_supervised(truth, recon, regions);
    rep.kmse = rep.mse + rep.knowledge_supervised;
    rep.rkmse = std::sqrt(rep.kmse);
    const auto est = estimate_transmitters(recon, varphi, zeta_db, params);
    rep.n_estimated_tx = int(est.peaks.size());
    if (!est.peaks.empty()) {
        std::vector<std::array<int, 3>> peak_cells;
        for (const auto& p : est.peaks) peak_cells.push_back(p.cell);
        const auto est_regions = build_regions(peak_cells, truth.grid, region_radius);
        rep.knowledge_unsupervised =
            knowledge_loss_unsupervised(recon, est, est_regions, params).value;
    }
    return rep;
}

}  // namespace specmap
