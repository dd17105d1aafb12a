#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "specmap/autodiff.hpp"
#include "specmap/channel.hpp"
#include "specmap/codec.hpp"
#include "specmap/dataset.hpp"
#include "specmap/errors.hpp"
#include "specmap/metrics.hpp"
#include "specmap/optim.hpp"

namespace specmap::train {

using ad::Graph;
using ad::NodeId;
using ad::ParameterSet;
using ad::Tensor;
using codec::CodecConfig;
using codec::ParamBinding;

struct LossWeights {
    double kappa = 0.5;  // confidence factor on unmeasured voxels
    double w_k = 0.5;    // knowledge term
    double w_c = 1.0;    // codebook commitment term
    double gamma = 0.25; // encoder-side commitment inside the codebook term

    void validate() const {
        if (!(kappa > 0.0) || !(kappa < 1.0))
            throw ValidationError("LossWeights: kappa must be in (0,1)");
        if (w_k < 0.0 || w_c < 0.0 || gamma < 0.0)
            throw ValidationError("LossWeights: weights must be >= 0");
    }
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double lr = 1e-3;
    LossWeights weights;
    double snr_db = 12.0;  // channel during stage-1 forward passes
    bool snr_infinite = false;
    int region_radius = 3;
    uint64_t seed = 1;
    int online_steps = 50;
    double online_lr = 1e-4;
    int varphi = 2;
    double zeta_db = 3.0;
    int max_peaks = 6;  // strongest estimated peaks kept during online tuning

    void validate() const {
        if (epochs < 1) throw ValidationError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("TrainConfig: batch size must be >= 1");
        if (!(lr > 0.0) || !(online_lr > 0.0))
            throw ValidationError("TrainConfig: learning rates must be > 0");
        weights.validate();
    }
};

struct EpochLoss {
    double total = 0.0;
    double data = 0.0;
    double knowledge = 0.0;
    double commit = 0.0;
};

// ---- differentiable loss graphs -----------------------------------------

// Semi-supervised data term (graph twin of metrics::data_loss).
template <typename Real>
NodeId data_loss_graph(Graph<Real>& g, const SpectrumMap& truth, const SampleMask& mask,
                       double kappa, NodeId recon) {
    const int n = truth.grid.cell_count();
    Tensor<Real> truth_t({n, 1});
    Tensor<Real> w({n, 1});
    for (int i = 0; i < n; ++i) {
        truth_t.data[size_t(i)] = Real(truth.values_dbm[size_t(i)]);
        w.data[size_t(i)] = Real(mask.measured[size_t(i)] ? 1.0 : kappa);
    }
    const NodeId e = g.sub(g.constant(std::move(truth_t)), recon);
    const NodeId weighted = g.mul(g.constant(std::move(w)), g.mul(e, e));
    return g.scale(g.sum(weighted), Real(1.0 / double(n)));
}

// Training-time knowledge term: squared mismatch between the true and the
// reconstructed power drops over each region, limiting both the magnitude and
// the direction of the decay. The evaluation metric keeps only the
// directional part (metrics::knowledge_loss_supervised); the full quadratic
// here is what teaches the decoder the steep per-block decay around a
// transmitter, which the data term alone underweights.
inline double drop_mismatch_loss(const SpectrumMap& truth, const SpectrumMap& recon,
                                 const std::vector<CorrelationRegion>& regions) {
    check_same_shape(truth, recon, "drop_mismatch_loss");
    const GridSpec& grid = truth.grid;
    double total = 0.0;
    for (const auto& region : regions) {
        const int peak_idx = grid.index_of(region.tx_cell);
        double acc = 0.0;
        for (int idx : region.exclusive_cells) {
            const double t = truth.values_dbm[size_t(peak_idx)] - truth.values_dbm[size_t(idx)];
            const double gdrop =
                recon.values_dbm[size_t(peak_idx)] - recon.values_dbm[size_t(idx)];
            acc += (t - gdrop) * (t - gdrop);
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
            const double gdrop = g_peaks - recon.values_dbm[size_t(idx)];
            acc += (t - gdrop) * (t - gdrop);
        }
        total += acc / double(region.norm_count);
    }
    return total;
}

template <typename Real>
NodeId knowledge_loss_graph(Graph<Real>& g, const SpectrumMap& truth,
                            const std::vector<CorrelationRegion>& regions, NodeId recon) {
    const GridSpec& grid = truth.grid;
    NodeId total = g.constant(Tensor<Real>::scalar(Real(0)));
    for (const auto& region : regions) {
        const int peak_idx = grid.index_of(region.tx_cell);

        // exclusive cells: drop from the owning transmitter
        std::vector<int> ex = region.exclusive_cells;
        NodeId acc = g.constant(Tensor<Real>::scalar(Real(0)));
        if (!ex.empty()) {
            const int m = int(ex.size());
            Tensor<Real> ones({m, 1});
            Tensor<Real> tdrop({m, 1});
            for (int i = 0; i < m; ++i) {
                ones.data[size_t(i)] = Real(1);
                tdrop.data[size_t(i)] = Real(truth.values_dbm[size_t(peak_idx)] -
                                             truth.values_dbm[size_t(ex[size_t(i)])]);
            }
            const NodeId rep =
                g.matmul(g.constant(std::move(ones)), g.gather_rows(recon, {peak_idx}));
            const NodeId drop = g.sub(rep, g.gather_rows(recon, ex));
            const NodeId resid = g.sub(g.constant(std::move(tdrop)), drop);
            acc = g.add(acc, g.sum(g.mul(resid, resid)));
        }

        // overlap cells: drop from the superposed covering peaks
        std::vector<int> ov;
        std::vector<std::vector<Real>> rho_rows;
        std::vector<int> tx_cells;
        for (const auto& r2 : regions) tx_cells.push_back(grid.index_of(r2.tx_cell));
        for (int idx : region.cells) {
            const auto c = grid.coords_of(idx);
            bool exclusive = true;
            std::vector<Real> rho(regions.size(), Real(0));
            for (size_t j = 0; j < regions.size(); ++j) {
                if (regions[j].covers(c)) {
                    rho[j] = Real(1);
                    if (regions[j].tx_index != region.tx_index) exclusive = false;
                }
            }
            if (exclusive) continue;
            ov.push_back(idx);
            rho_rows.push_back(std::move(rho));
        }
        if (!ov.empty()) {
            const int m = int(ov.size());
            Tensor<Real> rho_mat({m, int(regions.size())});
            Tensor<Real> tdrop({m, 1});
            for (int i = 0; i < m; ++i) {
                double t_peaks = 0.0;
                for (size_t j = 0; j < regions.size(); ++j) {
                    rho_mat.data[size_t(i) * regions.size() + j] = rho_rows[size_t(i)][j];
                    if (rho_rows[size_t(i)][j] != Real(0))
                        t_peaks += truth.values_dbm[size_t(tx_cells[j])];
                }
                tdrop.data[size_t(i)] =
                    Real(t_peaks - truth.values_dbm[size_t(ov[size_t(i)])]);
            }
            const NodeId peaks = g.gather_rows(recon, tx_cells);
            const NodeId sums = g.matmul(g.constant(std::move(rho_mat)), peaks);
            const NodeId drop = g.sub(sums, g.gather_rows(recon, ov));
            const NodeId resid = g.sub(g.constant(std::move(tdrop)), drop);
            acc = g.add(acc, g.sum(g.mul(resid, resid)));
        }
        total = g.add(total, g.scale(acc, Real(1.0 / double(region.norm_count))));
    }
    return total;
}

// Unsupervised knowledge term over estimated peaks (graph twin of
// metrics::knowledge_loss_unsupervised).
template <typename Real>
NodeId unsupervised_loss_graph(Graph<Real>& g, NodeId recon,
                               const std::vector<CorrelationRegion>& regions,
                               const GridSpec& grid, const PropagationParams& params) {
    NodeId total = g.constant(Tensor<Real>::scalar(Real(0)));
    for (const auto& region : regions) {
        const int peak_idx = grid.index_of(region.tx_cell);
        NodeId acc = g.constant(Tensor<Real>::scalar(Real(0)));

        std::vector<int> ex;
        std::vector<Real> pl;
        for (int idx : region.exclusive_cells) {
            if (idx == peak_idx) continue;
            ex.push_back(idx);
            pl.push_back(
                Real(path_loss_db(grid.distance_m(region.tx_cell, grid.coords_of(idx)), params)));
        }
        if (!ex.empty()) {
            const int m = int(ex.size());
            Tensor<Real> ones({m, 1});
            std::fill(ones.data.begin(), ones.data.end(), Real(1));
            Tensor<Real> pl_t({m, 1});
            pl_t.data = pl;
            const NodeId rep =
                g.matmul(g.constant(std::move(ones)), g.gather_rows(recon, {peak_idx}));
            const NodeId resid =
                g.sub(g.sub(rep, g.gather_rows(recon, ex)), g.constant(std::move(pl_t)));
            acc = g.add(acc, g.sum(g.mul(resid, resid)));
        }

        std::vector<int> ov;
        std::vector<std::vector<Real>> rho_rows;
        std::vector<Real> pl_sums;
        std::vector<int> tx_cells;
        for (const auto& r2 : regions) tx_cells.push_back(grid.index_of(r2.tx_cell));
        for (int idx : region.cells) {
            const auto c = grid.coords_of(idx);
            bool exclusive = true;
            bool at_peak = false;
            double pl_sum = 0.0;
            std::vector<Real> rho(regions.size(), Real(0));
            for (size_t j = 0; j < regions.size(); ++j) {
                if (!regions[j].covers(c)) continue;
                rho[j] = Real(1);
                if (regions[j].tx_index != region.tx_index) exclusive = false;
                if (tx_cells[j] == idx)
                    at_peak = true;
                else
                    pl_sum += path_loss_db(grid.distance_m(regions[j].tx_cell, c), params);
            }
            if (exclusive || at_peak) continue;
            ov.push_back(idx);
            rho_rows.push_back(std::move(rho));
            pl_sums.push_back(Real(pl_sum));
        }
        if (!ov.empty()) {
            const int m = int(ov.size());
            Tensor<Real> rho_mat({m, int(regions.size())});
            for (int i = 0; i < m; ++i)
                for (size_t j = 0; j < regions.size(); ++j)
                    rho_mat.data[size_t(i) * regions.size() + j] = rho_rows[size_t(i)][j];
            Tensor<Real> pl_t({m, 1});
            pl_t.data = pl_sums;
            const NodeId sums = g.matmul(g.constant(std::move(rho_mat)), g.gather_rows(recon, tx_cells));
            const NodeId resid = g.sub(g.sub(sums, g.gather_rows(recon, ov)),
                                       g.constant(std::move(pl_t)));
            acc = g.add(acc, g.sum(g.mul(resid, resid)));
        }
        total = g.add(total, g.scale(acc, Real(1.0 / double(region.norm_count))));
    }
    return total;
}

// ---- stage 1 --------------------------------------------------------------

struct Stage1StepNodes {
    NodeId total;
    NodeId data;
    NodeId knowledge;
    NodeId commit;
    NodeId recon;
};

// Full offline forward for one record: encode the complete map, quantize per
// scale, carry the indices over the simulated channel, decode, and assemble
// L_off = L_D + w_k * L_K^S + w_c * L_C. Gradients flow to the encoder via
// the straight-through path around the (non-differentiable) transport.
template <typename Real>
Stage1StepNodes build_stage1_step(ParamBinding<Real>& P, const DatasetRecord& rec,
                                  const CodecConfig& cfg, const ChannelConfig& chan,
                                  const TrainConfig& tc) {
    Graph<Real>& g = P.g;
    const GridSpec& grid = rec.truth.grid;

    const auto rows = codec::make_patch_rows<Real>(rec.truth, nullptr, cfg);
    const auto occ = codec::full_occupancy_pyramid(grid, cfg);
    const auto feats = codec::encode_features(P, "enc", rows, occ, grid, cfg, true);

    std::vector<ScaleIndices> sent;
    std::vector<std::vector<int>> chosen;
    for (int r = 1; r <= cfg.scales; ++r) {
        const auto& cb = P.ps.at("cb.r" + std::to_string(r)).value;
        auto q = codec::quantize_rows(g.val(feats[size_t(r - 1)]), cb);
        sent.push_back({uint8_t(r), q.indices});
        chosen.push_back(std::move(q.indices));
    }
    const auto received = chan.snr_infinite ? sent : transmit_indices(sent, chan);

    NodeId commit = g.constant(Tensor<Real>::scalar(Real(0)));
    std::vector<NodeId> d_hat;
    for (int r = 1; r <= cfg.scales; ++r) {
        const std::string cb_name = "cb.r" + std::to_string(r);
        const auto& cb = P.ps.at(cb_name).value;
        const NodeId feat = feats[size_t(r - 1)];
        const auto& idx = chosen[size_t(r - 1)];

        const NodeId c1 =
            g.mean_sq(g.sub(g.gather_rows(P(cb_name), idx), g.constant(g.val(feat))));
        const NodeId c2 =
            g.mean_sq(g.sub(feat, g.constant(codec::lookup_rows(cb, idx))));
        commit = g.add(commit, g.add(c1, g.scale(c2, Real(tc.weights.gamma))));

        d_hat.push_back(
            g.straight_through(feat, codec::lookup_rows(cb, received[size_t(r - 1)].indices)));
    }

    Stage1StepNodes out;
    out.recon = codec::decode_multiscale(P, d_hat, grid, cfg);
    out.data = data_loss_graph(g, rec.truth, rec.mask, tc.weights.kappa, out.recon);
    const auto regions = build_regions(rec.transmitters, grid, tc.region_radius);
    out.knowledge = knowledge_loss_graph(g, rec.truth, regions, out.recon);
    out.commit = commit;
    out.total = g.add(g.add(out.data, g.scale(out.knowledge, Real(tc.weights.w_k))),
                      g.scale(out.commit, Real(tc.weights.w_c)));
    return out;
}

// Mean per-token distance between encoder features and their selected
// codebook rows; tracked to watch the codebook actually learning.
template <typename Real>
double mean_quantization_distance(const ParameterSet<Real>& ps, const std::vector<DatasetRecord>& recs,
                                  const CodecConfig& cfg) {
    double acc = 0.0;
    int64_t count = 0;
    auto& mut = const_cast<ParameterSet<Real>&>(ps);
    for (const auto& rec : recs) {
        Graph<Real> g;
        ParamBinding<Real> P{g, mut, false};
        const auto rows = codec::make_patch_rows<Real>(rec.truth, nullptr, cfg);
        const auto occ = codec::full_occupancy_pyramid(rec.truth.grid, cfg);
        const auto feats = codec::encode_features(P, "enc", rows, occ, rec.truth.grid, cfg, true);
        for (int r = 1; r <= cfg.scales; ++r) {
            const auto& cb = ps.at("cb.r" + std::to_string(r)).value;
            const auto& f = g.val(feats[size_t(r - 1)]);
            const auto q = codec::quantize_rows(f, cb);
            const int C = f.shape[1];
            for (int i = 0; i < f.shape[0]; ++i) {
                double d = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double e = double(f.data[size_t(i * C + c)]) -
                                     double(cb.data[size_t(q.indices[size_t(i)] * C + c)]);
                    d += e * e;
                }
                acc += std::sqrt(d);
                ++count;
            }
        }
    }
    return acc / double(count);
}

struct Stage1Result {
    std::vector<EpochLoss> trace;
};

template <typename Real>
Stage1Result train_stage1(const std::vector<DatasetRecord>& records, ParameterSet<Real>& ps,
                          const CodecConfig& cfg, const ChannelConfig& chan_base,
                          const TrainConfig& tc) {
    cfg.validate();
    tc.validate();
    if (records.empty()) throw ValidationError("train_stage1: empty dataset");

    ad::AdamConfig adam;
    adam.lr = tc.lr;
    Stage1Result result;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        EpochLoss mean;
        int batch_fill = 0;
        int seen = 0;
        ps.zero_grads();
        for (size_t m = 0; m < records.size(); ++m) {
            ChannelConfig chan = chan_base;
            chan.snr_db = tc.snr_db;
            chan.snr_infinite = tc.snr_infinite;
            chan.rng_seed =
                Rng::derive(tc.seed, 0x57a6e1u + uint64_t(epoch) * 131071u + m).next_u64();

            Graph<Real> g;
            ParamBinding<Real> P{g, ps, true};
            const auto nodes = build_stage1_step(P, records[m], cfg, chan, tc);
            const double total = double(g.val(nodes.total).data[0]);
            if (!std::isfinite(total))
                throw NumericError("stage1: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   " map " + std::to_string(m));
            mean.total += total;
            mean.data += double(g.val(nodes.data).data[0]);
            mean.knowledge += double(g.val(nodes.knowledge).data[0]);
            mean.commit += double(g.val(nodes.commit).data[0]);
            ++seen;

            g.backward(nodes.total);
            P.pull_grads();
            if (++batch_fill == tc.batch_size || m + 1 == records.size()) {
                ps.adam_step(adam, 1.0 / double(batch_fill));
                ps.zero_grads();
                batch_fill = 0;
            }
        }
        mean.total /= seen;
        mean.data /= seen;
        mean.knowledge /= seen;
        mean.commit /= seen;
        result.trace.push_back(mean);
    }
    return result;
}

// ---- stage 2 --------------------------------------------------------------

// Frozen-teacher targets: quantized indices of the full map per scale.
template <typename Real>
std::vector<std::vector<int>> teacher_targets(ParameterSet<Real>& teacher,
                                              const DatasetRecord& rec, const CodecConfig& cfg) {
    Graph<Real> g;
    ParamBinding<Real> P{g, teacher, false};
    const auto rows = codec::make_patch_rows<Real>(rec.truth, nullptr, cfg);
    const auto occ = codec::full_occupancy_pyramid(rec.truth.grid, cfg);
    const auto feats = codec::encode_features(P, "enc", rows, occ, rec.truth.grid, cfg, true);
    std::vector<std::vector<int>> targets;
    for (int r = 1; r <= cfg.scales; ++r)
        targets.push_back(codec::quantize_rows(g.val(feats[size_t(r - 1)]),
                                               teacher.at("cb.r" + std::to_string(r)).value)
                              .indices);
    return targets;
}

struct Stage2Result {
    std::vector<double> trace;  // mean cross entropy per epoch
};

template <typename Real>
Stage2Result train_stage2(const std::vector<DatasetRecord>& records, ParameterSet<Real>& teacher,
                          ParameterSet<Real>& predictor, const CodecConfig& cfg,
                          const TrainConfig& tc) {
    cfg.validate();
    tc.validate();
    if (records.empty()) throw ValidationError("train_stage2: empty dataset");

    std::vector<std::vector<std::vector<int>>> targets;
    targets.reserve(records.size());
    for (const auto& rec : records) targets.push_back(teacher_targets(teacher, rec, cfg));

    ad::AdamConfig adam;
    adam.lr = tc.lr;
    Stage2Result result;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        double mean = 0.0;
        int batch_fill = 0;
        predictor.zero_grads();
        for (size_t m = 0; m < records.size(); ++m) {
            const auto& rec = records[m];
            Graph<Real> g;
            ParamBinding<Real> P{g, predictor, true};
            const auto masked = apply_mask(rec.truth, rec.mask);
            const auto logits = codec::predict_semantics(P, masked, rec.mask, rec.truth.grid, cfg);
            NodeId ce = g.cross_entropy_logits(logits[0], targets[m][0]);
            for (int r = 2; r <= cfg.scales; ++r)
                ce = g.add(ce, g.cross_entropy_logits(logits[size_t(r - 1)], targets[m][size_t(r - 1)]));
            const double loss = double(g.val(ce).data[0]);
            if (!std::isfinite(loss))
                throw NumericError("stage2: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   " map " + std::to_string(m));
            mean += loss;
            g.backward(ce);
            P.pull_grads();
            if (++batch_fill == tc.batch_size || m + 1 == records.size()) {
                predictor.adam_step(adam, 1.0 / double(batch_fill));
                predictor.zero_grads();
                batch_fill = 0;
            }
        }
        result.trace.push_back(mean / double(records.size()));
    }
    return result;
}

// Token-level index accuracy of the predictor against frozen-teacher targets.
template <typename Real>
double predictor_accuracy(const std::vector<DatasetRecord>& records, ParameterSet<Real>& teacher,
                          ParameterSet<Real>& predictor, const CodecConfig& cfg) {
    int64_t hits = 0, total = 0;
    for (const auto& rec : records) {
        const auto targets = teacher_targets(teacher, rec, cfg);
        Graph<Real> g;
        ParamBinding<Real> P{g, predictor, false};
        const auto masked = apply_mask(rec.truth, rec.mask);
        const auto logits = codec::predict_semantics(P, masked, rec.mask, rec.truth.grid, cfg);
        for (int r = 1; r <= cfg.scales; ++r) {
            const auto& lv = g.val(logits[size_t(r - 1)]);
            const auto pred = codec::argmax_rows(lv.data, lv.shape[0], lv.shape[1]);
            for (size_t i = 0; i < pred.size(); ++i) {
                hits += pred[i] == targets[size_t(r - 1)][i];
                ++total;
            }
        }
    }
    return double(hits) / double(total);
}

// ---- online tuning ---------------------------------------------------------

struct OnlineStepResult {
    double loss = 0.0;
    bool skipped = false;  // no peaks found
    SpectrumMap reconstruction;
};

// One unsupervised pass: predict indices from the masked map, transport them,
// decode, estimate transmitters from the reconstruction itself, and take a
// gradient step on L_onl over the estimated regions. `all_params` holds
// predictor + decoder + codebooks; every family updates.
template <typename Real>
OnlineStepResult online_step(ParameterSet<Real>& all_params, const SpectrumMap& masked,
                             const SampleMask& mask, const PropagationParams& prop,
                             const CodecConfig& cfg, const ChannelConfig& chan,
                             const TrainConfig& tc, bool apply_update = true) {
    const GridSpec& grid = masked.grid;
    Graph<Real> g;
    ParamBinding<Real> P{g, all_params, true};

    const auto logits = codec::predict_semantics(P, masked, mask, grid, cfg);
    std::vector<ScaleIndices> sent;
    for (int r = 1; r <= cfg.scales; ++r) {
        const auto& lv = g.val(logits[size_t(r - 1)]);
        sent.push_back({uint8_t(r), codec::argmax_rows(lv.data, lv.shape[0], lv.shape[1])});
    }
    const auto received = chan.snr_infinite ? sent : transmit_indices(sent, chan);

    std::vector<NodeId> d_hat;
    for (int r = 1; r <= cfg.scales; ++r) {
        const std::string cb_name = "cb.r" + std::to_string(r);
        const NodeId hard = g.gather_rows(P(cb_name), received[size_t(r - 1)].indices);
        // soft straight-through: value stays the received hard lookup, the
        // gradient reaches the predictor through the softmax mixture
        const NodeId soft = g.matmul(g.softmax(logits[size_t(r - 1)], 1), P(cb_name));
        d_hat.push_back(g.add(hard, g.sub(soft, g.constant(g.val(soft)))));
    }
    const NodeId recon = codec::decode_multiscale(P, d_hat, grid, cfg);

    OnlineStepResult out;
    out.reconstruction = SpectrumMap(grid);
    for (int i = 0; i < grid.cell_count(); ++i)
        out.reconstruction.values_dbm[size_t(i)] = double(g.val(recon).data[size_t(i)]);

    auto est = estimate_transmitters(out.reconstruction, tc.varphi, tc.zeta_db, prop);
    if (est.peaks.empty()) {
        out.skipped = true;
        return out;
    }
    if (tc.max_peaks > 0 && int(est.peaks.size()) > tc.max_peaks)
        est.peaks.resize(size_t(tc.max_peaks));
    std::vector<std::array<int, 3>> peak_cells;
    for (const auto& p : est.peaks) peak_cells.push_back(p.cell);
    const auto regions = build_regions(peak_cells, grid, tc.region_radius);
    const NodeId loss = unsupervised_loss_graph(g, recon, regions, grid, prop);
    out.loss = double(g.val(loss).data[0]);
    if (!std::isfinite(out.loss)) throw NumericError("online: non-finite loss");

    if (apply_update) {
        all_params.zero_grads();
        g.backward(loss);
        P.pull_grads();
        ad::AdamConfig adam;
        adam.lr = tc.online_lr;
        all_params.adam_step(adam);
    }
    return out;
}

struct OnlineResult {
    std::vector<double> loss_trace;
    int skipped = 0;
};

template <typename Real>
OnlineResult tune_online(ParameterSet<Real>& all_params, const std::vector<DatasetRecord>& stream,
                         const CodecConfig& cfg, const ChannelConfig& chan_base,
                         const TrainConfig& tc) {
    if (stream.empty()) throw ValidationError("tune_online: empty stream");
    OnlineResult out;
    for (int step = 0; step < tc.online_steps; ++step) {
        const auto& rec = stream[size_t(step) % stream.size()];
        ChannelConfig chan = chan_base;
        chan.rng_seed = Rng::derive(tc.seed, 0x0a11eu + uint64_t(step)).next_u64();
        const auto masked = apply_mask(rec.truth, rec.mask);
        const auto res = online_step(all_params, masked, rec.mask, rec.params, cfg, chan, tc);
        if (res.skipped)
            ++out.skipped;
        else
            out.loss_trace.push_back(res.loss);
    }
    return out;
}

}  // namespace specmap::train
