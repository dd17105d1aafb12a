#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "specmap/autodiff.hpp"
#include "specmap/errors.hpp"
#include "specmap/grid.hpp"
#include "specmap/optim.hpp"

namespace specmap::codec {

using ad::Graph;
using ad::NodeId;
using ad::ParameterSet;
using ad::Tensor;

struct CodecConfig {
    int scales = 2;         // R
    int patch = 4;          // voxels per token edge
    int n_win = 4;          // sparse window size; Chebyshev radius n_win/2
    int heads = 4;
    int depth = 4;          // attention blocks per scale
    int channels = 64;      // C
    int ff_mult = 2;        // feed-forward width = ff_mult * C
    int codebook_size = 256;  // L per scale, 8-bit indices on the wire
    double in_offset_db = -40.0;  // normalized value = (dBm - offset) / scale
    double in_scale_db = 25.0;
    uint64_t init_seed = 1;

    int window_radius() const { return n_win / 2; }

    void validate() const {
        if (scales < 1) throw ValidationError("CodecConfig: scales must be >= 1");
        if (patch < 1) throw ValidationError("CodecConfig: patch must be >= 1");
        if (n_win < 1) throw ValidationError("CodecConfig: n_win must be >= 1");
        if (heads < 1 || channels % heads != 0)
            throw ValidationError("CodecConfig: heads must divide channels");
        if (codebook_size < 2 || (codebook_size & (codebook_size - 1)) != 0 ||
            codebook_size > 256)
            throw ValidationError("CodecConfig: codebook size must be a power of two <= 256");
    }

    nlohmann::json to_json() const {
        return {{"scales", scales},          {"patch", patch},
                {"n_win", n_win},            {"heads", heads},
                {"depth", depth},            {"channels", channels},
                {"ff_mult", ff_mult},        {"codebook_size", codebook_size},
                {"in_offset_db", in_offset_db}, {"in_scale_db", in_scale_db},
                {"init_seed", init_seed}};
    }

    static CodecConfig from_json(const nlohmann::json& j) {
        CodecConfig cfg;
        j.at("scales").get_to(cfg.scales);
        j.at("patch").get_to(cfg.patch);
        j.at("n_win").get_to(cfg.n_win);
        j.at("heads").get_to(cfg.heads);
        j.at("depth").get_to(cfg.depth);
        j.at("channels").get_to(cfg.channels);
        j.at("ff_mult").get_to(cfg.ff_mult);
        j.at("codebook_size").get_to(cfg.codebook_size);
        j.at("in_offset_db").get_to(cfg.in_offset_db);
        j.at("in_scale_db").get_to(cfg.in_scale_db);
        j.at("init_seed").get_to(cfg.init_seed);
        cfg.validate();
        return cfg;
    }
};

struct TokenShape {
    int l = 1, w = 1, h = 1;
    int count() const { return l * w * h; }
    std::array<int, 3> arr() const { return {l, w, h}; }
    int index(int i, int j, int k) const { return (i * w + j) * h + k; }
};

inline TokenShape token_shape_at(const GridSpec& grid, const CodecConfig& cfg, int scale) {
    const auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
    TokenShape s{ceil_div(grid.blocks[0], cfg.patch), ceil_div(grid.blocks[1], cfg.patch),
                 ceil_div(grid.blocks[2], cfg.patch)};
    for (int r = 1; r < scale; ++r)
        s = {ceil_div(s.l, 2), ceil_div(s.w, 2), ceil_div(s.h, 2)};
    return s;
}

// A token is occupied at scale 1 when any voxel in its patch is measured;
// at coarser scales when any child token is occupied.
inline std::vector<uint8_t> occupancy_scale1(const SampleMask& mask, const CodecConfig& cfg) {
    const TokenShape ts = token_shape_at(mask.grid, cfg, 1);
    std::vector<uint8_t> occ(size_t(ts.count()), 0);
    for (int idx = 0; idx < mask.grid.cell_count(); ++idx) {
        if (!mask.measured[size_t(idx)]) continue;
        const auto c = mask.grid.coords_of(idx);
        occ[size_t(ts.index(c[0] / cfg.patch, c[1] / cfg.patch, c[2] / cfg.patch))] = 1;
    }
    return occ;
}

inline std::vector<uint8_t> occupancy_downscale(const std::vector<uint8_t>& occ,
                                                const TokenShape& from, const TokenShape& to) {
    std::vector<uint8_t> out(size_t(to.count()), 0);
    for (int i = 0; i < from.l; ++i)
        for (int j = 0; j < from.w; ++j)
            for (int k = 0; k < from.h; ++k)
                if (occ[size_t(from.index(i, j, k))])
                    out[size_t(to.index(i / 2, j / 2, k / 2))] = 1;
    return out;
}

inline std::vector<uint8_t> all_occupied(const TokenShape& ts) {
    return std::vector<uint8_t>(size_t(ts.count()), 1);
}

// Per-query neighbor lists: occupied queries attend to occupied tokens within
// the Chebyshev window (self included); unoccupied queries get empty lists
// and pass through the block unchanged.
inline std::shared_ptr<std::vector<std::vector<int>>> build_neighbor_lists(
    const TokenShape& ts, const std::vector<uint8_t>& occ, int radius) {
    auto lists = std::make_shared<std::vector<std::vector<int>>>(size_t(ts.count()));
    for (int i = 0; i < ts.l; ++i)
        for (int j = 0; j < ts.w; ++j)
            for (int k = 0; k < ts.h; ++k) {
                const int q = ts.index(i, j, k);
                if (!occ[size_t(q)]) continue;
                auto& nb = (*lists)[size_t(q)];
                for (int a = std::max(0, i - radius); a <= std::min(ts.l - 1, i + radius); ++a)
                    for (int b = std::max(0, j - radius); b <= std::min(ts.w - 1, j + radius); ++b)
                        for (int c = std::max(0, k - radius); c <= std::min(ts.h - 1, k + radius);
                             ++c) {
                            const int t = ts.index(a, b, c);
                            if (occ[size_t(t)]) nb.push_back(t);
                        }
            }
    return lists;
}

inline uint64_t count_attention_pairs(const TokenShape& ts, const std::vector<uint8_t>& occ,
                                      int radius) {
    const auto lists = build_neighbor_lists(ts, occ, radius);
    uint64_t pairs = 0;
    for (const auto& nb : *lists) pairs += nb.size();
    return pairs;
}

inline uint64_t dense_attention_pairs(const TokenShape& ts) {
    return uint64_t(ts.count()) * uint64_t(ts.count());
}

// ---- parameters ---------------------------------------------------------

namespace detail {

template <typename Real>
void add_block_params(ParameterSet<Real>& ps, const std::string& prefix, const CodecConfig& cfg,
                      Rng& rng) {
    const int C = cfg.channels;
    const int Ck = C / cfg.heads;
    const int F = cfg.ff_mult * C;
    const double w0 = 0.02;
    for (int h = 0; h < cfg.heads; ++h) {
        ps.add(prefix + ".wq" + std::to_string(h), ad::randn_tensor<Real>({C, Ck}, w0, rng));
        ps.add(prefix + ".wk" + std::to_string(h), ad::randn_tensor<Real>({C, Ck}, w0, rng));
        ps.add(prefix + ".wv" + std::to_string(h), ad::randn_tensor<Real>({C, Ck}, w0, rng));
    }
    ps.add(prefix + ".wo", ad::randn_tensor<Real>({C, C}, w0, rng));
    ps.add(prefix + ".bo", Tensor<Real>({C}));
    ps.add(prefix + ".w1", ad::randn_tensor<Real>({C, F}, w0, rng));
    ps.add(prefix + ".b1", Tensor<Real>({F}));
    ps.add(prefix + ".w2", ad::randn_tensor<Real>({F, C}, w0, rng));
    ps.add(prefix + ".b2", Tensor<Real>({C}));
}

template <typename Real>
void add_stack_params(ParameterSet<Real>& ps, const std::string& prefix, const GridSpec& grid,
                      const CodecConfig& cfg, Rng& rng, bool with_embed) {
    const int C = cfg.channels;
    const int pv = cfg.patch * cfg.patch * cfg.patch;
    if (with_embed) {
        ps.add(prefix + ".embed.w", ad::randn_tensor<Real>({pv, C}, 0.02, rng));
        ps.add(prefix + ".embed.b", Tensor<Real>({C}));
        ps.add(prefix + ".embed.empty", Tensor<Real>({1}));
    }
    for (int r = 1; r <= cfg.scales; ++r) {
        const TokenShape ts = token_shape_at(grid, cfg, r);
        ps.add(prefix + ".pos.r" + std::to_string(r),
               ad::randn_tensor<Real>({ts.count(), C}, 0.02, rng));
        for (int b = 0; b < cfg.depth; ++b)
            add_block_params(ps, prefix + ".s" + std::to_string(r) + ".b" + std::to_string(b),
                             cfg, rng);
        if (r >= 2) {
            ps.add(prefix + ".merge.r" + std::to_string(r) + ".w",
                   ad::randn_tensor<Real>({8 * C, C}, 0.02, rng));
            ps.add(prefix + ".merge.r" + std::to_string(r) + ".b", Tensor<Real>({C}));
        }
    }
}

}  // namespace detail

// Teacher encoder + per-scale codebooks + multi-scale decoder ("stage 1"
// families). Parameter names are stable; checkpoints address them by name.
template <typename Real>
void init_stage1_params(ParameterSet<Real>& ps, const GridSpec& grid, const CodecConfig& cfg) {
    cfg.validate();
    const int C = cfg.channels;
    const int pv = cfg.patch * cfg.patch * cfg.patch;
    Rng rng = Rng::derive(cfg.init_seed, 0xc0dec);

    detail::add_stack_params(ps, "enc", grid, cfg, rng, true);
    for (int r = 1; r <= cfg.scales; ++r) {
        ps.add("enc.shift.r" + std::to_string(r) + ".w",
               ad::randn_tensor<Real>({C, C}, 0.02, rng));
        ps.add("enc.shift.r" + std::to_string(r) + ".b", Tensor<Real>({C}));
        ps.add("cb.r" + std::to_string(r),
               ad::randn_tensor<Real>({cfg.codebook_size, C}, 0.05, rng));
    }
    detail::add_stack_params(ps, "dec", grid, cfg, rng, false);
    for (int r = 1; r < cfg.scales; ++r) {
        ps.add("dec.fuse.r" + std::to_string(r) + ".w",
               ad::randn_tensor<Real>({2 * C, C}, 0.02, rng));
        ps.add("dec.fuse.r" + std::to_string(r) + ".b", Tensor<Real>({C}));
    }
    ps.add("dec.deembed.w", ad::randn_tensor<Real>({C, pv}, 0.02, rng));
    ps.add("dec.deembed.b", Tensor<Real>({pv}));
}

// Stage-2 semantic predictor: same trunk shape plus per-scale index heads.
template <typename Real>
void init_predictor_params(ParameterSet<Real>& ps, const GridSpec& grid, const CodecConfig& cfg) {
    cfg.validate();
    Rng rng = Rng::derive(cfg.init_seed, 0x9ced);
    detail::add_stack_params(ps, "pred", grid, cfg, rng, true);
    for (int r = 1; r <= cfg.scales; ++r) {
        ps.add("pred.head.r" + std::to_string(r) + ".w",
               ad::randn_tensor<Real>({cfg.channels, cfg.codebook_size}, 0.02, rng));
        ps.add("pred.head.r" + std::to_string(r) + ".b", Tensor<Real>({cfg.codebook_size}));
    }
}

// ---- graph builders ------------------------------------------------------

// Binds ParameterSet entries to graph leaves on demand; pull_grads() moves
// the accumulated node gradients back into the set after backward().
template <typename Real>
struct ParamBinding {
    Graph<Real>& g;
    ParameterSet<Real>& ps;
    bool trainable = true;
    std::map<std::string, NodeId> bound;

    NodeId operator()(const std::string& name) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        const NodeId id = g.value(ps.at(name).value, trainable);
        bound.emplace(name, id);
        return id;
    }

    void pull_grads() {
        if (!trainable) return;
        for (const auto& [name, id] : bound) {
            auto& dst = ps.at(name).grad.data;
            const auto& src = g.grad(id).data;
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
};

// Raw per-token patch rows of a (possibly masked) map, normalized and padded.
template <typename Real>
struct PatchRows {
    Tensor<Real> values;     // [n_tokens, patch^3], 0 where empty
    Tensor<Real> empty_ind;  // [n_tokens, patch^3], 1 where empty
    TokenShape shape;
    std::vector<uint8_t> occupancy;
};

template <typename Real>
PatchRows<Real> make_patch_rows(const SpectrumMap& map, const SampleMask* mask,
                                const CodecConfig& cfg) {
    const GridSpec& grid = map.grid;
    PatchRows<Real> rows;
    rows.shape = token_shape_at(grid, cfg, 1);
    const int pv = cfg.patch * cfg.patch * cfg.patch;
    const int n = rows.shape.count();
    rows.values = Tensor<Real>({n, pv});
    rows.empty_ind = Tensor<Real>({n, pv});
    rows.occupancy.assign(size_t(n), 0);

    for (int t = 0; t < n; ++t) {
        const int ti = t / (rows.shape.w * rows.shape.h);
        const int tj = (t / rows.shape.h) % rows.shape.w;
        const int tk = t % rows.shape.h;
        for (int off = 0; off < pv; ++off) {
            const int dx = off / (cfg.patch * cfg.patch);
            const int dy = (off / cfg.patch) % cfg.patch;
            const int dz = off % cfg.patch;
            const std::array<int, 3> cell{ti * cfg.patch + dx, tj * cfg.patch + dy,
                                          tk * cfg.patch + dz};
            const size_t at = size_t(t * pv + off);
            if (!grid.contains(cell)) {
                rows.empty_ind.data[at] = Real(1);
                continue;
            }
            const int idx = grid.index_of(cell);
            const bool measured = mask ? mask->measured[size_t(idx)] != 0
                                       : map.values_dbm[size_t(idx)] != kEmptyDbm;
            if (!measured) {
                rows.empty_ind.data[at] = Real(1);
            } else {
                rows.values.data[at] =
                    Real((map.values_dbm[size_t(idx)] - cfg.in_offset_db) / cfg.in_scale_db);
                rows.occupancy[size_t(t)] = 1;
            }
        }
    }
    return rows;
}

template <typename Real>
NodeId embed_tokens(ParamBinding<Real>& P, const std::string& prefix, const PatchRows<Real>& rows,
                    const CodecConfig& cfg) {
    Graph<Real>& g = P.g;
    const int n = rows.shape.count();
    const int pv = cfg.patch * cfg.patch * cfg.patch;
    const NodeId vals = g.constant(rows.values);
    const NodeId empt = g.constant(rows.empty_ind);
    const NodeId filled =
        g.add(vals, g.mul(empt, g.scalar_fill(P(prefix + ".embed.empty"), n, pv)));
    const NodeId proj =
        g.add_bias(g.matmul(filled, P(prefix + ".embed.w")), P(prefix + ".embed.b"));
    return g.add(proj, P(prefix + ".pos.r1"));
}

template <typename Real>
NodeId attention_block(ParamBinding<Real>& P, const std::string& prefix, NodeId x,
                       NodeId occ_gate,
                       std::shared_ptr<const std::vector<std::vector<int>>> neighbors,
                       const CodecConfig& cfg) {
    Graph<Real>& g = P.g;
    const int Ck = cfg.channels / cfg.heads;
    const Real inv_sqrt = Real(1.0 / std::sqrt(double(Ck)));
    std::vector<NodeId> head_outs;
    for (int h = 0; h < cfg.heads; ++h) {
        const NodeId q = g.matmul(x, P(prefix + ".wq" + std::to_string(h)));
        const NodeId k = g.matmul(x, P(prefix + ".wk" + std::to_string(h)));
        const NodeId v = g.matmul(x, P(prefix + ".wv" + std::to_string(h)));
        head_outs.push_back(g.windowed_attention(q, k, v, neighbors, inv_sqrt));
    }
    const NodeId cat = cfg.heads == 1 ? head_outs[0] : g.concat(head_outs, 1);
    const NodeId proj = g.add_bias(g.matmul(cat, P(prefix + ".wo")), P(prefix + ".bo"));
    const NodeId x1 = g.add(x, g.mul_rows(proj, occ_gate));
    const NodeId ff = g.add_bias(
        g.matmul(g.relu(g.add_bias(g.matmul(x1, P(prefix + ".w1")), P(prefix + ".b1"))),
                 P(prefix + ".w2")),
        P(prefix + ".b2"));
    return g.add(x1, g.mul_rows(ff, occ_gate));
}

template <typename Real>
NodeId run_blocks(ParamBinding<Real>& P, const std::string& prefix, NodeId x,
                  const TokenShape& ts, const std::vector<uint8_t>& occ, const CodecConfig& cfg) {
    Graph<Real>& g = P.g;
    Tensor<Real> gate({ts.count()});
    for (int i = 0; i < ts.count(); ++i) gate.data[size_t(i)] = Real(occ[size_t(i)]);
    const NodeId gate_node = g.constant(std::move(gate));
    const auto neighbors = build_neighbor_lists(ts, occ, cfg.window_radius());
    for (int b = 0; b < cfg.depth; ++b)
        x = attention_block(P, prefix + ".b" + std::to_string(b), x, gate_node, neighbors, cfg);
    return x;
}

// Strided 2x token merge: gathers each destination token's up-to-8 children
// (missing children read a zero row) and projects [8C] -> [C].
template <typename Real>
NodeId token_merge(ParamBinding<Real>& P, const std::string& prefix, NodeId x,
                   const TokenShape& from, const TokenShape& to) {
    Graph<Real>& g = P.g;
    const int C = g.val(x).shape[1];
    const NodeId padded = g.concat({x, g.constant(Tensor<Real>({1, C}))}, 0);
    const int zero_row = from.count();
    std::vector<NodeId> slots;
    for (int s = 0; s < 8; ++s) {
        const int di = (s >> 2) & 1, dj = (s >> 1) & 1, dk = s & 1;
        std::vector<int> rows(size_t(to.count()), zero_row);
        for (int i = 0; i < to.l; ++i)
            for (int j = 0; j < to.w; ++j)
                for (int k = 0; k < to.h; ++k) {
                    const int ci = 2 * i + di, cj = 2 * j + dj, ck = 2 * k + dk;
                    if (ci < from.l && cj < from.w && ck < from.h)
                        rows[size_t(to.index(i, j, k))] = from.index(ci, cj, ck);
                }
        slots.push_back(g.gather_rows(padded, rows));
    }
    return g.add_bias(g.matmul(g.concat(slots, 1), P(prefix + ".w")), P(prefix + ".b"));
}

// Multi-scale feature extraction: refined scale-1 tokens, merged and refined
// again per coarser scale, each followed by its vector-shift projection.
// Returns the pre-quantization semantic features per scale.
template <typename Real>
std::vector<NodeId> encode_features(ParamBinding<Real>& P, const std::string& prefix,
                                    const PatchRows<Real>& rows,
                                    const std::vector<std::vector<uint8_t>>& occ_per_scale,
                                    const GridSpec& grid, const CodecConfig& cfg,
                                    bool with_shift) {
    NodeId x = embed_tokens(P, prefix, rows, cfg);
    std::vector<NodeId> features;
    TokenShape ts = token_shape_at(grid, cfg, 1);
    for (int r = 1; r <= cfg.scales; ++r) {
        if (r >= 2) {
            const TokenShape next = token_shape_at(grid, cfg, r);
            x = token_merge(P, prefix + ".merge.r" + std::to_string(r), x, ts, next);
            ts = next;
            x = P.g.add(x, P(prefix + ".pos.r" + std::to_string(r)));
        }
        x = run_blocks(P, prefix + ".s" + std::to_string(r), x, ts, occ_per_scale[size_t(r - 1)],
                       cfg);
        if (with_shift) {
            features.push_back(P.g.add_bias(
                P.g.matmul(x, P("enc.shift.r" + std::to_string(r) + ".w")),
                P("enc.shift.r" + std::to_string(r) + ".b")));
        } else {
            features.push_back(x);
        }
    }
    return features;
}

struct QuantizeResult {
    std::vector<int> indices;
};

// Nearest codebook row per token by Euclidean distance; ties take the lowest
// index. Pure value-level function (gradient handling lives with callers).
template <typename Real>
QuantizeResult quantize_rows(const Tensor<Real>& features, const Tensor<Real>& codebook) {
    if (features.shape.size() != 2 || codebook.shape.size() != 2 ||
        features.shape[1] != codebook.shape[1])
        throw ValidationError("quantize_rows: feature width must equal codebook width");
    const int n = features.shape[0], L = codebook.shape[0], C = codebook.shape[1];
    QuantizeResult out;
    out.indices.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        const Real* f = features.data.data() + int64_t(i) * C;
        Real best = std::numeric_limits<Real>::infinity();
        int best_idx = 0;
        for (int l = 0; l < L; ++l) {
            const Real* row = codebook.data.data() + int64_t(l) * C;
            Real d = Real(0);
            for (int c = 0; c < C; ++c) {
                const Real e = f[c] - row[c];
                d += e * e;
            }
            if (d < best) {
                best = d;
                best_idx = l;
            }
        }
        out.indices[size_t(i)] = best_idx;
    }
    return out;
}

template <typename Real>
Tensor<Real> lookup_rows(const Tensor<Real>& codebook, const std::vector<int>& indices) {
    const int C = codebook.shape[1];
    Tensor<Real> out({int(indices.size()), C});
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= codebook.shape[0])
            throw ValidationError("lookup_rows: index out of codebook range");
        std::copy_n(codebook.data.begin() + int64_t(indices[i]) * C, C,
                    out.data.begin() + int64_t(i) * C);
    }
    return out;
}

// Coarse-to-fine reconstruction from per-scale semantic token nodes. Decoder
// tokens are all defined, so every token counts as occupied.
template <typename Real>
NodeId decode_multiscale(ParamBinding<Real>& P, const std::vector<NodeId>& d_hat_per_scale,
                         const GridSpec& grid, const CodecConfig& cfg) {
    Graph<Real>& g = P.g;
    if (int(d_hat_per_scale.size()) != cfg.scales)
        throw ValidationError("decode_multiscale: need one semantic node per scale");
    const int R = cfg.scales;
    TokenShape ts = token_shape_at(grid, cfg, R);
    NodeId p = g.add(d_hat_per_scale[size_t(R - 1)], P("dec.pos.r" + std::to_string(R)));
    p = run_blocks(P, "dec.s" + std::to_string(R), p, ts, all_occupied(ts), cfg);
    for (int r = R - 1; r >= 1; --r) {
        const TokenShape fine = token_shape_at(grid, cfg, r);
        const NodeId up = g.nearest_upsample_3d(p, ts.arr(), fine.arr());
        const NodeId dr =
            g.add(d_hat_per_scale[size_t(r - 1)], P("dec.pos.r" + std::to_string(r)));
        const NodeId cat = g.concat({up, dr}, 1);
        const NodeId fused = g.add_bias(g.matmul(cat, P("dec.fuse.r" + std::to_string(r) + ".w")),
                                        P("dec.fuse.r" + std::to_string(r) + ".b"));
        ts = fine;
        p = run_blocks(P, "dec.s" + std::to_string(r), fused, ts, all_occupied(ts), cfg);
    }
    const NodeId rows = g.add_bias(g.matmul(p, P("dec.deembed.w")), P("dec.deembed.b"));
    const NodeId map_norm = g.patches_to_map(rows, ts.arr(), grid.blocks, cfg.patch);
    // back to dBm
    Tensor<Real> offset({grid.cell_count(), 1});
    std::fill(offset.data.begin(), offset.data.end(), Real(cfg.in_offset_db));
    return g.add(g.scale(map_norm, Real(cfg.in_scale_db)), g.constant(std::move(offset)));
}

// Per-scale occupancy pyramid for a masked map.
inline std::vector<std::vector<uint8_t>> occupancy_pyramid(const SampleMask& mask,
                                                           const CodecConfig& cfg) {
    std::vector<std::vector<uint8_t>> occ;
    occ.push_back(occupancy_scale1(mask, cfg));
    TokenShape ts = token_shape_at(mask.grid, cfg, 1);
    for (int r = 2; r <= cfg.scales; ++r) {
        const TokenShape next = token_shape_at(mask.grid, cfg, r);
        occ.push_back(occupancy_downscale(occ.back(), ts, next));
        ts = next;
    }
    return occ;
}

inline std::vector<std::vector<uint8_t>> full_occupancy_pyramid(const GridSpec& grid,
                                                                const CodecConfig& cfg) {
    std::vector<std::vector<uint8_t>> occ;
    for (int r = 1; r <= cfg.scales; ++r)
        occ.push_back(all_occupied(token_shape_at(grid, cfg, r)));
    return occ;
}

// Stage-2 predictor: masked map in, per-scale index logits out.
template <typename Real>
std::vector<NodeId> predict_semantics(ParamBinding<Real>& P, const SpectrumMap& masked_map,
                                      const SampleMask& mask, const GridSpec& grid,
                                      const CodecConfig& cfg) {
    const auto rows = make_patch_rows<Real>(masked_map, &mask, cfg);
    const auto occ = occupancy_pyramid(mask, cfg);
    const auto feats = encode_features(P, "pred", rows, occ, grid, cfg, false);
    std::vector<NodeId> logits;
    for (int r = 1; r <= cfg.scales; ++r)
        logits.push_back(
            P.g.add_bias(P.g.matmul(feats[size_t(r - 1)], P("pred.head.r" + std::to_string(r) + ".w")),
                         P("pred.head.r" + std::to_string(r) + ".b")));
    return logits;
}

template <typename Real>
std::vector<int> argmax_rows(const std::vector<Real>& data, int rows, int cols) {
    std::vector<int> out(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        int best = 0;
        Real bv = data[size_t(i) * size_t(cols)];
        for (int j = 1; j < cols; ++j) {
            const Real v = data[size_t(i) * size_t(cols) + size_t(j)];
            if (v > bv) {
                bv = v;
                best = j;
            }
        }
        out[size_t(i)] = best;
    }
    return out;
}

}  // namespace specmap::codec
