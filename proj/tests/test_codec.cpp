#include <gtest/gtest.h>

#include <cmath>

#include "fd_util.hpp"
#include "specmap/codec.hpp"
#include "specmap/propagation.hpp"
#include "specmap/sampling.hpp"

using namespace specmap;
using namespace specmap::codec;
using ad::Graph;
using ad::Tensor;

namespace {

GridSpec desk_grid(int a = 16, int b = 16, int c = 8) {
    GridSpec g;
    g.extent_m = {160.0, 160.0, 120.0};
    g.blocks = {a, b, c};
    return g;
}

CodecConfig small_cfg() {
    CodecConfig cfg;
    cfg.scales = 2;
    cfg.patch = 4;
    cfg.n_win = 4;
    cfg.heads = 2;
    cfg.depth = 2;
    cfg.channels = 16;
    cfg.codebook_size = 32;
    cfg.init_seed = 3;
    return cfg;
}

// Plain full-softmax attention over all tokens, written independently of the
// windowed op, as the equivalence oracle.
std::vector<double> dense_attention_reference(const std::vector<double>& q,
                                              const std::vector<double>& k,
                                              const std::vector<double>& v, int n, int dk,
                                              int dv) {
    std::vector<double> out(size_t(n) * size_t(dv), 0.0);
    for (int i = 0; i < n; ++i) {
        std::vector<double> scores(static_cast<size_t>(n));
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int d = 0; d < dk; ++d)
                s += q[size_t(i * dk + d)] * k[size_t(j * dk + d)];
            scores[size_t(j)] = s / std::sqrt(double(dk));
            mx = std::max(mx, scores[size_t(j)]);
        }
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            scores[size_t(j)] = std::exp(scores[size_t(j)] - mx);
            denom += scores[size_t(j)];
        }
        for (int j = 0; j < n; ++j) {
            const double w = scores[size_t(j)] / denom;
            for (int d = 0; d < dv; ++d)
                out[size_t(i * dv + d)] += w * v[size_t(j * dv + d)];
        }
    }
    return out;
}

}  // namespace

TEST(TokenShapes, DeskGridArithmetic) {
    const auto g = desk_grid();
    CodecConfig cfg = small_cfg();
    const auto s1 = token_shape_at(g, cfg, 1);
    EXPECT_EQ(s1.l, 4);
    EXPECT_EQ(s1.w, 4);
    EXPECT_EQ(s1.h, 2);
    const auto s2 = token_shape_at(g, cfg, 2);
    EXPECT_EQ(s2.l, 2);
    EXPECT_EQ(s2.w, 2);
    EXPECT_EQ(s2.h, 1);
}

TEST(PatchEmbed, AllEmptyInputGivesUniformTokensAndNoOccupancy) {
    const auto g = desk_grid();
    CodecConfig cfg = small_cfg();
    SpectrumMap empty_map(g, kEmptyDbm);
    SampleMask no_mask(g);  // nothing measured
    const auto rows = make_patch_rows<double>(empty_map, &no_mask, cfg);
    for (uint8_t o : rows.occupancy) EXPECT_EQ(o, 0);

    ad::ParameterSet<double> ps;
    init_predictor_params(ps, g, cfg);
    Graph<double> graph;
    ParamBinding<double> P{graph, ps, false};
    const auto emb = embed_tokens(P, "pred", rows, cfg);
    // position encoding aside, all tokens carry the same embedded vector
    Graph<double> graph2;
    ParamBinding<double> P2{graph2, ps, false};
    const auto emb_minus_pos =
        graph2.sub(graph2.constant(graph.val(emb)), P2("pred.pos.r1"));
    const auto& d = graph2.val(emb_minus_pos).data;
    const int C = cfg.channels;
    for (int t = 1; t < rows.shape.count(); ++t)
        for (int c = 0; c < C; ++c)
            EXPECT_NEAR(d[size_t(t * C + c)], d[size_t(c)], 1e-12);
}

TEST(PatchEmbed, LocalityOfProjection) {
    const auto g = desk_grid();
    CodecConfig cfg = small_cfg();
    PropagationParams prm;
    const auto map_a = synthesize_map(g, {Transmitter{{8, 8, 0}, 30.0}}, prm);
    auto map_b = map_a;
    map_b.at(1, 1, 1) += 5.0;  // inside token (0,0,0)

    ad::ParameterSet<double> ps;
    init_stage1_params(ps, g, cfg);
    const auto full = generate_mask(g, 1.0, MaskMode::Uniform, 1);

    Graph<double> ga;
    ParamBinding<double> Pa{ga, ps, false};
    const auto ea = embed_tokens(Pa, "enc", make_patch_rows<double>(map_a, &full, cfg), cfg);
    Graph<double> gb;
    ParamBinding<double> Pb{gb, ps, false};
    const auto eb = embed_tokens(Pb, "enc", make_patch_rows<double>(map_b, &full, cfg), cfg);

    const int C = cfg.channels;
    const auto& da = ga.val(ea).data;
    const auto& db = gb.val(eb).data;
    const auto ts = token_shape_at(g, cfg, 1);
    for (int t = 0; t < ts.count(); ++t) {
        double diff = 0.0;
        for (int c = 0; c < C; ++c) diff += std::abs(da[size_t(t * C + c)] - db[size_t(t * C + c)]);
        if (t == ts.index(0, 0, 0))
            EXPECT_GT(diff, 1e-9);
        else
            EXPECT_NEAR(diff, 0.0, 1e-12);
    }
}

TEST(SparseAttention, MatchesDenseReferenceAtFullWindow) {
    Rng rng(17);
    for (int draw = 0; draw < 10; ++draw) {
        const int n = 24, dk = 8, dv = 8;
        Graph<double> g;
        const auto q = g.constant(fdtest::rand_tensor<double>({n, dk}, rng));
        const auto k = g.constant(fdtest::rand_tensor<double>({n, dk}, rng));
        const auto v = g.constant(fdtest::rand_tensor<double>({n, dv}, rng));
        // full occupancy, window covering the whole 4x3x2 token grid
        TokenShape ts{4, 3, 2};
        const auto nbs = build_neighbor_lists(ts, all_occupied(ts), 8);
        const auto out = g.windowed_attention(q, k, v, nbs, 1.0 / std::sqrt(double(dk)));
        const auto ref = dense_attention_reference(g.val(q).data, g.val(k).data, g.val(v).data,
                                                   n, dk, dv);
        for (size_t i = 0; i < ref.size(); ++i) {
            const double denom = std::max(1e-12, std::abs(ref[i]));
            EXPECT_LT(std::abs(g.val(out).data[i] - ref[i]) / denom, 1e-10);
        }
    }
}

TEST(SparseAttention, SingleOccupiedTokenAttendsToItself) {
    Rng rng(19);
    Graph<double> g;
    const int n = 8, d = 4;
    const auto q = g.constant(fdtest::rand_tensor<double>({n, d}, rng));
    const auto k = g.constant(fdtest::rand_tensor<double>({n, d}, rng));
    const auto v = g.constant(fdtest::rand_tensor<double>({n, d}, rng));
    TokenShape ts{2, 2, 2};
    std::vector<uint8_t> occ(8, 0);
    occ[3] = 1;
    const auto nbs = build_neighbor_lists(ts, occ, 1);
    const auto out = g.windowed_attention(q, k, v, nbs, 0.5);
    for (int c = 0; c < d; ++c)
        EXPECT_DOUBLE_EQ(g.val(out).data[size_t(3 * d + c)], g.val(v).data[size_t(3 * d + c)]);
}

TEST(SparseAttention, PairCountMatchesBruteForce) {
    TokenShape ts{4, 4, 2};
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<uint8_t> occ(size_t(ts.count()));
        for (auto& o : occ) o = uint8_t(rng.next_below(2));
        for (int n_win : {1, 2, 4, 8}) {
            const int radius = n_win / 2;
            // brute force: enumerate ordered occupied pairs within the window
            uint64_t expected = 0;
            for (int qi = 0; qi < ts.count(); ++qi) {
                if (!occ[size_t(qi)]) continue;
                const int qa = qi / (ts.w * ts.h), qb = (qi / ts.h) % ts.w, qc = qi % ts.h;
                for (int ti = 0; ti < ts.count(); ++ti) {
                    if (!occ[size_t(ti)]) continue;
                    const int ta = ti / (ts.w * ts.h), tb = (ti / ts.h) % ts.w, tc = ti % ts.h;
                    const int cheb =
                        std::max({std::abs(qa - ta), std::abs(qb - tb), std::abs(qc - tc)});
                    if (cheb <= radius) ++expected;
                }
            }
            EXPECT_EQ(count_attention_pairs(ts, occ, radius), expected) << "n_win " << n_win;
        }
    }
}

TEST(Quantize, ExactRowAndTieRule) {
    // rows on a far shell except 3 and 7, which sit symmetrically about the
    // origin; a zero token ties between them
    Tensor<double> codebook({8, 3});
    for (int l = 0; l < 8; ++l) {
        codebook.data[size_t(l * 3 + 0)] = 50.0 + l;
        codebook.data[size_t(l * 3 + 1)] = 50.0;
        codebook.data[size_t(l * 3 + 2)] = 50.0;
    }
    codebook.data[size_t(3 * 3 + 0)] = 1.0;
    codebook.data[size_t(3 * 3 + 1)] = 0.0;
    codebook.data[size_t(3 * 3 + 2)] = 0.0;
    codebook.data[size_t(7 * 3 + 0)] = -1.0;
    codebook.data[size_t(7 * 3 + 1)] = 0.0;
    codebook.data[size_t(7 * 3 + 2)] = 0.0;

    Tensor<double> feats({2, 3});
    // token 0 equal to row 5 exactly
    for (int c = 0; c < 3; ++c) feats.data[size_t(c)] = codebook.data[size_t(5 * 3 + c)];
    // token 1 at the origin: equidistant to rows 3 and 7
    feats.data[3] = 0.0;
    feats.data[4] = 0.0;
    feats.data[5] = 0.0;

    const auto q = quantize_rows(feats, codebook);
    EXPECT_EQ(q.indices[0], 5);
    EXPECT_EQ(q.indices[1], 3);  // tie broken toward the lower index
}

TEST(Quantize, MatchesExhaustiveScan) {
    Rng rng(31);
    Tensor<double> codebook({32, 6});
    for (auto& v : codebook.data) v = rng.next_normal();
    Tensor<double> feats({40, 6});
    for (auto& v : feats.data) v = rng.next_normal();
    const auto q = quantize_rows(feats, codebook);
    for (int i = 0; i < 40; ++i) {
        double best = 1e300;
        int best_idx = -1;
        for (int l = 0; l < 32; ++l) {
            double d = 0.0;
            for (int c = 0; c < 6; ++c) {
                const double e = feats.data[size_t(i * 6 + c)] - codebook.data[size_t(l * 6 + c)];
                d += e * e;
            }
            if (d < best) {
                best = d;
                best_idx = l;
            }
        }
        EXPECT_EQ(q.indices[size_t(i)], best_idx);
    }
}

TEST(Quantize, IdempotentOnCodebookRows) {
    Rng rng(37);
    Tensor<double> codebook({32, 6});
    for (auto& v : codebook.data) v = rng.next_normal();
    std::vector<int> indices{0, 5, 31, 16, 5};
    const auto rows = lookup_rows(codebook, indices);
    const auto q = quantize_rows(rows, codebook);
    EXPECT_EQ(q.indices, indices);
}

TEST(Decode, ShapeAndDeterminism) {
    const auto g = desk_grid();
    CodecConfig cfg = small_cfg();
    ad::ParameterSet<double> ps;
    init_stage1_params(ps, g, cfg);

    Rng rng(41);
    std::vector<std::vector<int>> idx_per_scale;
    for (int r = 1; r <= cfg.scales; ++r) {
        const auto ts = token_shape_at(g, cfg, r);
        std::vector<int> idx;
        for (int i = 0; i < ts.count(); ++i)
            idx.push_back(int(rng.next_below(uint64_t(cfg.codebook_size))));
        idx_per_scale.push_back(idx);
    }

    const auto run = [&]() {
        Graph<double> graph;
        ParamBinding<double> P{graph, ps, false};
        std::vector<ad::NodeId> d_hat;
        for (int r = 1; r <= cfg.scales; ++r)
            d_hat.push_back(graph.gather_rows(P("cb.r" + std::to_string(r)),
                                              idx_per_scale[size_t(r - 1)]));
        const auto out = decode_multiscale(P, d_hat, g, cfg);
        return graph.val(out).data;
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(int(a.size()), g.cell_count());
    EXPECT_EQ(a, b);
}

TEST(Decode, SingleScaleDegeneratesToPlainVq) {
    const auto g = desk_grid();
    CodecConfig cfg = small_cfg();
    cfg.scales = 1;
    ad::ParameterSet<double> ps;
    init_stage1_params(ps, g, cfg);
    Graph<double> graph;
    ParamBinding<double> P{graph, ps, false};
    const auto ts = token_shape_at(g, cfg, 1);
    std::vector<int> idx(size_t(ts.count()), 3);
    const auto out =
        decode_multiscale(P, {graph.gather_rows(P("cb.r1"), idx)}, g, cfg);
    EXPECT_EQ(int(graph.val(out).data.size()), g.cell_count());
    EXPECT_FALSE(ps.has("dec.fuse.r1.w"));
}

TEST(Decode, EndToEndShapePreservingAcrossGrids) {
    Rng rng(43);
    CodecConfig cfg = small_cfg();
    cfg.depth = 1;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.codebook_size = 16;
    PropagationParams prm;
    for (int trial = 0; trial < 6; ++trial) {
        GridSpec g;
        g.extent_m = {160.0, 160.0, 120.0};
        g.blocks = {int(4 + rng.next_below(14)), int(4 + rng.next_below(14)),
                    int(4 + rng.next_below(7))};
        const auto map =
            synthesize_map(g, {Transmitter{{0, 0, 0}, 30.0}}, prm);

        ad::ParameterSet<double> ps;
        cfg.init_seed = 100 + uint64_t(trial);
        init_stage1_params(ps, g, cfg);
        Graph<double> graph;
        ParamBinding<double> P{graph, ps, false};
        const auto rows = make_patch_rows<double>(map, nullptr, cfg);
        const auto occ = full_occupancy_pyramid(g, cfg);
        const auto feats = encode_features(P, "enc", rows, occ, g, cfg, true);
        std::vector<ad::NodeId> d_hat;
        for (int r = 1; r <= cfg.scales; ++r) {
            const auto q =
                quantize_rows(graph.val(feats[size_t(r - 1)]), ps.at("cb.r" + std::to_string(r)).value);
            d_hat.push_back(graph.gather_rows(P("cb.r" + std::to_string(r)), q.indices));
        }
        const auto out = decode_multiscale(P, d_hat, g, cfg);
        EXPECT_EQ(int(graph.val(out).data.size()), g.cell_count()) << "grid trial " << trial;
    }
}

TEST(Predictor, LogitShapesAndUniformCe) {
    const auto g = desk_grid();
    CodecConfig cfg = small_cfg();
    ad::ParameterSet<double> ps;
    init_predictor_params(ps, g, cfg);
    PropagationParams prm;
    const auto truth = synthesize_map(g, {Transmitter{{4, 4, 0}, 30.0}}, prm);
    const auto mask = generate_mask(g, 0.2, MaskMode::Trajectory, 7);
    const auto masked = apply_mask(truth, mask);

    Graph<double> graph;
    ParamBinding<double> P{graph, ps, false};
    const auto logits = predict_semantics(P, masked, mask, g, cfg);
    ASSERT_EQ(int(logits.size()), cfg.scales);
    for (int r = 1; r <= cfg.scales; ++r) {
        const auto ts = token_shape_at(g, cfg, r);
        EXPECT_EQ(graph.val(logits[size_t(r - 1)]).shape,
                  (std::vector<int>{ts.count(), cfg.codebook_size}));
    }

    // uniform logits -> summed CE = sum_r tokens_r * ln L
    Graph<double> g2;
    double expected = 0.0;
    std::vector<ad::NodeId> ces;
    for (int r = 1; r <= cfg.scales; ++r) {
        const auto ts = token_shape_at(g, cfg, r);
        const auto uniform = g2.constant(Tensor<double>({ts.count(), cfg.codebook_size}));
        ces.push_back(g2.cross_entropy_logits(uniform, std::vector<int>(size_t(ts.count()), 0)));
        expected += ts.count() * std::log(double(cfg.codebook_size));
    }
    ad::NodeId total = ces[0];
    for (size_t i = 1; i < ces.size(); ++i) total = g2.add(total, ces[i]);
    EXPECT_NEAR(g2.val(total).data[0], expected, 1e-9);
}

TEST(StraightThrough, EncoderGradNormEqualsDecoderInputGradNorm) {
    Rng rng(47);
    Graph<double> g;
    const auto d = g.value(fdtest::rand_tensor<double>({6, 5}, rng));
    Tensor<double> received = fdtest::rand_tensor<double>({6, 5}, rng);
    const auto st = g.straight_through(d, received);
    const auto downstream = g.constant(fdtest::rand_tensor<double>({5, 3}, rng));
    const auto loss = g.mean_sq(g.matmul(st, downstream));
    g.backward(loss);
    double n_d = 0.0, n_st = 0.0;
    for (double v : g.grad(d).data) n_d += v * v;
    for (double v : g.grad(st).data) n_st += v * v;
    EXPECT_NEAR(std::sqrt(n_d), std::sqrt(n_st), 1e-14);
}
