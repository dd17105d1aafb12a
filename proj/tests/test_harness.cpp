#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "specmap/harness.hpp"

using namespace specmap;
using namespace specmap::harness;
using ad::ParameterSet;
using codec::CodecConfig;

namespace {

GridSpec desk_grid() {
    GridSpec g;
    g.extent_m = {160.0, 160.0, 120.0};
    g.blocks = {16, 16, 8};
    return g;
}

CodecConfig tiny_cfg() {
    CodecConfig cfg;
    cfg.scales = 2;
    cfg.patch = 4;
    cfg.n_win = 2;
    cfg.heads = 2;
    cfg.depth = 1;
    cfg.channels = 8;
    cfg.codebook_size = 256;
    cfg.init_seed = 5;
    return cfg;
}

std::vector<DatasetRecord> tiny_dataset(int count, uint64_t seed, double tau = 0.2) {
    DatasetGenConfig gen;
    gen.count = count;
    gen.grid = desk_grid();
    gen.tau = tau;
    gen.seed = seed;
    std::vector<DatasetRecord> recs;
    for (int i = 0; i < count; ++i) recs.push_back(make_record(gen, i));
    return recs;
}

ParameterSet<double> untrained_model(const CodecConfig& cfg) {
    ParameterSet<double> ps;
    codec::init_stage1_params(ps, desk_grid(), cfg);
    codec::init_predictor_params(ps, desk_grid(), cfg);
    return ps;
}

}  // namespace

TEST(Evaluate, SemanticPathEmitsFiniteMetrics) {
    const auto cfg = tiny_cfg();
    auto ps = untrained_model(cfg);
    const auto recs = tiny_dataset(3, 21);
    EvalConfig ec;
    ec.chan.snr_db = 12.0;
    std::vector<MetricReport> per_map;
    const auto agg = evaluate_semantic_dataset(ps, recs, cfg, ec, &per_map);
    EXPECT_EQ(per_map.size(), recs.size());
    for (const auto& r : per_map) {
        EXPECT_TRUE(std::isfinite(r.rkmse));
        EXPECT_GE(r.kmse, r.mse);
        EXPECT_NEAR(r.rkmse, std::sqrt(r.kmse), 1e-12);
    }
    EXPECT_TRUE(std::isfinite(agg.rkmse));
}

TEST(Evaluate, IdwPerfectAtFullTauAndInfiniteSnr) {
    auto recs = tiny_dataset(2, 22, 1.0);
    EvalConfig ec;
    ec.chan.snr_infinite = true;
    std::vector<MetricReport> per_map;
    evaluate_idw_dataset(recs, 2.0, ec, &per_map);
    for (const auto& r : per_map) EXPECT_DOUBLE_EQ(r.mse, 0.0);
}

TEST(Evaluate, DeterministicGivenSeed) {
    const auto cfg = tiny_cfg();
    auto ps = untrained_model(cfg);
    const auto recs = tiny_dataset(2, 23);
    EvalConfig ec;
    ec.chan.snr_db = 8.0;
    ec.seed = 99;
    const auto a = evaluate_semantic_dataset(ps, recs, cfg, ec);
    const auto b = evaluate_semantic_dataset(ps, recs, cfg, ec);
    EXPECT_EQ(a.rkmse, b.rkmse);
    EXPECT_EQ(a.mse, b.mse);
}

TEST(Sweep, RowCountAndCsvRoundTrip) {
    const auto cfg = tiny_cfg();
    auto ps = untrained_model(cfg);
    const auto recs = tiny_dataset(2, 24);
    SweepSpec spec;
    spec.axis = SweepAxis::Snr;
    spec.values = {0.0, 6.0, 12.0};
    spec.repeats = 2;
    spec.method = "both";
    spec.seed = 7;
    EvalConfig ec;
    const auto rows = run_sweep(&ps, cfg, recs, spec, ec, 2);
    EXPECT_EQ(rows.size(), 3u * 2u * 2u);  // values x repeats x methods

    const auto path = std::filesystem::temp_directory_path() / "specmap_sweep_test.csv";
    write_sweep_csv(rows, path);
    const auto back = read_sweep_csv(path);
    ASSERT_EQ(back.size(), rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back[i].axis, rows[i].axis);
        EXPECT_EQ(back[i].method, rows[i].method);
        EXPECT_NEAR(back[i].report.rkmse, rows[i].report.rkmse, 1e-9);
    }
    std::filesystem::remove(path);
}

TEST(Sweep, ReproducibleRowsForFixedSeed) {
    const auto cfg = tiny_cfg();
    auto ps = untrained_model(cfg);
    const auto recs = tiny_dataset(2, 25);
    SweepSpec spec;
    spec.axis = SweepAxis::Tau;
    spec.values = {0.1, 0.3};
    spec.repeats = 2;
    spec.method = "idw";
    spec.seed = 13;
    EvalConfig ec;
    const auto a = run_sweep<double>(nullptr, cfg, recs, spec, ec, 2);
    const auto b = run_sweep<double>(nullptr, cfg, recs, spec, ec, 1);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].report.mse, b[i].report.mse);
        EXPECT_EQ(a[i].report.kmse, b[i].report.kmse);
    }
}

TEST(Sweep, NTxAxisRegeneratesData) {
    const auto cfg = tiny_cfg();
    const auto recs = tiny_dataset(2, 26);
    SweepSpec spec;
    spec.axis = SweepAxis::NTx;
    spec.values = {1.0, 4.0};
    spec.repeats = 1;
    spec.method = "idw";
    EvalConfig ec;
    const auto rows = run_sweep<double>(nullptr, cfg, recs, spec, ec, 1);
    EXPECT_EQ(rows.size(), 2u);
    for (const auto& r : rows) EXPECT_EQ(r.n_maps, 2);
}

TEST(Report, MarkdownContainsTablesAndDirections) {
    const auto cfg = tiny_cfg();
    const auto recs = tiny_dataset(2, 27);
    SweepSpec spec;
    spec.axis = SweepAxis::Snr;
    spec.values = {0.0, 12.0};
    spec.repeats = 1;
    spec.method = "idw";
    EvalConfig ec;
    const auto rows = run_sweep<double>(nullptr, cfg, recs, spec, ec, 1);
    const auto md = render_report_markdown(rows);
    EXPECT_NE(md.find("| snr |"), std::string::npos);
    EXPECT_NE(md.find("method: idw"), std::string::npos);
    EXPECT_NE(md.find("rkmse(snr=12) <= rkmse(snr=0)"), std::string::npos);
}
