#include <gtest/gtest.h>

#include <cmath>

#include "specmap/baselines.hpp"
#include "specmap/propagation.hpp"
#include "specmap/sampling.hpp"

using namespace specmap;

namespace {
GridSpec grid(int a, int b, int c, double ex = 160.0, double ey = 160.0, double ez = 120.0) {
    GridSpec g;
    g.extent_m = {ex, ey, ez};
    g.blocks = {a, b, c};
    return g;
}
}  // namespace

TEST(Idw, SingleSampleFillsEverything) {
    const auto g = grid(4, 4, 2);
    SpectrumMap masked(g, kEmptyDbm);
    SampleMask mask(g);
    masked.at(1, 2, 0) = -42.5;
    mask.measured[size_t(g.index_of(1, 2, 0))] = 1;
    const auto out = idw_complete(masked, mask, 2.0);
    for (double v : out.values_dbm) EXPECT_DOUBLE_EQ(v, -42.5);
}

TEST(Idw, EquidistantPairAveragesForAnyP) {
    // probe voxel exactly between two samples along x
    const auto g = grid(3, 1, 1, 30.0, 10.0, 10.0);
    SpectrumMap masked(g, kEmptyDbm);
    SampleMask mask(g);
    masked.at(0, 0, 0) = -10.0;
    masked.at(2, 0, 0) = -30.0;
    mask.measured[size_t(g.index_of(0, 0, 0))] = 1;
    mask.measured[size_t(g.index_of(2, 0, 0))] = 1;
    for (double p : {0.5, 1.0, 2.0, 7.0}) {
        const auto out = idw_complete(masked, mask, p);
        EXPECT_NEAR(out.at(1, 0, 0), -20.0, 1e-12) << "p=" << p;
    }
}

TEST(Idw, ThreeSampleToyMatchesHandExpansion) {
    // 2x2x1 grid, 10 m blocks; samples at three corners, probe at the fourth
    const auto g = grid(2, 2, 1, 20.0, 20.0, 10.0);
    SpectrumMap masked(g, kEmptyDbm);
    SampleMask mask(g);
    const double v00 = -10.0, v01 = -20.0, v10 = -40.0;
    masked.at(0, 0, 0) = v00;
    masked.at(0, 1, 0) = v01;
    masked.at(1, 0, 0) = v10;
    mask.measured[size_t(g.index_of(0, 0, 0))] = 1;
    mask.measured[size_t(g.index_of(0, 1, 0))] = 1;
    mask.measured[size_t(g.index_of(1, 0, 0))] = 1;

    // probe (1,1,0): d to (0,0) = 10*sqrt(2), to (0,1) = 10, to (1,0) = 10
    const double w00 = 1.0 / std::pow(10.0 * std::sqrt(2.0), 2.0);
    const double w01 = 1.0 / std::pow(10.0, 2.0);
    const double w10 = 1.0 / std::pow(10.0, 2.0);
    const double expected = (w00 * v00 + w01 * v01 + w10 * v10) / (w00 + w01 + w10);

    const auto out = idw_complete(masked, mask, 2.0);
    EXPECT_NEAR(out.at(1, 1, 0), expected, 1e-12);
}

TEST(Idw, ExactAtMeasuredVoxelsAndConvexBounds) {
    const auto g = grid(8, 8, 4);
    PropagationParams params;
    const auto truth = synthesize_map(g, {Transmitter{{2, 3, 1}, 30.0}}, params);
    const auto mask = generate_mask(g, 0.2, MaskMode::Trajectory, 4);
    const auto masked = apply_mask(truth, mask);
    const auto out = idw_complete(masked, mask, 2.0);

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = 0; i < g.cell_count(); ++i)
        if (mask.measured[size_t(i)]) {
            lo = std::min(lo, truth.values_dbm[size_t(i)]);
            hi = std::max(hi, truth.values_dbm[size_t(i)]);
        }
    for (int i = 0; i < g.cell_count(); ++i) {
        if (mask.measured[size_t(i)]) {
            EXPECT_DOUBLE_EQ(out.values_dbm[size_t(i)], truth.values_dbm[size_t(i)]);
        } else {
            EXPECT_GE(out.values_dbm[size_t(i)], lo - 1e-12);
            EXPECT_LE(out.values_dbm[size_t(i)], hi + 1e-12);
        }
    }
}

TEST(Idw, LargePApproachesNearestNeighbor) {
    const auto g = grid(5, 1, 1, 50.0, 10.0, 10.0);
    SpectrumMap masked(g, kEmptyDbm);
    SampleMask mask(g);
    masked.at(0, 0, 0) = -10.0;
    masked.at(4, 0, 0) = -50.0;
    mask.measured[size_t(g.index_of(0, 0, 0))] = 1;
    mask.measured[size_t(g.index_of(4, 0, 0))] = 1;
    const auto out = idw_complete(masked, mask, 20.0);
    // voxel 1 is 10 m from the left sample, 30 m from the right one
    EXPECT_NEAR(out.at(1, 0, 0), -10.0, 1e-6);
    EXPECT_NEAR(out.at(3, 0, 0), -50.0, 1e-6);
}

TEST(Idw, RejectsEmptyMaskAndBadP) {
    const auto g = grid(2, 2, 1);
    SpectrumMap masked(g, kEmptyDbm);
    SampleMask mask(g);
    EXPECT_THROW(idw_complete(masked, mask, 2.0), ValidationError);
    mask.measured[0] = 1;
    EXPECT_THROW(idw_complete(masked, mask, 0.0), ValidationError);
}

TEST(Idw, ThreadedMatchesSerial) {
    const auto g = grid(8, 8, 4);
    PropagationParams params;
    const auto truth = synthesize_map(g, {Transmitter{{5, 5, 2}, 28.0}}, params);
    const auto mask = generate_mask(g, 0.15, MaskMode::Uniform, 12);
    const auto masked = apply_mask(truth, mask);
    const auto serial = idw_complete(masked, mask, 2.0, 1);
    const auto parallel = idw_complete(masked, mask, 2.0, 4);
    EXPECT_EQ(serial.values_dbm, parallel.values_dbm);
}
