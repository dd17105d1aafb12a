#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "specmap/dataset.hpp"

using namespace specmap;
namespace fs = std::filesystem;

namespace {

DatasetGenConfig desk_config() {
    DatasetGenConfig cfg;
    cfg.count = 3;
    cfg.grid.extent_m = {160.0, 160.0, 120.0};
    cfg.grid.blocks = {16, 16, 8};
    cfg.tx_min = 1;
    cfg.tx_max = 3;
    cfg.tau = 0.2;
    cfg.ground_layers = 1;
    cfg.seed = 1234;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct TmpDir {
    fs::path path;
    TmpDir() : path(fs::temp_directory_path() / ("specmap_test_" + std::to_string(::getpid()) +
                                                 "_" + std::to_string(counter++))) {
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    static inline int counter = 0;
};

}  // namespace

TEST(Dataset, ByteIdenticalOnRerun) {
    TmpDir d1, d2;
    const auto cfg = desk_config();
    sample_dataset(cfg, d1.path);
    sample_dataset(cfg, d2.path);
    for (const auto& id : list_records(d1.path)) {
        EXPECT_EQ(slurp(d1.path / (id + ".json")), slurp(d2.path / (id + ".json")));
        EXPECT_EQ(slurp(d1.path / (id + ".f32")), slurp(d2.path / (id + ".f32")));
    }
}

TEST(Dataset, TransmittersInGroundBand) {
    TmpDir dir;
    auto cfg = desk_config();
    cfg.count = 8;
    cfg.ground_layers = 2;
    sample_dataset(cfg, dir.path);
    for (const auto& id : list_records(dir.path)) {
        const auto rec = read_record(dir.path, id);
        ASSERT_GE(rec.transmitters.size(), 1u);
        ASSERT_LE(rec.transmitters.size(), 3u);
        for (const auto& tx : rec.transmitters) EXPECT_LT(tx.cell[2], 2);
    }
}

TEST(Dataset, ReloadReproducesSynthesisBitExactly) {
    TmpDir dir;
    const auto cfg = desk_config();
    sample_dataset(cfg, dir.path);
    for (const auto& id : list_records(dir.path)) {
        const auto rec = read_record(dir.path, id);
        const auto resynth = synthesize_map(rec.truth.grid, rec.transmitters, rec.params);
        ASSERT_EQ(rec.truth.values_dbm.size(), resynth.values_dbm.size());
        for (size_t i = 0; i < resynth.values_dbm.size(); ++i) {
            // file stores float32; loaded doubles must equal the cast exactly
            EXPECT_EQ(float(rec.truth.values_dbm[i]), float(resynth.values_dbm[i]));
            EXPECT_EQ(rec.truth.values_dbm[i], double(float(resynth.values_dbm[i])));
        }
    }
}

TEST(Dataset, MaskRegeneratedFromSidecar) {
    TmpDir dir;
    const auto cfg = desk_config();
    sample_dataset(cfg, dir.path);
    const auto ids = list_records(dir.path);
    ASSERT_EQ(int(ids.size()), cfg.count);
    const auto rec = read_record(dir.path, ids[0]);
    const auto again = generate_mask(rec.truth.grid, rec.tau, rec.mask_mode, rec.mask_seed);
    EXPECT_EQ(rec.mask.measured, again.measured);
}

TEST(Dataset, MissingFilesSurfaceWithPath) {
    TmpDir dir;
    try {
        read_record(dir.path, "nope");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("nope.json"), std::string::npos);
    }
}
