#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "specmap/errors.hpp"
#include "specmap/grid.hpp"
#include "specmap/propagation.hpp"
#include "specmap/sampling.hpp"

namespace specmap {

static_assert(std::endian::native == std::endian::little,
              "dataset blobs are little-endian; big-endian hosts unsupported");

// One dataset record: ground-truth map, the UAV mask that was flown over it,
// and the transmitters that generated it. On disk this is a JSON sidecar
// `<id>.json` plus `<id>.f32` holding the full map as little-endian float32
// in x-major, then y, then z order. The mask is stored as its generator spec
// (mode, tau, seed) and regenerated on load; generate_mask is deterministic.
struct DatasetRecord {
    SpectrumMap truth;
    SampleMask mask;
    std::vector<Transmitter> transmitters;
    PropagationParams params;
    double tau = 0.15;
    MaskMode mask_mode = MaskMode::Trajectory;
    uint64_t mask_seed = 0;
};

struct DatasetGenConfig {
    int count = 1;
    GridSpec grid;
    int tx_min = 1;
    int tx_max = 3;
    std::vector<double> power_pool_dbm{26.0, 28.0, 30.0, 30.0, 28.0, 26.0};
    PropagationParams params;
    double tau = 0.15;
    MaskMode mask_mode = MaskMode::Trajectory;
    int ground_layers = 1;  // transmitters land in the lowest z layers
    uint64_t seed = 1;
};

namespace detail {

inline nlohmann::json grid_to_json(const GridSpec& g) {
    return {{"extent_m", g.extent_m}, {"blocks", g.blocks}};
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
    GridSpec g;
    j.at("extent_m").get_to(g.extent_m);
    j.at("blocks").get_to(g.blocks);
    g.validate();
    return g;
}

inline nlohmann::json params_to_json(const PropagationParams& p) {
    return {{"freq_hz", p.freq_hz},
            {"antenna_gain", p.antenna_gain},
            {"shadow_sigma_db", p.shadow_sigma_db},
            {"noise_sigma_w", p.noise_sigma_w},
            {"rng_seed", p.rng_seed}};
}

inline PropagationParams params_from_json(const nlohmann::json& j) {
    PropagationParams p;
    j.at("freq_hz").get_to(p.freq_hz);
    j.at("antenna_gain").get_to(p.antenna_gain);
    j.at("shadow_sigma_db").get_to(p.shadow_sigma_db);
    j.at("noise_sigma_w").get_to(p.noise_sigma_w);
    j.at("rng_seed").get_to(p.rng_seed);
    p.validate();
    return p;
}

}  // namespace detail

inline void write_f32_blob(const std::filesystem::path& path, const std::vector<float>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              std::streamsize(data.size() * sizeof(float)));
    if (!out) throw IoError("short write: " + path.string());
}

inline std::vector<float> read_f32_blob(const std::filesystem::path& path, size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::vector<float> data(expected);
    in.read(reinterpret_cast<char*>(data.data()), std::streamsize(expected * sizeof(float)));
    if (size_t(in.gcount()) != expected * sizeof(float))
        throw IoError("blob size mismatch: " + path.string());
    return data;
}

inline void write_record(const std::filesystem::path& dir, const std::string& id,
                         const DatasetRecord& rec) {
    std::filesystem::create_directories(dir);
    nlohmann::json side;
    side["schema"] = "specmap-record-v1";
    side["grid"] = detail::grid_to_json(rec.truth.grid);
    side["params"] = detail::params_to_json(rec.params);
    nlohmann::json txs = nlohmann::json::array();
    for (const auto& t : rec.transmitters)
        txs.push_back({{"cell", t.cell}, {"power_dbm", t.power_dbm}});
    side["transmitters"] = txs;
    side["tau"] = rec.tau;
    side["mask"] = {{"mode", to_string(rec.mask_mode)},
                    {"seed", rec.mask_seed},
                    {"measured_count", rec.mask.measured_count()}};
    side["empty_dbm"] = kEmptyDbm;
    side["map_file"] = id + ".f32";

    std::ofstream out(dir / (id + ".json"), std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + (dir / (id + ".json")).string());
    out << side.dump(2) << "\n";

    std::vector<float> blob(rec.truth.values_dbm.size());
    for (size_t i = 0; i < blob.size(); ++i) blob[i] = float(rec.truth.values_dbm[i]);
    write_f32_blob(dir / (id + ".f32"), blob);
}

inline DatasetRecord read_record(const std::filesystem::path& dir, const std::string& id) {
    const auto side_path = dir / (id + ".json");
    std::ifstream in(side_path);
    if (!in) throw IoError("cannot open: " + side_path.string());
    nlohmann::json side;
    try {
        in >> side;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad sidecar " + side_path.string() + ": " + e.what());
    }
    try {
        if (side.at("schema").get<std::string>() != "specmap-record-v1")
            throw IoError("unknown schema in " + side_path.string());
        DatasetRecord rec;
        const GridSpec grid = detail::grid_from_json(side.at("grid"));
        rec.params = detail::params_from_json(side.at("params"));
        for (const auto& jt : side.at("transmitters")) {
            Transmitter t;
            jt.at("cell").get_to(t.cell);
            jt.at("power_dbm").get_to(t.power_dbm);
            rec.transmitters.push_back(t);
        }
        side.at("tau").get_to(rec.tau);
        rec.mask_mode = mask_mode_from_string(side.at("mask").at("mode").get<std::string>());
        side.at("mask").at("seed").get_to(rec.mask_seed);

        const auto blob = read_f32_blob(dir / side.at("map_file").get<std::string>(),
                                        size_t(grid.cell_count()));
        rec.truth = SpectrumMap(grid);
        for (size_t i = 0; i < blob.size(); ++i) rec.truth.values_dbm[i] = double(blob[i]);

        rec.mask = generate_mask(grid, rec.tau, rec.mask_mode, rec.mask_seed);
        const int expected = side.at("mask").at("measured_count").get<int>();
        if (rec.mask.measured_count() != expected)
            throw IoError("mask regeneration mismatch in " + side_path.string());
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad sidecar " + side_path.string() + ": " + e.what());
    }
}

inline std::vector<std::string> list_records(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("no such dataset dir: " + dir.string());
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".json") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline std::string record_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "map_%05d", index);
    return buf;
}

// Build one record; every random draw comes from streams derived from
// (seed, index), so records are independent of generation order.
inline DatasetRecord make_record(const DatasetGenConfig& cfg, int index) {
    cfg.grid.validate();
    if (cfg.count < 1) throw ValidationError("sample_dataset: count must be >= 1");
    if (cfg.tx_min < 1 || cfg.tx_max < cfg.tx_min)
        throw ValidationError("sample_dataset: bad transmitter count range");
    if (cfg.power_pool_dbm.empty()) throw ValidationError("sample_dataset: empty power pool");

    Rng rng = Rng::derive(cfg.seed, uint64_t(index));
    const int n_tx = int(rng.next_int(cfg.tx_min, cfg.tx_max));
    const int zmax = std::min(cfg.ground_layers, cfg.grid.blocks[2]);

    DatasetRecord rec;
    for (int t = 0; t < n_tx; ++t) {
        Transmitter tx;
        for (int attempt = 0;; ++attempt) {
            tx.cell = {int(rng.next_below(uint64_t(cfg.grid.blocks[0]))),
                       int(rng.next_below(uint64_t(cfg.grid.blocks[1]))),
                       int(rng.next_below(uint64_t(zmax)))};
            bool clash = false;
            for (const auto& other : rec.transmitters) clash |= other.cell == tx.cell;
            if (!clash) break;
            if (attempt > 1000) throw ValidationError("sample_dataset: grid too small for txs");
        }
        tx.power_dbm = cfg.power_pool_dbm[rng.next_below(cfg.power_pool_dbm.size())];
        rec.transmitters.push_back(tx);
    }

    rec.params = cfg.params;
    rec.params.rng_seed = Rng::derive(cfg.seed, uint64_t(index)).next_u64();
    rec.truth = synthesize_map(cfg.grid, rec.transmitters, rec.params);
    rec.tau = cfg.tau;
    rec.mask_mode = cfg.mask_mode;
    rec.mask_seed = Rng::derive(cfg.seed, 0x8000000u + uint64_t(index)).next_u64();
    rec.mask = generate_mask(cfg.grid, cfg.tau, cfg.mask_mode, rec.mask_seed);
    return rec;
}

inline void sample_dataset(const DatasetGenConfig& cfg, const std::filesystem::path& dir) {
    for (int i = 0; i < cfg.count; ++i) write_record(dir, record_id(i), make_record(cfg, i));
}

}  // namespace specmap
