#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "specmap/dataset.hpp"
#include "specmap/errors.hpp"
#include "specmap/optim.hpp"

namespace specmap {

// Checkpoint format, matching the dataset convention: `<stem>.json` manifest
// (names, shapes, blob offsets) plus `<stem>.f32` with every parameter
// concatenated as little-endian float32 in manifest order.
template <typename Real>
void save_checkpoint(const ad::ParameterSet<Real>& ps, const std::filesystem::path& stem,
                     const nlohmann::json& meta) {
    nlohmann::json manifest;
    manifest["schema"] = "specmap-checkpoint-v1";
    manifest["meta"] = meta;
    manifest["blob"] = stem.filename().string() + ".f32";
    nlohmann::json params = nlohmann::json::array();
    std::vector<float> blob;
    for (const auto& [name, e] : ps.entries()) {
        params.push_back({{"name", name}, {"shape", e.value.shape}, {"offset", blob.size()}});
        for (Real v : e.value.data) blob.push_back(float(v));
    }
    manifest["params"] = params;

    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    std::ofstream out(stem.string() + ".json", std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + stem.string() + ".json");
    out << manifest.dump(2) << "\n";
    write_f32_blob(stem.string() + ".f32", blob);
}

template <typename Real>
nlohmann::json load_checkpoint(ad::ParameterSet<Real>& ps, const std::filesystem::path& stem) {
    std::ifstream in(stem.string() + ".json");
    if (!in) throw IoError("cannot open: " + stem.string() + ".json");
    nlohmann::json manifest;
    try {
        in >> manifest;
        if (manifest.at("schema").get<std::string>() != "specmap-checkpoint-v1")
            throw IoError("unknown checkpoint schema: " + stem.string());
        size_t total = 0;
        for (const auto& p : manifest.at("params")) {
            size_t n = 1;
            for (int d : p.at("shape").get<std::vector<int>>()) n *= size_t(d);
            total = std::max(total, p.at("offset").get<size_t>() + n);
        }
        const auto blob =
            read_f32_blob(stem.parent_path() / manifest.at("blob").get<std::string>(), total);
        for (const auto& p : manifest.at("params")) {
            const auto name = p.at("name").get<std::string>();
            const auto shape = p.at("shape").get<std::vector<int>>();
            const size_t offset = p.at("offset").get<size_t>();
            ad::Tensor<Real> t(shape);
            for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = Real(blob[offset + i]);
            if (ps.has(name))
                ps.at(name).value = std::move(t);
            else
                ps.add(name, std::move(t));
        }
        return manifest.at("meta");
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint " + stem.string() + ": " + e.what());
    }
}

}  // namespace specmap
