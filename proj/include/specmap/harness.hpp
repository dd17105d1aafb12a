#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "specmap/baselines.hpp"
#include "specmap/channel.hpp"
#include "specmap/checkpoint.hpp"
#include "specmap/codec.hpp"
#include "specmap/dataset.hpp"
#include "specmap/metrics.hpp"
#include "specmap/training.hpp"

namespace specmap::harness {

using ad::ParameterSet;
using codec::CodecConfig;

struct EvalConfig {
    ChannelConfig chan;
    bool randomize_distance = true;  // draw d0 from [50, 500] m per map
    int region_radius = 3;
    int varphi = 2;
    double zeta_db = 3.0;
    uint64_t seed = 1;
};

inline ChannelConfig channel_for_map(const EvalConfig& ec, uint64_t stream) {
    ChannelConfig chan = ec.chan;
    Rng rng = Rng::derive(ec.seed, 0xe7a1u + stream);
    if (ec.randomize_distance) chan.distance_m = 50.0 + 450.0 * rng.next_unit();
    chan.rng_seed = rng.next_u64();
    return chan;
}

// Semantic completion path: masked map -> predictor indices -> channel ->
// decoder -> physics-aware scoring against the ground truth.
template <typename Real>
SpectrumMap reconstruct_semantic(ParameterSet<Real>& params, const DatasetRecord& rec,
                                 const CodecConfig& cfg, const ChannelConfig& chan) {
    const GridSpec& grid = rec.truth.grid;
    ad::Graph<Real> g;
    codec::ParamBinding<Real> P{g, params, false};
    const auto masked = apply_mask(rec.truth, rec.mask);
    const auto logits = codec::predict_semantics(P, masked, rec.mask, grid, cfg);
    std::vector<ScaleIndices> sent;
    for (int r = 1; r <= cfg.scales; ++r) {
        const auto& lv = g.val(logits[size_t(r - 1)]);
        sent.push_back({uint8_t(r), codec::argmax_rows(lv.data, lv.shape[0], lv.shape[1])});
    }
    const auto received = chan.snr_infinite ? sent : transmit_indices(sent, chan);
    std::vector<ad::NodeId> d_hat;
    for (int r = 1; r <= cfg.scales; ++r)
        d_hat.push_back(
            g.gather_rows(P("cb.r" + std::to_string(r)), received[size_t(r - 1)].indices));
    const auto recon_node = codec::decode_multiscale(P, d_hat, grid, cfg);
    SpectrumMap recon(grid);
    for (int i = 0; i < grid.cell_count(); ++i)
        recon.values_dbm[size_t(i)] = double(g.val(recon_node).data[size_t(i)]);
    return recon;
}

template <typename Real>
MetricReport evaluate_semantic_record(ParameterSet<Real>& params, const DatasetRecord& rec,
                                      const CodecConfig& cfg, const EvalConfig& ec,
                                      uint64_t stream) {
    const auto chan = channel_for_map(ec, stream);
    const auto recon = reconstruct_semantic(params, rec, cfg, chan);
    return score_reconstruction(rec.truth, recon, rec.transmitters, ec.region_radius, ec.varphi,
                                ec.zeta_db, rec.params);
}

// Interpolation baseline through the same scoring path. Measured samples ride
// the uncoded QAM link as 16-bit fixed point (bypassed at infinite SNR).
inline MetricReport evaluate_idw_record(const DatasetRecord& rec, double p, const EvalConfig& ec,
                                        uint64_t stream) {
    const GridSpec& grid = rec.truth.grid;
    const auto chan = channel_for_map(ec, stream);
    std::vector<int> measured_idx;
    std::vector<double> samples;
    for (int i = 0; i < grid.cell_count(); ++i)
        if (rec.mask.measured[size_t(i)]) {
            measured_idx.push_back(i);
            samples.push_back(rec.truth.values_dbm[size_t(i)]);
        }
    const auto delivered = transmit_samples_fixed16(samples, chan);
    SpectrumMap masked(grid, kEmptyDbm);
    for (size_t s = 0; s < measured_idx.size(); ++s)
        masked.values_dbm[size_t(measured_idx[s])] = delivered[s];
    const auto recon = idw_complete(masked, rec.mask, p);
    return score_reconstruction(rec.truth, recon, rec.transmitters, ec.region_radius, ec.varphi,
                                ec.zeta_db, rec.params);
}

inline MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
    MetricReport agg;
    double est = 0.0;
    for (const auto& r : reports) {
        agg.mse += r.mse;
        agg.kmse += r.kmse;
        agg.knowledge_supervised += r.knowledge_supervised;
        agg.knowledge_unsupervised += r.knowledge_unsupervised;
        est += r.n_estimated_tx;
    }
    const double n = double(reports.size());
    agg.mse /= n;
    agg.kmse /= n;
    agg.knowledge_supervised /= n;
    agg.knowledge_unsupervised /= n;
    agg.rkmse = std::sqrt(agg.kmse);
    agg.n_estimated_tx = int(std::lround(est / n));
    return agg;
}

template <typename Real>
MetricReport evaluate_semantic_dataset(ParameterSet<Real>& params,
                                       const std::vector<DatasetRecord>& records,
                                       const CodecConfig& cfg, const EvalConfig& ec,
                                       std::vector<MetricReport>* per_map = nullptr) {
    std::vector<MetricReport> reports;
    for (size_t m = 0; m < records.size(); ++m)
        reports.push_back(evaluate_semantic_record(params, records[m], cfg, ec, uint64_t(m)));
    if (per_map) *per_map = reports;
    return aggregate_reports(reports);
}

inline MetricReport evaluate_idw_dataset(const std::vector<DatasetRecord>& records, double p,
                                         const EvalConfig& ec,
                                         std::vector<MetricReport>* per_map = nullptr) {
    std::vector<MetricReport> reports;
    for (size_t m = 0; m < records.size(); ++m)
        reports.push_back(evaluate_idw_record(records[m], p, ec, uint64_t(m)));
    if (per_map) *per_map = reports;
    return aggregate_reports(reports);
}

// ---- sweeps ----------------------------------------------------------------

enum class SweepAxis { Snr, Tau, NWin, NTx };

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "snr") return SweepAxis::Snr;
    if (s == "tau") return SweepAxis::Tau;
    if (s == "n_win") return SweepAxis::NWin;
    if (s == "n_tx") return SweepAxis::NTx;
    throw ValidationError("unknown sweep axis: " + s + " (want snr|tau|n_win|n_tx)");
}

inline std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::Snr: return "snr";
        case SweepAxis::Tau: return "tau";
        case SweepAxis::NWin: return "n_win";
        default: return "n_tx";
    }
}

struct SweepSpec {
    SweepAxis axis = SweepAxis::Snr;
    std::vector<double> values;
    int repeats = 1;
    uint64_t seed = 1;
    std::string method = "semantic";  // semantic | idw | both
    double idw_p = 2.0;

    void validate() const {
        if (values.empty()) throw ValidationError("SweepSpec: axis values must be non-empty");
        if (repeats < 1) throw ValidationError("SweepSpec: repeats must be >= 1");
        if (method != "semantic" && method != "idw" && method != "both")
            throw ValidationError("SweepSpec: method must be semantic|idw|both");
    }
};

struct SweepRow {
    std::string axis;
    double value = 0.0;
    int repeat = 0;
    uint64_t seed = 0;
    std::string method;
    int n_maps = 0;
    MetricReport report;
};

namespace detail {

// Materialize the records scored at one sweep point. tau re-masks the same
// maps; n_tx synthesizes fresh maps with the pinned transmitter count.
inline std::vector<DatasetRecord> records_for_point(const std::vector<DatasetRecord>& base,
                                                    SweepAxis axis, double value, uint64_t seed) {
    std::vector<DatasetRecord> out = base;
    if (axis == SweepAxis::Tau) {
        for (size_t m = 0; m < out.size(); ++m) {
            out[m].tau = value;
            out[m].mask_seed = Rng::derive(seed, 0x7a0u + m).next_u64();
            out[m].mask =
                generate_mask(out[m].truth.grid, value, out[m].mask_mode, out[m].mask_seed);
        }
    } else if (axis == SweepAxis::NTx) {
        DatasetGenConfig gen;
        gen.count = int(base.size());
        gen.grid = base[0].truth.grid;
        gen.tx_min = gen.tx_max = int(value);
        gen.params = base[0].params;
        gen.tau = base[0].tau;
        gen.mask_mode = base[0].mask_mode;
        gen.seed = seed;
        out.clear();
        for (int i = 0; i < gen.count; ++i) out.push_back(make_record(gen, i));
    }
    return out;
}

}  // namespace detail

template <typename Real>
std::vector<SweepRow> run_sweep(ParameterSet<Real>* params, const CodecConfig& cfg_base,
                                const std::vector<DatasetRecord>& records, const SweepSpec& spec,
                                const EvalConfig& ec_base, int workers = 2) {
    spec.validate();
    struct Point {
        size_t vi;
        int repeat;
        std::string method;
    };
    std::vector<Point> points;
    std::vector<std::string> methods;
    if (spec.method == "both")
        methods = {"semantic", "idw"};
    else
        methods = {spec.method};
    if (spec.method != "idw" && params == nullptr)
        throw ValidationError("run_sweep: semantic method needs a checkpoint");
    for (const auto& method : methods)
        for (size_t vi = 0; vi < spec.values.size(); ++vi)
            for (int rep = 0; rep < spec.repeats; ++rep) points.push_back({vi, rep, method});

    std::vector<SweepRow> rows(points.size());
    std::atomic<size_t> next{0};
    const auto worker = [&]() {
        for (;;) {
            const size_t at = next.fetch_add(1);
            if (at >= points.size()) return;
            const auto& pt = points[at];
            const double value = spec.values[pt.vi];
            SweepRow row;
            row.axis = to_string(spec.axis);
            row.value = value;
            row.repeat = pt.repeat;
            row.method = pt.method;
            row.seed = Rng::derive(spec.seed, 0x5eedu + pt.vi * 1009u + uint64_t(pt.repeat))
                           .next_u64();

            EvalConfig ec = ec_base;
            ec.seed = row.seed;
            CodecConfig cfg = cfg_base;
            if (spec.axis == SweepAxis::Snr) ec.chan.snr_db = value;
            if (spec.axis == SweepAxis::NWin) cfg.n_win = int(value);
            const auto recs =
                detail::records_for_point(records, spec.axis, value, row.seed);
            row.n_maps = int(recs.size());
            if (pt.method == "semantic")
                row.report = evaluate_semantic_dataset(*params, recs, cfg, ec);
            else
                row.report = evaluate_idw_dataset(recs, spec.idw_p, ec);
            rows[at] = std::move(row);
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::max(1, workers); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << "axis,value,repeat,seed,method,n_maps,mse,kmse,rkmse,knowledge_supervised,"
           "knowledge_unsupervised,n_estimated_tx\n";
    out.precision(12);
    for (const auto& r : rows) {
        out << r.axis << ',' << r.value << ',' << r.repeat << ',' << r.seed << ',' << r.method
            << ',' << r.n_maps << ',' << r.report.mse << ',' << r.report.kmse << ','
            << r.report.rkmse << ',' << r.report.knowledge_supervised << ','
            << r.report.knowledge_unsupervised << ',' << r.report.n_estimated_tx << '\n';
    }
}

inline std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty sweep csv: " + path.string());
    const std::string expected =
        "axis,value,repeat,seed,method,n_maps,mse,kmse,rkmse,knowledge_supervised,"
        "knowledge_unsupervised,n_estimated_tx";
    if (line != expected) throw IoError("unexpected sweep csv header in " + path.string());
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        SweepRow r;
        const auto next_field = [&]() {
            if (!std::getline(ss, field, ',')) throw IoError("short row in " + path.string());
            return field;
        };
        r.axis = next_field();
        r.value = std::stod(next_field());
        r.repeat = std::stoi(next_field());
        r.seed = std::stoull(next_field());
        r.method = next_field();
        r.n_maps = std::stoi(next_field());
        r.report.mse = std::stod(next_field());
        r.report.kmse = std::stod(next_field());
        r.report.rkmse = std::stod(next_field());
        r.report.knowledge_supervised = std::stod(next_field());
        r.report.knowledge_unsupervised = std::stod(next_field());
        r.report.n_estimated_tx = std::stoi(next_field());
        rows.push_back(std::move(r));
    }
    return rows;
}

// Markdown rendering: per-method table of repeat-averaged metrics along the
// axis, plus directional notes (A < B comparisons rather than absolute
// targets).
inline std::string render_report_markdown(const std::vector<SweepRow>& rows) {
    std::map<std::string, std::map<double, std::vector<const SweepRow*>>> grouped;
    for (const auto& r : rows) grouped[r.method][r.value].push_back(&r);
    std::ostringstream md;
    md.precision(6);
    md << "# Sweep report\n\n";
    if (rows.empty()) return md.str() + "(no rows)\n";
    const std::string axis = rows.front().axis;
    for (const auto& [method, by_value] : grouped) {
        md << "## method: " << method << "\n\n";
        md << "| " << axis << " | repeats | mse | kmse | rkmse | k_supervised | k_unsupervised |\n";
        md << "|---|---|---|---|---|---|---|\n";
        std::vector<std::pair<double, double>> curve;  // (value, mean rkmse)
        for (const auto& [value, rs] : by_value) {
            MetricReport mean;
            for (const auto* r : rs) {
                mean.mse += r->report.mse;
                mean.kmse += r->report.kmse;
                mean.rkmse += r->report.rkmse;
                mean.knowledge_supervised += r->report.knowledge_supervised;
                mean.knowledge_unsupervised += r->report.knowledge_unsupervised;
            }
            const double n = double(rs.size());
            md << "| " << value << " | " << rs.size() << " | " << mean.mse / n << " | "
               << mean.kmse / n << " | " << mean.rkmse / n << " | "
               << mean.knowledge_supervised / n << " | " << mean.knowledge_unsupervised / n
               << " |\n";
            curve.push_back({value, mean.rkmse / n});
        }
        md << "\nDirectional checks (repeat-averaged rkmse):\n\n";
        for (size_t i = 1; i < curve.size(); ++i) {
            const bool le = curve[i].second <= curve[i - 1].second;
            md << "- rkmse(" << axis << "=" << curve[i].first << ") <= rkmse(" << axis << "="
               << curve[i - 1].first << "): " << (le ? "yes" : "no") << "\n";
        }
        md << "\n";
    }
    return md.str();
}

}  // namespace specmap::harness
