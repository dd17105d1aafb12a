// Command-line front end: dataset generation, two-stage training, online
// tuning, evaluation, the IDW baseline, axis sweeps, and report rendering.
//
// Exit codes: 0 ok, 2 bad inputs / missing files / schema violations,
// 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "specmap/baselines.hpp"
#include "specmap/channel.hpp"
#include "specmap/checkpoint.hpp"
#include "specmap/codec.hpp"
#include "specmap/dataset.hpp"
#include "specmap/errors.hpp"
#include "specmap/harness.hpp"
#include "specmap/metrics.hpp"
#include "specmap/training.hpp"

namespace fs = std::filesystem;
using namespace specmap;

namespace {

std::array<int, 3> parse_triple(const std::string& s) {
    std::array<int, 3> out{};
    if (std::sscanf(s.c_str(), "%dx%dx%d", &out[0], &out[1], &out[2]) != 3)
        throw ValidationError("expected AxBxC triple, got: " + s);
    return out;
}

std::array<double, 3> parse_triple_d(const std::string& s) {
    std::array<double, 3> out{};
    if (std::sscanf(s.c_str(), "%lfx%lfx%lf", &out[0], &out[1], &out[2]) != 3)
        throw ValidationError("expected AxBxC triple, got: " + s);
    return out;
}

std::vector<DatasetRecord> load_records(const fs::path& dir, int limit = 0) {
    auto ids = list_records(dir);
    if (limit > 0 && int(ids.size()) > limit) ids.resize(size_t(limit));
    std::vector<DatasetRecord> recs;
    recs.reserve(ids.size());
    for (const auto& id : ids) recs.push_back(read_record(dir, id));
    if (recs.empty()) throw ValidationError("dataset is empty: " + dir.string());
    return recs;
}

struct CommonTrainOpts {
    std::string dataset;
    std::string out;
    std::string loss_csv;
    int limit = 0;
    int epochs = 30;
    int batch = 8;
    double lr = 1e-3;
    double kappa = 0.5, wk = 0.5, wc = 1.0, gamma = 0.25;
    double snr = 12.0;
    bool snr_inf = false;
    int region_radius = 3;
    uint64_t seed = 1;
    std::string precision = "f64";
};

struct CodecOpts {
    int scales = 2;
    int patch = 4;
    int n_win = 4;
    int heads = 4;
    int depth = 4;
    int channels = 64;
    int codebook = 256;
    uint64_t init_seed = 1;
};

codec::CodecConfig make_codec_cfg(const CodecOpts& o) {
    codec::CodecConfig cfg;
    cfg.scales = o.scales;
    cfg.patch = o.patch;
    cfg.n_win = o.n_win;
    cfg.heads = o.heads;
    cfg.depth = o.depth;
    cfg.channels = o.channels;
    cfg.codebook_size = o.codebook;
    cfg.init_seed = o.init_seed;
    cfg.validate();
    return cfg;
}

train::TrainConfig make_train_cfg(const CommonTrainOpts& o) {
    train::TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch;
    tc.lr = o.lr;
    tc.weights = {o.kappa, o.wk, o.wc, o.gamma};
    tc.snr_db = o.snr;
    tc.snr_infinite = o.snr_inf;
    tc.region_radius = o.region_radius;
    tc.seed = o.seed;
    tc.validate();
    return tc;
}

nlohmann::json model_meta(const char* kind, const codec::CodecConfig& cfg, const GridSpec& grid) {
    return {{"kind", kind}, {"codec", cfg.to_json()}, {"grid", detail::grid_to_json(grid)}};
}

template <typename Real>
struct LoadedModel {
    ad::ParameterSet<Real> params;
    codec::CodecConfig cfg;
    GridSpec grid;
};

template <typename Real>
LoadedModel<Real> load_model(const std::string& stage1, const std::string& predictor,
                             const std::string& combined) {
    LoadedModel<Real> model;
    nlohmann::json meta;
    if (!combined.empty()) {
        meta = load_checkpoint(model.params, combined);
    } else {
        if (stage1.empty() || predictor.empty())
            throw ValidationError("need --combined or both --stage1 and --predictor");
        meta = load_checkpoint(model.params, stage1);
        const auto meta2 = load_checkpoint(model.params, predictor);
        if (meta.at("grid") != meta2.at("grid"))
            throw ValidationError("stage1 and predictor checkpoints disagree on the grid");
    }
    model.cfg = codec::CodecConfig::from_json(meta.at("codec"));
    model.grid = detail::grid_from_json(meta.at("grid"));
    return model;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << text;
}

void write_per_map_csv(const fs::path& path, const std::vector<MetricReport>& reports) {
    std::ostringstream csv;
    csv << "map,mse,kmse,rkmse,knowledge_supervised,knowledge_unsupervised,n_estimated_tx\n";
    csv.precision(12);
    for (size_t i = 0; i < reports.size(); ++i)
        csv << i << ',' << reports[i].mse << ',' << reports[i].kmse << ',' << reports[i].rkmse
            << ',' << reports[i].knowledge_supervised << ',' << reports[i].knowledge_unsupervised
            << ',' << reports[i].n_estimated_tx << '\n';
    write_text(path, csv.str());
}

// ---- subcommand bodies -----------------------------------------------------

struct GenOpts {
    std::string out;
    int count = 64;
    std::string grid = "16x16x8";
    std::string extent = "160x160x120";
    int tx_min = 1, tx_max = 3;
    double tau = 0.15;
    std::string mode = "trajectory";
    int ground_layers = 1;
    uint64_t seed = 1;
    double freq_hz = 75e6;
    double gain = 1.0;
    double shadow_db = 0.0;
    double noise_w = 0.0;
    std::vector<double> powers{26, 28, 30, 30, 28, 26};
};

int run_gen_dataset(const GenOpts& o) {
    DatasetGenConfig cfg;
    cfg.count = o.count;
    cfg.grid.blocks = parse_triple(o.grid);
    cfg.grid.extent_m = parse_triple_d(o.extent);
    cfg.tx_min = o.tx_min;
    cfg.tx_max = o.tx_max;
    cfg.tau = o.tau;
    cfg.mask_mode = mask_mode_from_string(o.mode);
    cfg.ground_layers = o.ground_layers;
    cfg.seed = o.seed;
    cfg.params.freq_hz = o.freq_hz;
    cfg.params.antenna_gain = o.gain;
    cfg.params.shadow_sigma_db = o.shadow_db;
    cfg.params.noise_sigma_w = o.noise_w;
    cfg.power_pool_dbm = o.powers;
    cfg.grid.validate();
    cfg.params.validate();
    sample_dataset(cfg, o.out);
    std::cout << "wrote " << cfg.count << " records to " << o.out << "\n";
    return 0;
}

template <typename Real>
int run_train_stage1(const CommonTrainOpts& o, const CodecOpts& co) {
    const auto recs = load_records(o.dataset, o.limit);
    const auto cfg = make_codec_cfg(co);
    const auto tc = make_train_cfg(o);
    ad::ParameterSet<Real> ps;
    codec::init_stage1_params(ps, recs[0].truth.grid, cfg);
    const auto result = train::train_stage1(recs, ps, cfg, ChannelConfig{}, tc);
    save_checkpoint(ps, o.out, model_meta("stage1", cfg, recs[0].truth.grid));
    if (!o.loss_csv.empty()) {
        std::ostringstream csv;
        csv << "epoch,total,data,knowledge,commit\n";
        csv.precision(12);
        for (size_t e = 0; e < result.trace.size(); ++e)
            csv << (e + 1) << ',' << result.trace[e].total << ',' << result.trace[e].data << ','
                << result.trace[e].knowledge << ',' << result.trace[e].commit << '\n';
        write_text(o.loss_csv, csv.str());
    }
    std::cout << "stage1 done: epoch1 loss " << result.trace.front().total << " -> final "
              << result.trace.back().total << "\n";
    return 0;
}

template <typename Real>
int run_train_stage2(const CommonTrainOpts& o, const std::string& stage1) {
    const auto recs = load_records(o.dataset, o.limit);
    ad::ParameterSet<Real> teacher;
    const auto meta = load_checkpoint(teacher, stage1);
    const auto cfg = codec::CodecConfig::from_json(meta.at("codec"));
    const auto grid = detail::grid_from_json(meta.at("grid"));
    if (!(grid == recs[0].truth.grid))
        throw ValidationError("dataset grid does not match the stage1 checkpoint grid");
    const auto tc = make_train_cfg(o);
    ad::ParameterSet<Real> predictor;
    codec::init_predictor_params(predictor, grid, cfg);
    const auto result = train::train_stage2(recs, teacher, predictor, cfg, tc);
    save_checkpoint(predictor, o.out, model_meta("predictor", cfg, grid));
    if (!o.loss_csv.empty()) {
        std::ostringstream csv;
        csv << "epoch,cross_entropy\n";
        csv.precision(12);
        for (size_t e = 0; e < result.trace.size(); ++e)
            csv << (e + 1) << ',' << result.trace[e] << '\n';
        write_text(o.loss_csv, csv.str());
    }
    std::cout << "stage2 done: epoch1 ce " << result.trace.front() << " -> final "
              << result.trace.back() << "\n";
    return 0;
}

struct OnlineOpts {
    std::string dataset;
    std::string stage1, predictor, out, loss_csv;
    int limit = 0;
    int steps = 50;
    double online_lr = 1e-4;
    double snr = 12.0;
    bool snr_inf = false;
    int region_radius = 3;
    int varphi = 2;
    double zeta = 3.0;
    uint64_t seed = 1;
    std::string precision = "f64";
};

template <typename Real>
int run_tune_online(const OnlineOpts& o) {
    const auto recs = load_records(o.dataset, o.limit);
    auto model = load_model<Real>(o.stage1, o.predictor, "");
    if (!(model.grid == recs[0].truth.grid))
        throw ValidationError("dataset grid does not match the checkpoint grid");
    train::TrainConfig tc;
    tc.online_steps = o.steps;
    tc.online_lr = o.online_lr;
    tc.region_radius = o.region_radius;
    tc.varphi = o.varphi;
    tc.zeta_db = o.zeta;
    tc.seed = o.seed;
    ChannelConfig chan;
    chan.snr_db = o.snr;
    chan.snr_infinite = o.snr_inf;
    const auto result = train::tune_online(model.params, recs, model.cfg, chan, tc);
    save_checkpoint(model.params, o.out, model_meta("combined", model.cfg, model.grid));
    if (!o.loss_csv.empty()) {
        std::ostringstream csv;
        csv << "step,online_loss\n";
        csv.precision(12);
        for (size_t s = 0; s < result.loss_trace.size(); ++s)
            csv << (s + 1) << ',' << result.loss_trace[s] << '\n';
        write_text(o.loss_csv, csv.str());
    }
    std::cout << "online tuning done: " << result.loss_trace.size() << " steps, "
              << result.skipped << " skipped (no peaks)\n";
    return 0;
}

struct EvalOpts {
    std::string dataset;
    std::string stage1, predictor, combined;
    std::string out, per_map;
    int limit = 0;
    double snr = 12.0;
    bool snr_inf = false;
    double fixed_distance = 0.0;  // 0 => randomized per map
    int region_radius = 3;
    int varphi = 2;
    double zeta = 3.0;
    uint64_t seed = 1;
    std::string precision = "f64";
};

harness::EvalConfig make_eval_cfg(const EvalOpts& o) {
    harness::EvalConfig ec;
    ec.chan.snr_db = o.snr;
    ec.chan.snr_infinite = o.snr_inf;
    if (o.fixed_distance > 0.0) {
        ec.chan.distance_m = o.fixed_distance;
        ec.randomize_distance = false;
    }
    ec.region_radius = o.region_radius;
    ec.varphi = o.varphi;
    ec.zeta_db = o.zeta;
    ec.seed = o.seed;
    return ec;
}

template <typename Real>
int run_evaluate(const EvalOpts& o) {
    const auto recs = load_records(o.dataset, o.limit);
    auto model = load_model<Real>(o.stage1, o.predictor, o.combined);
    if (!(model.grid == recs[0].truth.grid))
        throw ValidationError("dataset grid does not match the checkpoint grid");
    const auto ec = make_eval_cfg(o);
    std::vector<MetricReport> per_map;
    const auto agg = harness::evaluate_semantic_dataset(model.params, recs, model.cfg, ec, &per_map);
    for (const auto& r : per_map)
        if (!std::isfinite(r.rkmse)) throw NumericError("evaluate: non-finite rkmse");
    nlohmann::json out = agg.to_json();
    out["n_maps"] = recs.size();
    out["method"] = "semantic";
    if (!o.out.empty())
        write_text(o.out, out.dump(2) + "\n");
    else
        std::cout << out.dump(2) << "\n";
    if (!o.per_map.empty()) write_per_map_csv(o.per_map, per_map);
    return 0;
}

int run_idw(const EvalOpts& o, double p) {
    const auto recs = load_records(o.dataset, o.limit);
    const auto ec = make_eval_cfg(o);
    std::vector<MetricReport> per_map;
    const auto agg = harness::evaluate_idw_dataset(recs, p, ec, &per_map);
    nlohmann::json out = agg.to_json();
    out["n_maps"] = recs.size();
    out["method"] = "idw";
    out["p"] = p;
    if (!o.out.empty())
        write_text(o.out, out.dump(2) + "\n");
    else
        std::cout << out.dump(2) << "\n";
    if (!o.per_map.empty()) write_per_map_csv(o.per_map, per_map);
    return 0;
}

struct SweepOpts {
    std::string dataset;
    std::string stage1, predictor, combined;
    std::string out;
    std::string axis = "snr";
    std::vector<double> values;
    int repeats = 1;
    std::string method = "semantic";
    double idw_p = 2.0;
    int limit = 0;
    double snr = 12.0;
    bool snr_inf = false;
    int region_radius = 3;
    int varphi = 2;
    double zeta = 3.0;
    uint64_t seed = 1;
    int workers = 2;
    std::string precision = "f64";
};

template <typename Real>
int run_sweep_cmd(const SweepOpts& o) {
    const auto recs = load_records(o.dataset, o.limit);
    harness::SweepSpec spec;
    spec.axis = harness::sweep_axis_from_string(o.axis);
    spec.values = o.values;
    spec.repeats = o.repeats;
    spec.method = o.method;
    spec.idw_p = o.idw_p;
    spec.seed = o.seed;
    spec.validate();

    harness::EvalConfig ec;
    ec.chan.snr_db = o.snr;
    ec.chan.snr_infinite = o.snr_inf;
    ec.region_radius = o.region_radius;
    ec.varphi = o.varphi;
    ec.zeta_db = o.zeta;
    ec.seed = o.seed;

    std::vector<harness::SweepRow> rows;
    if (o.method == "idw") {
        rows = harness::run_sweep<Real>(nullptr, codec::CodecConfig{}, recs, spec, ec, o.workers);
    } else {
        auto model = load_model<Real>(o.stage1, o.predictor, o.combined);
        if (!(model.grid == recs[0].truth.grid))
            throw ValidationError("dataset grid does not match the checkpoint grid");
        rows = harness::run_sweep(&model.params, model.cfg, recs, spec, ec, o.workers);
    }
    harness::write_sweep_csv(rows, o.out);
    std::cout << "wrote " << rows.size() << " sweep rows to " << o.out << "\n";
    return 0;
}

int run_report(const std::string& in, const std::string& out) {
    const auto rows = harness::read_sweep_csv(in);
    const auto md = harness::render_report_markdown(rows);
    if (out.empty())
        std::cout << md;
    else
        write_text(out, md);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D spectrum map semantic completion toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file ([subcommand] sections)");

    GenOpts gen;
    auto* c_gen = app.add_subcommand("gen-dataset", "synthesize maps, masks and sidecars");
    c_gen->add_option("--out", gen.out, "output directory")->required();
    c_gen->add_option("--count", gen.count);
    c_gen->add_option("--grid", gen.grid, "blocks AxBxC");
    c_gen->add_option("--extent", gen.extent, "meters AxBxC");
    c_gen->add_option("--tx-min", gen.tx_min);
    c_gen->add_option("--tx-max", gen.tx_max);
    c_gen->add_option("--tau", gen.tau);
    c_gen->add_option("--mode", gen.mode, "trajectory|uniform");
    c_gen->add_option("--ground-layers", gen.ground_layers);
    c_gen->add_option("--seed", gen.seed);
    c_gen->add_option("--freq-hz", gen.freq_hz);
    c_gen->add_option("--gain", gen.gain);
    c_gen->add_option("--shadow-db", gen.shadow_db);
    c_gen->add_option("--noise-w", gen.noise_w);
    c_gen->add_option("--powers", gen.powers, "transmit power pool, dBm");

    const auto add_train_common = [](CLI::App* c, CommonTrainOpts& o) {
        c->add_option("--dataset", o.dataset)->required();
        c->add_option("--out", o.out)->required();
        c->add_option("--loss-csv", o.loss_csv);
        c->add_option("--limit", o.limit, "use only the first N records");
        c->add_option("--epochs", o.epochs);
        c->add_option("--batch", o.batch);
        c->add_option("--lr", o.lr);
        c->add_option("--kappa", o.kappa);
        c->add_option("--wk", o.wk);
        c->add_option("--wc", o.wc);
        c->add_option("--gamma", o.gamma);
        c->add_option("--snr", o.snr);
        c->add_flag("--snr-inf", o.snr_inf);
        c->add_option("--region-radius", o.region_radius);
        c->add_option("--seed", o.seed);
        c->add_option("--precision", o.precision, "f64|f32");
    };

    CommonTrainOpts s1;
    CodecOpts co;
    auto* c_s1 = app.add_subcommand("train-stage1", "offline codec + codebook training");
    add_train_common(c_s1, s1);
    c_s1->add_option("--scales", co.scales);
    c_s1->add_option("--patch", co.patch);
    c_s1->add_option("--n-win", co.n_win);
    c_s1->add_option("--heads", co.heads);
    c_s1->add_option("--depth", co.depth);
    c_s1->add_option("--channels", co.channels);
    c_s1->add_option("--codebook", co.codebook);
    c_s1->add_option("--init-seed", co.init_seed);

    CommonTrainOpts s2;
    std::string s2_stage1;
    auto* c_s2 = app.add_subcommand("train-stage2", "predictor distillation from the teacher");
    add_train_common(c_s2, s2);
    c_s2->add_option("--stage1", s2_stage1, "teacher checkpoint stem")->required();

    OnlineOpts onl;
    auto* c_onl = app.add_subcommand("tune-online", "unsupervised knowledge tuning");
    c_onl->add_option("--dataset", onl.dataset)->required();
    c_onl->add_option("--stage1", onl.stage1)->required();
    c_onl->add_option("--predictor", onl.predictor)->required();
    c_onl->add_option("--out", onl.out)->required();
    c_onl->add_option("--loss-csv", onl.loss_csv);
    c_onl->add_option("--limit", onl.limit);
    c_onl->add_option("--steps", onl.steps);
    c_onl->add_option("--online-lr", onl.online_lr);
    c_onl->add_option("--snr", onl.snr);
    c_onl->add_flag("--snr-inf", onl.snr_inf);
    c_onl->add_option("--region-radius", onl.region_radius);
    c_onl->add_option("--varphi", onl.varphi);
    c_onl->add_option("--zeta", onl.zeta);
    c_onl->add_option("--seed", onl.seed);
    c_onl->add_option("--precision", onl.precision, "f64|f32");

    const auto add_eval_common = [](CLI::App* c, EvalOpts& o) {
        c->add_option("--dataset", o.dataset)->required();
        c->add_option("--out", o.out, "aggregate report JSON path (stdout if omitted)");
        c->add_option("--per-map", o.per_map, "per-map CSV path");
        c->add_option("--limit", o.limit);
        c->add_option("--snr", o.snr);
        c->add_flag("--snr-inf", o.snr_inf);
        c->add_option("--fixed-distance", o.fixed_distance, "pin d0 instead of randomizing");
        c->add_option("--region-radius", o.region_radius);
        c->add_option("--varphi", o.varphi);
        c->add_option("--zeta", o.zeta);
        c->add_option("--seed", o.seed);
        c->add_option("--precision", o.precision, "f64|f32");
    };

    EvalOpts ev;
    auto* c_ev = app.add_subcommand("evaluate", "score a trained model on a dataset");
    add_eval_common(c_ev, ev);
    c_ev->add_option("--stage1", ev.stage1);
    c_ev->add_option("--predictor", ev.predictor);
    c_ev->add_option("--combined", ev.combined);

    EvalOpts idw_o;
    double idw_p = 2.0;
    auto* c_idw = app.add_subcommand("idw", "inverse-distance-weighting baseline");
    add_eval_common(c_idw, idw_o);
    c_idw->add_option("--p", idw_p, "distance power factor");

    SweepOpts sw;
    auto* c_sw = app.add_subcommand("sweep", "evaluate along an axis, write CSV");
    c_sw->add_option("--dataset", sw.dataset)->required();
    c_sw->add_option("--out", sw.out)->required();
    c_sw->add_option("--stage1", sw.stage1);
    c_sw->add_option("--predictor", sw.predictor);
    c_sw->add_option("--combined", sw.combined);
    c_sw->add_option("--axis", sw.axis, "snr|tau|n_win|n_tx");
    c_sw->add_option("--values", sw.values)->required()->delimiter(',');
    c_sw->add_option("--repeats", sw.repeats);
    c_sw->add_option("--method", sw.method, "semantic|idw|both");
    c_sw->add_option("--idw-p", sw.idw_p);
    c_sw->add_option("--limit", sw.limit);
    c_sw->add_option("--snr", sw.snr);
    c_sw->add_flag("--snr-inf", sw.snr_inf);
    c_sw->add_option("--region-radius", sw.region_radius);
    c_sw->add_option("--varphi", sw.varphi);
    c_sw->add_option("--zeta", sw.zeta);
    c_sw->add_option("--seed", sw.seed);
    c_sw->add_option("--workers", sw.workers);
    c_sw->add_option("--precision", sw.precision, "f64|f32");

    std::string rep_in, rep_out;
    auto* c_rep = app.add_subcommand("report", "render a sweep CSV as markdown");
    c_rep->add_option("--in", rep_in)->required();
    c_rep->add_option("--out", rep_out, "markdown path (stdout if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*c_gen) return run_gen_dataset(gen);
        if (*c_s1)
            return s1.precision == "f32" ? run_train_stage1<float>(s1, co)
                                         : run_train_stage1<double>(s1, co);
        if (*c_s2)
            return s2.precision == "f32" ? run_train_stage2<float>(s2, s2_stage1)
                                         : run_train_stage2<double>(s2, s2_stage1);
        if (*c_onl)
            return onl.precision == "f32" ? run_tune_online<float>(onl)
                                          : run_tune_online<double>(onl);
        if (*c_ev)
            return ev.precision == "f32" ? run_evaluate<float>(ev) : run_evaluate<double>(ev);
        if (*c_idw) return run_idw(idw_o, idw_p);
        if (*c_sw)
            return sw.precision == "f32" ? run_sweep_cmd<float>(sw) : run_sweep_cmd<double>(sw);
        if (*c_rep) return run_report(rep_in, rep_out);
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
