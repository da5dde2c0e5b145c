#pragma once

// Batch commands. Each returns a process exit code: 0 ok, 1 configuration,
// 2 data, 3 runtime. Diagnostics go to `err` as a single line.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "l1dpf/dataio.hpp"
#include "l1dpf/errors.hpp"
#include "l1dpf/eval.hpp"
#include "l1dpf/tracker.hpp"

namespace l1dpf::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kRuntimeError = 3 };

/// Maps the exception taxonomy onto exit codes.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kDataError;
    if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kDataError;
    return kRuntimeError;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        err << (code == kDataError ? "data error: " : "runtime error: ") << e.what() << '\n';
        return code;
    }
}

// ---------------------------------------------------------------- track

struct TrackArgs {
    fs::path seq;
    fs::path config;
    std::optional<fs::path> detections;
    fs::path out;
    std::optional<std::string> init;
};

/// Initial quad from --init, else the sequence's first GT entry.
inline geometry::QuadBB initial_quad(const dataio::Sequence& seq, const std::optional<std::string>& init) {
    if (init) {
        try {
            const auto p = dataio::parse_gt_line(*init);
            return p.convex ? p.quad : geometry::convex_hull(p.quad);
        } catch (const FormatError& e) {
            throw ConfigError("init", std::string("--init: ") + e.what());
        }
    }
    if (!seq.gt || seq.gt->quads.empty()) throw DataError("no initialization available");
    const auto& q = seq.gt->quads.front();
    return geometry::is_convex(q) ? q : geometry::convex_hull(q);
}

/// Runs the tracker over every frame. Row 1 is the initialization. When
/// `log` is set it receives per-frame timing and update events.
inline std::vector<tracker::FrameResult> track_sequence(const dataio::Sequence& seq,
                                                        const geometry::QuadBB& init,
                                                        const tracker::TrackerConfig& cfg,
                                                        const dataio::DetectionSet* detections,
                                                        std::ostream* log = nullptr,
                                                        std::vector<double>* noise_log = nullptr) {
    using clock = std::chrono::steady_clock;
    std::vector<tracker::FrameResult> results;
    tracker::Tracker trk(dataio::load_frame(seq.frame_paths.front()), init, cfg);
    results.push_back(trk.initial_result());
    for (std::size_t i = 1; i < seq.size(); ++i) {
        const int frame = static_cast<int>(i) + 1;
        const auto t0 = clock::now();
        const imaging::Frame img = dataio::load_frame(seq.frame_paths[i]);
        std::span<const dataio::Detection> dets;
        if (detections) dets = detections->at(frame);
        results.push_back(trk.step(img, dets));
        const auto& r = results.back();
        if (log) {
            const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            *log << "frame " << frame << " time_ms " << dataio::detail::fixed4(ms) << " max_likelihood "
                 << r.max_likelihood << " detection " << (r.detection_used ? 1 : 0);
            if (r.dict_updated) *log << " dict_update";
            if (r.consensus && !*r.consensus) *log << " consensus_failed";
            if (r.failed) *log << " failed";
            if (!r.message.empty()) *log << " (" << r.message << ')';
            *log << '\n';
        }
    }
    if (noise_log) *noise_log = trk.noise_log();
    return results;
}

inline int cmd_track(const TrackArgs& a, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const dataio::RunConfig cfg = dataio::load_config(a.config);
        const dataio::Sequence seq = dataio::load_sequence(a.seq);
        const geometry::QuadBB init = initial_quad(seq, a.init);
        std::optional<dataio::DetectionSet> dets;
        if (a.detections) dets = dataio::load_detections(*a.detections);

        fs::path log_path = a.out;
        log_path += ".log";
        std::ofstream log(log_path);
        if (!log) throw DataError("cannot write run log " + log_path.string());
        log << "# effective configuration\n" << dataio::describe_config(cfg);
        log << "# sequence " << seq.name << " frames " << seq.size() << '\n';

        const auto results = track_sequence(seq, init, cfg, dets ? &*dets : nullptr, &log);
        dataio::write_results(results, a.out);
        std::size_t failures = 0, updates = 0;
        for (const auto& r : results) {
            failures += r.failed ? 1 : 0;
            updates += r.dict_updated ? 1 : 0;
        }
        log << "# done: " << results.size() << " frames, " << updates << " dictionary updates, " << failures
            << " failed frames\n";
        out << "tracked " << results.size() << " frames (" << tracker::to_string(cfg.mode) << "), "
            << updates << " dictionary updates -> " << a.out.string() << '\n';
        return int{kOk};
    });
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
    fs::path pred;
    fs::path gt;
    fs::path report;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto rows = dataio::read_results(a.pred);
        const auto gt = dataio::load_groundtruth(a.gt);
        std::vector<geometry::QuadBB> pred;
        for (const auto& r : rows) pred.push_back(r.quad);
        const eval::MetricReport rep = eval::evaluate(pred, gt.quads, rows);
        eval::write_report(rep, a.report);
        out << "accuracy " << dataio::detail::fixed4(rep.accuracy) << '\n'
            << "robustness " << dataio::detail::fixed4(rep.robustness) << '\n'
            << "sr@0.5 " << dataio::detail::fixed4(rep.sr(0.5)) << '\n';
        return int{kOk};
    });
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    fs::path spec;
    fs::path out;
    std::uint64_t seed = 0;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        eval::SynthSpec spec = eval::load_synth_spec(a.spec);
        spec.seed = a.seed;
        eval::generate_synthetic(spec, a.out);
        out << "wrote " << spec.n_frames << " frames to " << a.out.string() << '\n';
        return int{kOk};
    });
}

// --------------------------------------------------------------- ablate

struct AblateArgs {
    fs::path seq;
    fs::path config;
    fs::path detections;
    fs::path out;
};

struct Variant {
    const char* name;
    tracker::Mode mode;
    bool dict_update;
};

inline const std::vector<Variant>& ablation_variants() {
    static const std::vector<Variant> v = {
        {"l1apg", tracker::Mode::l1apg, true},
        {"l1dpf", tracker::Mode::l1dpf, true},
        {"l1dpf_nodu", tracker::Mode::l1dpf, false},
        {"l1dpfm", tracker::Mode::l1dpf_m, true},
        {"l1dpfm_nodu", tracker::Mode::l1dpf_m, false},
    };
    return v;
}

inline int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const dataio::RunConfig base = dataio::load_config(a.config);
        const dataio::Sequence seq = dataio::load_sequence(a.seq);
        if (!seq.gt) throw DataError("ablation needs groundtruth.txt in " + a.seq.string());
        const geometry::QuadBB init = initial_quad(seq, std::nullopt);
        const dataio::DetectionSet dets = dataio::load_detections(a.detections);
        fs::create_directories(a.out);

        std::vector<std::vector<dataio::ResultRow>> runs;
        out << "# effective configuration\n" << dataio::describe_config(base);
        for (const auto& v : ablation_variants()) {
            dataio::RunConfig cfg = base;
            cfg.mode = v.mode;
            cfg.dict_update = v.dict_update;
            std::vector<double> noise;
            const auto results = track_sequence(seq, init, cfg, &dets, nullptr, &noise);
            dataio::write_results(results, a.out / (std::string(v.name) + ".csv"));
            std::vector<dataio::ResultRow> rows;
            for (const auto& r : results) rows.push_back(dataio::to_row(r));
            runs.push_back(std::move(rows));
            out << v.name << " first transition draws:";
            for (double z : noise) out << ' ' << dataio::detail::fixed4(z);
            out << '\n';
        }

        const auto& gt = seq.gt->quads;
        std::ofstream rep(a.out / "ablation_report.csv", std::ios::binary);
        if (!rep) throw DataError("cannot write ablation report");
        rep << "section,variant,key,value\n";
        const auto& vars = ablation_variants();
        for (std::size_t i = 0; i < vars.size(); ++i) {
            std::vector<geometry::QuadBB> pred;
            for (const auto& r : runs[i]) pred.push_back(r.quad);
            const auto m = eval::evaluate(pred, gt, runs[i]);
            const std::string v = vars[i].name;
            rep << "summary," << v << ",accuracy," << dataio::detail::fixed4(m.accuracy) << '\n'
                << "summary," << v << ",robustness," << dataio::detail::fixed4(m.robustness) << '\n'
                << "summary," << v << ",miss_rate," << dataio::detail::fixed4(m.miss_rate) << '\n'
                << "summary," << v << ",update_rate," << dataio::detail::fixed4(*m.update_rate) << '\n';
            for (const auto& [tau, rate] : m.success_curve)
                rep << "summary," << v << ",sr@" << dataio::detail::fixed4(tau).substr(0, 4) << ','
                    << dataio::detail::fixed4(rate) << '\n';
            out << v << ": sr@0.5 " << dataio::detail::fixed4(m.sr(0.5)) << " accuracy "
                << dataio::detail::fixed4(m.accuracy) << '\n';
        }
        // Every variant against the l1apg baseline, and each no-update run
        // against its updating counterpart.
        const std::pair<std::size_t, std::size_t> pairs[] = {{1, 0}, {3, 0}, {3, 1}, {1, 2}, {3, 4}};
        for (const auto& [ia, ib] : pairs) {
            const auto p = eval::ablation_pairing(runs[ia], runs[ib], gt);
            const std::string name = std::string(vars[ia].name) + "_vs_" + vars[ib].name;
            double mean = 0.0;
            for (double d : p.iou_delta) mean += d;
            mean /= static_cast<double>(p.iou_delta.size());
            for (const auto& [tau, d] : p.success_delta)
                rep << "paired," << name << ",delta_sr@" << dataio::detail::fixed4(tau).substr(0, 4) << ','
                    << dataio::detail::fixed4(d) << '\n';
            rep << "paired," << name << ",mean_iou_delta," << dataio::detail::fixed4(mean) << '\n'
                << "paired," << name << ",likelihood_win_fraction,"
                << dataio::detail::fixed4(p.likelihood_win_fraction) << '\n';
        }
        return int{kOk};
    });
}

// ------------------------------------------------------------ dispatch

/// Parses argv-style arguments (without the program name) and runs exactly
/// one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse-representation particle-filter tracker", "l1dpf"};
    app.require_subcommand(1, 1);

    TrackArgs track;
    std::string track_det, track_init;
    auto* t = app.add_subcommand("track", "Track an object through a sequence directory");
    t->add_option("--seq", track.seq, "Sequence directory")->required();
    t->add_option("--config", track.config, "Run configuration (key = value)")->required();
    t->add_option("--detections", track_det, "Detections JSON-lines file");
    t->add_option("--out", track.out, "Results CSV")->required();
    t->add_option("--init", track_init, "Initial quad \"x1,y1,...,x4,y4\"");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a results CSV against groundtruth");
    e->add_option("--pred", ev.pred, "Results CSV")->required();
    e->add_option("--gt", ev.gt, "groundtruth.txt")->required();
    e->add_option("--report", ev.report, "Report CSV")->required();

    SynthArgs sy;
    auto* s = app.add_subcommand("synth", "Generate a synthetic sequence");
    s->add_option("--spec", sy.spec, "Synthetic spec (key = value)")->required();
    s->add_option("--out", sy.out, "Output directory")->required();
    s->add_option("--seed", sy.seed, "Seed")->required();

    AblateArgs ab;
    auto* b = app.add_subcommand("ablate", "Run every mode with and without dictionary update");
    b->add_option("--seq", ab.seq, "Sequence directory")->required();
    b->add_option("--config", ab.config, "Run configuration")->required();
    b->add_option("--detections", ab.detections, "Detections JSON-lines file")->required();
    b->add_option("--out", ab.out, "Output directory")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& pe) {
        err << "config error: " << pe.what() << '\n';
        return kConfigError;
    }

    if (t->parsed()) {
        if (!track_det.empty()) track.detections = track_det;
        if (!track_init.empty()) track.init = track_init;
        return cmd_track(track, out, err);
    }
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (s->parsed()) return cmd_synth(sy, out, err);
    return cmd_ablate(ab, out, err);
}

}  // namespace l1dpf::cli
