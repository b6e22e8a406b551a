#include "hybridmap/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "hybridmap/dataset.hpp"
#include "hybridmap/image_io.hpp"
#include "hybridmap/metrics.hpp"
#include "hybridmap/net.hpp"
#include "hybridmap/oracles.hpp"
#include "hybridmap/pipeline.hpp"
#include "hybridmap/synth.hpp"
#include "hybridmap/transport.hpp"

namespace hmap {

namespace fs = std::filesystem;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string config;
    std::string log_level = "info";
};

Mat4 read_alignment(const std::string& spec) {
    std::istringstream in;
    std::ifstream file;
    std::istream* src = &in;
    if (fs::exists(spec)) {
        file.open(spec);
        src = &file;
    } else {
        std::string s = spec;
        std::replace(s.begin(), s.end(), ',', ' ');
        in.str(s);
    }
    Mat4 m;
    for (int i = 0; i < 16; ++i)
        if (!(*src >> m(i / 4, i % 4))) throw ConfigError("--align needs 16 numbers (a file or a comma list)");
    return m;
}

void print_table(std::ostream& out, const std::string& title, const EvalReport& r) {
    out << title << '\n';
    std::istringstream kv(r.to_key_values());
    std::string key;
    double value;
    while (kv >> key >> value) out << "  " << std::left << std::setw(22) << key << std::right << value << '\n';
}

void write_report(const std::string& path, const EvalReport& r) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report " + path);
    out << r.to_json();
}

ServerConfig resolve_config(const Globals& g) {
    ServerConfig cfg;
    if (!g.config.empty()) cfg = load_server_config(g.config);
    if (g.seed_set) cfg.seed = g.seed;
    return cfg;
}

std::vector<std::string> png_names(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DatasetError("not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Globals g;
    CLI::App app{"Hybrid mapping of populated indoor scenes: synthetic data, mapping server, replay client "
                 "and evaluation."};
    app.name("hybridmap");
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; },
                                           "Seed for every random stream")
        ->configurable(false);
    app.add_option("--config", g.config, "Server configuration (JSON)");
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    // synth-gen
    auto* gen = app.add_subcommand("synth-gen", "Render a synthetic scene into a dataset directory");
    std::string gen_spec, gen_out;
    DatasetOptions gen_opts;
    gen->add_option("--spec", gen_spec, "Scene description")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output dataset directory")->required();
    gen->add_option("--tracker-scale", gen_opts.tracker_scale, "World metres per tracker unit");
    gen->add_option("--visibility-pixels", gen_opts.visibility_min_pixels, "Mask pixels for a person to count");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the mapping server for one client connection");
    std::string serve_host, serve_out, serve_gt;
    int serve_port = -1;
    serve->add_option("--host", serve_host, "Listen address");
    serve->add_option("--port", serve_port, "Listen port (0 picks one)")->check(CLI::Range(0, 65535));
    serve->add_option("--out", serve_out, "Export directory");
    serve->add_option("--ground-truth", serve_gt, "Dataset directory or scene file for the oracle estimators");

    // replay
    auto* rep = app.add_subcommand("replay", "Stream a dataset to a server through the scale-calibration client");
    std::string rep_dataset, rep_script, rep_host = "127.0.0.1";
    int rep_port = 5555;
    bool rep_fast = false;
    rep->add_option("--dataset", rep_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    rep->add_option("--script", rep_script, "Operator event script")->required()->check(CLI::ExistingFile);
    rep->add_option("--host", rep_host, "Server address");
    rep->add_option("--port", rep_port, "Server port")->check(CLI::Range(1, 65535));
    rep->add_flag("--max-speed", rep_fast, "Send frames as fast as possible");

    // eval-recon
    auto* er = app.add_subcommand("eval-recon", "Cloud-to-cloud inaccuracy and incompleteness");
    std::string er_pred, er_gt, er_align, er_report;
    er->add_option("--pred", er_pred, "Reconstructed PLY")->required()->check(CLI::ExistingFile);
    er->add_option("--gt", er_gt, "Ground-truth PLY")->required()->check(CLI::ExistingFile);
    er->add_option("--align", er_align, "4x4 transform applied to the prediction (file or 16 comma-separated numbers)");
    er->add_option("--report", er_report, "JSON report path");

    // eval-skeleton
    auto* es = app.add_subcommand("eval-skeleton", "MPJPE and 3DPCK@15cm of detected skeletons");
    std::string es_pred, es_gt, es_vis, es_report;
    double es_gate = 1.0;
    es->add_option("--pred", es_pred, "Detected skeletons")->required()->check(CLI::ExistingFile);
    es->add_option("--gt", es_gt, "Ground-truth skeletons")->required()->check(CLI::ExistingFile);
    es->add_option("--visibility", es_vis, "Visibility table (all visible when omitted)")->check(CLI::ExistingFile);
    es->add_option("--gate", es_gate, "Association radius between mid-hips (m)");
    es->add_option("--report", es_report, "JSON report path");

    // eval-mask
    auto* em = app.add_subcommand("eval-mask", "IoU, F1 and coverage of people masks");
    std::string em_pred, em_gt, em_report;
    em->add_option("--pred", em_pred, "Directory of predicted mask PNGs")->required()->check(CLI::ExistingDirectory);
    em->add_option("--gt", em_gt, "Directory of ground-truth mask PNGs")->required()->check(CLI::ExistingDirectory);
    em->add_option("--report", em_report, "JSON report path");

    // export
    auto* ex = app.add_subcommand("export", "Map a dataset offline in deterministic mode and export the result");
    std::string ex_dataset, ex_out;
    bool ex_threaded = false;
    ex->add_option("--dataset", ex_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ex->add_option("--out", ex_out, "Export directory")->required();
    ex->add_flag("--threaded", ex_threaded, "Run the scheduled workers on their own threads");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto log = std::make_shared<spdlog::logger>("hybridmap", sink);
    log->set_pattern("[%l] %v");
    log->set_level(spdlog::level::from_str(g.log_level));

    try {
        if (*gen) {
            std::ifstream in(gen_spec);
            std::stringstream text;
            text << in.rdbuf();
            std::istringstream scene_in(text.str()), noise_in(text.str());
            const SceneSpec spec = parse_scene(scene_in);
            const NoiseModel noise = parse_noise(noise_in);
            log->info("synth-gen spec={} out={} seed={} tracker_scale={} visibility_pixels={} frames={}", gen_spec,
                      gen_out, g.seed, gen_opts.tracker_scale, gen_opts.visibility_min_pixels, spec.frame_count());
            write_dataset(gen_out, spec, noise, g.seed, gen_opts);
            out << "wrote " << spec.frame_count() << " frames to " << gen_out << '\n';
        } else if (*serve) {
            ServerConfig cfg = resolve_config(g);
            if (!serve_host.empty()) cfg.listen_host = serve_host;
            if (serve_port >= 0) cfg.listen_port = static_cast<std::uint16_t>(serve_port);
            if (!serve_out.empty()) cfg.output_dir = serve_out;
            if (!serve_gt.empty()) cfg.estimators.ground_truth = serve_gt;
            log->info("serve config {}", to_json(cfg));
            MappingServer server(cfg, make_slots(cfg, open_ground_truth(cfg.estimators)));
            TcpListener listener(cfg.listen_host, cfg.listen_port);
            log->info("listening on {}:{}", cfg.listen_host, listener.port());
            out << "listening on " << cfg.listen_host << ':' << listener.port() << std::endl;
            auto conn = listener.accept();
            serve_stream(server, *conn);
            const auto diag = server.diagnostics();
            export_map(server.snapshot(), diag, cfg.output_dir);
            log->info("received={} replaced={} fused={} skipped={}", diag.received, diag.replaced, diag.fused,
                      diag.skipped);
            out << "exported to " << cfg.output_dir << '\n';
        } else if (*rep) {
            log->info("replay dataset={} script={} server={}:{} max_speed={}", rep_dataset, rep_script, rep_host,
                      rep_port, rep_fast);
            const SequenceDataset ds(rep_dataset);
            const ReplayScript script = load_replay_script(rep_script);
            auto conn = TcpStream::connect(rep_host, static_cast<std::uint16_t>(rep_port));
            const ReplayResult r =
                replay(ds, script, [&](const FrameMessage& m) { write_message(*conn, m); }, {rep_fast});
            conn->close_write();
            out << "sent " << r.frames_sent << " frames, final state " << to_string(r.final_state);
            if (r.scale) out << ", scale " << std::setprecision(10) << *r.scale;
            out << '\n';
        } else if (*er) {
            log->info("eval-recon pred={} gt={} align={}", er_pred, er_gt, er_align.empty() ? "none" : er_align);
            SurfaceCloud pred = read_ply(fs::path(er_pred));
            const SurfaceCloud gt = read_ply(fs::path(er_gt));
            if (!er_align.empty()) pred = transform_cloud(pred, read_alignment(er_align));
            if (pred.empty() || gt.empty()) throw Error("eval-recon: both clouds must be non-empty");
            const auto s = evaluate_reconstruction(pred, gt);
            EvalReport r;
            r.mean_inaccuracy = s.inaccuracy;
            r.mean_incompleteness = s.incompleteness;
            r.extra = {{"pred_points", double(pred.size())}, {"gt_points", double(gt.size())}};
            print_table(out, "Reconstruction (m)", r);
            write_report(er_report, r);
        } else if (*es) {
            log->info("eval-skeleton pred={} gt={} visibility={} gate={}", es_pred, es_gt,
                      es_vis.empty() ? "all" : es_vis, es_gate);
            const SkeletonSequence pred = read_skeletons(fs::path(es_pred));
            const SkeletonSequence gt = read_skeletons(fs::path(es_gt));
            const VisibilityTable vis = es_vis.empty() ? VisibilityTable{} : read_visibility(es_vis);
            TwoLevelMean mpjpe, pck;
            mpjpe.begin_sequence();
            pck.begin_sequence();
            double matched = 0, missed = 0, fps = 0;
            for (const auto& [frame, people] : gt) {
                std::vector<GroundTruthSkeleton> g_frame;
                for (const Skeleton& s : people) {
                    const auto v = vis.find({frame, s.person_id});
                    g_frame.push_back({s, v == vis.end() || v->second});
                }
                const auto p = pred.find(frame);
                const std::vector<Skeleton> none;
                const auto sc = skeleton_metrics(p == pred.end() ? none : p->second, g_frame, {es_gate, 0.15});
                mpjpe.add(sc.mpjpe);
                pck.add(sc.pck3d);
                matched += sc.matched_people;
                missed += sc.missed_people;
                fps += sc.false_positives;
            }
            for (const auto& [frame, people] : pred)
                if (!gt.count(frame)) fps += static_cast<double>(people.size());
            EvalReport r;
            r.mpjpe = mpjpe.mean();
            r.pck3d_15cm = pck.mean();
            r.extra = {{"matched_people", matched}, {"missed_people", missed}, {"false_positives", fps}};
            print_table(out, "Skeletons", r);
            write_report(es_report, r);
        } else if (*em) {
            log->info("eval-mask pred={} gt={}", em_pred, em_gt);
            TwoLevelMean iou, f1, cr;
            for (auto* m : {&iou, &f1, &cr}) m->begin_sequence();
            const auto names = png_names(em_gt);
            for (const auto& name : names) {
                const fs::path pp = fs::path(em_pred) / name;
                if (!fs::exists(pp)) throw DatasetError("missing predicted mask " + pp.string());
                const auto s = mask_metrics(read_mask_png(pp), read_mask_png(fs::path(em_gt) / name));
                iou.add(s.iou);
                f1.add(s.f1);
                cr.add(s.cr);
            }
            EvalReport r;
            r.iou = iou.mean();
            r.f1 = f1.mean();
            r.cr = cr.mean();
            r.extra = {{"frames", double(names.size())}};
            print_table(out, "People masks", r);
            write_report(em_report, r);
        } else if (*ex) {
            ServerConfig cfg = resolve_config(g);
            if (cfg.estimators.ground_truth.empty()) cfg.estimators.ground_truth = ex_dataset;
            cfg.output_dir = ex_out;
            log->info("export dataset={} threaded={} config {}", ex_dataset, ex_threaded, to_json(cfg));
            auto ds = std::make_shared<SequenceDataset>(ex_dataset);
            MappingServer server(cfg, make_slots(cfg, open_ground_truth(cfg.estimators)));
            std::size_t next = 0;
            auto source = [&]() -> std::optional<Frame> {
                if (next >= ds->size()) return std::nullopt;
                const auto& e = ds->trajectory()[next];
                Frame f;
                f.frame_id = e.frame_id;
                f.timestamp = static_cast<double>(next) / ds->meta().fps;
                f.intrinsics = ds->meta().intrinsics;
                f.pose = e.pose;
                f.rgb = ds->rgb(e.frame_id);
                ++next;
                return f;
            };
            run_schedule(server, source, default_schedule(ds->size()), ex_threaded);
            const auto diag = server.diagnostics();
            export_map(server.snapshot(), diag, ex_out);
            log->info("received={} replaced={} fused={} skipped={}", diag.received, diag.replaced, diag.fused,
                      diag.skipped);
            out << "fused " << diag.fused << " of " << diag.received << " frames into " << ex_out << '\n';
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

} // namespace hmap
