// fieldstream: stream field snapshots from simulation ranks to in-memory
// stream endpoints and analyze them in micro-batches with DMD.
//
// Subcommands: endpoint, engine, simgen, analyze-file, run, report.

#include <signal.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fieldstream/bench.hpp"
#include "fieldstream/core.hpp"
#include "fieldstream/dmd.hpp"
#include "fieldstream/engine.hpp"
#include "fieldstream/logfmt.hpp"
#include "fieldstream/pipe_proto.hpp"
#include "fieldstream/server.hpp"
#include "fieldstream/sim.hpp"

namespace fs = fieldstream;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

void install_signal_handlers() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::signal(SIGPIPE, SIG_IGN);
}

std::string self_path() {
    char buf[4096];
    ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) return "fieldstream";
    buf[n] = '\0';
    return buf;
}

// ---------------------------------------------------------------------------
// endpoint
// ---------------------------------------------------------------------------

int cmd_endpoint(const std::string& bind, std::size_t retention, const std::string& stats_file,
                 std::size_t max_frame) {
    fs::server::ServerConfig config;
    config.bind = fs::EndpointAddress::parse(bind);
    config.retention = retention;
    config.stats_file = stats_file;
    config.max_frame = max_frame;

    fs::server::EndpointServer server(config);
    server.start();
    std::cout << "endpoint listening on " << config.bind.host << ":" << server.port()
              << " retention=" << retention << std::endl;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    std::cout << "endpoint stopped" << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------
// engine
// ---------------------------------------------------------------------------

fs::engine::EngineConfig make_engine_config(const std::string& endpoints, std::int64_t trigger_ms,
                                            const std::string& analyzer, std::size_t window,
                                            unsigned parallelism, std::uint32_t max_pull,
                                            double tol, std::size_t rmax) {
    fs::engine::EngineConfig config;
    config.endpoints = fs::parse_endpoint_list(endpoints);
    config.trigger_interval = std::chrono::milliseconds(trigger_ms);
    config.window_capacity = window;
    config.parallelism = parallelism;
    config.max_records_per_pull = max_pull;
    config.svd_tol = tol;
    config.r_max = rmax;
    if (analyzer == "inproc") {
        config.analyzer = fs::engine::AnalyzerKind::InProcess;
    } else if (analyzer.rfind("pipe:", 0) == 0) {
        config.analyzer = fs::engine::AnalyzerKind::ExternalPipe;
        config.pipe_command = analyzer.substr(5);
    } else {
        throw fs::InvalidArgument("analyzer must be 'inproc' or 'pipe:CMD'");
    }
    return config;
}

int cmd_engine(const fs::engine::EngineConfig& config, const std::string& out_path,
               const std::string& records_log, const std::string& summary_path,
               std::uint64_t max_cycles) {
    std::ofstream report(out_path);
    if (!report) throw fs::IoError("cannot write " + out_path);
    report << fs::engine::AnalysisReportRow::csv_header() << '\n';

    std::ofstream records(records_log);
    if (!records) throw fs::IoError("cannot write " + records_log);
    records << fs::logfmt::kAnalyzedHeader << '\n';

    fs::engine::StreamEngine engine(config);
    engine.on_row = [&](const fs::engine::AnalysisReportRow& row) {
        report << row.to_csv() << '\n';
        report.flush();
    };
    engine.on_record = [&](const fs::logfmt::AnalyzedRow& r) {
        records << r.stream_key << ',' << r.step << ',' << r.produced_at_ns << ','
                << r.analyzed_at_ns << ',' << r.trigger_seq << '\n';
    };
    engine.on_warning = [](const std::string& msg) { std::cerr << msg << std::endl; };

    if (max_cycles > 0) {
        for (std::uint64_t i = 0; i < max_cycles && !g_stop; ++i) {
            std::this_thread::sleep_for(config.trigger_interval);
            engine.run_cycle();
            records.flush();
        }
    } else {
        std::thread watcher([&engine] {
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
            engine.request_stop();
        });
        engine.run();
        g_stop = 1;
        watcher.join();
    }
    records.flush();

    std::ofstream summary(summary_path);
    if (!summary) throw fs::IoError("cannot write " + summary_path);
    summary << engine.summary_json().dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// simgen
// ---------------------------------------------------------------------------

int cmd_simgen(fs::sim::SimConfig config, const std::string& io_spec,
               const std::string& log_dir) {
    if (io_spec == "off") {
        config.io = fs::sim::IoMode::Disabled;
    } else if (io_spec.rfind("file:", 0) == 0) {
        config.io = fs::sim::IoMode::File;
        config.file_dir = io_spec.substr(5);
    } else if (io_spec.rfind("broker:", 0) == 0) {
        config.io = fs::sim::IoMode::Broker;
        config.endpoints = fs::parse_endpoint_list(io_spec.substr(7));
    } else {
        throw fs::InvalidArgument("--io must be off, file:DIR or broker:HOST:PORT,...");
    }
    if (config.io == fs::sim::IoMode::File)
        std::filesystem::create_directories(config.file_dir);

    std::vector<fs::logfmt::EmissionRow> emissions;
    auto stats = fs::sim::run_generator(config, &emissions);

    std::filesystem::create_directories(log_dir);
    fs::logfmt::write_emission_log(log_dir + "/emissions.csv", emissions);
    {
        std::ofstream out(log_dir + "/generator_stats.json");
        if (!out) throw fs::IoError("cannot write " + log_dir + "/generator_stats.json");
        out << stats.to_json().dump(2) << '\n';
    }

    std::cout << "simgen ranks=" << config.world_size << " records=" << stats.total_records()
              << " dropped=" << stats.total_dropped() << " bytes=" << stats.total_bytes()
              << " elapsed_s=" << stats.elapsed_s() << std::endl;
    if (stats.any_failed()) {
        for (const auto& r : stats.ranks)
            if (r.failed) std::cerr << "rank " << r.rank << " failed: " << r.error << std::endl;
        return 2;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// analyze-file
// ---------------------------------------------------------------------------

fs::dmd::SnapshotWindow window_from_request(const fs::pipe::Request& req) {
    if (req.m() < 1 || req.n() < 1) throw fs::InvalidArgument("empty snapshot set");
    fs::dmd::SnapshotWindow window(req.n(), std::max<std::size_t>(req.m(), 2));
    for (std::size_t i = 0; i < req.m(); ++i) window.push(req.steps[i], req.snapshots[i]);
    return window;
}

int cmd_analyze_file(const std::string& input, const std::string& key, double tol,
                     std::size_t rmax) {
    if (!input.empty()) {
        std::ifstream in(input);
        if (!in) throw fs::IoError("cannot read " + input);
        fs::pipe::Request req;
        req.stream_key = key;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto f = fs::logfmt::split_csv(line);
            if (!f.empty() && f[0] == "step") continue;  // optional header
            if (f.size() < 2) throw fs::ParseError("bad snapshot row: '" + line + "'");
            req.steps.push_back(fs::logfmt::to_u64(f[0]));
            std::vector<double> snap;
            snap.reserve(f.size() - 1);
            for (std::size_t i = 1; i < f.size(); ++i)
                snap.push_back(fs::pipe::parse_double(f[i]));
            req.snapshots.push_back(std::move(snap));
        }
        auto window = window_from_request(req);
        auto res = fs::dmd::compute_dmd(window, tol, rmax);
        std::cout << fs::pipe::encode_result(key, window.first_step(), window.last_step(), res);
        return 0;
    }

    // pipe mode: serve requests from stdin until EOF
    while (auto req = fs::pipe::read_request(std::cin)) {
        try {
            auto window = window_from_request(*req);
            auto res = fs::dmd::compute_dmd(window, tol, rmax);
            std::cout << fs::pipe::encode_result(req->stream_key, window.first_step(),
                                                 window.last_step(), res);
        } catch (const fs::Error& e) {
            std::cout << "ERROR " << e.what() << '\n';
        }
        std::cout.flush();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    install_signal_handlers();

    CLI::App app{"field-snapshot streaming pipeline with micro-batched DMD analysis"};
    app.require_subcommand(1);

    // endpoint
    std::string ep_bind = "127.0.0.1:6379";
    std::size_t ep_retention = 4096;
    std::string ep_stats_file;
    std::size_t ep_max_frame = fs::wire::kDefaultMaxFrame;
    auto* ep_cmd = app.add_subcommand("endpoint", "run one stream endpoint server");
    ep_cmd->add_option("--bind", ep_bind, "bind address HOST:PORT");
    ep_cmd->add_option("--retention", ep_retention, "max records retained per stream");
    ep_cmd->add_option("--stats-file", ep_stats_file, "per-second stats CSV path");
    ep_cmd->add_option("--max-frame", ep_max_frame, "frame size cap in bytes");

    // engine
    std::string en_endpoints;
    std::int64_t en_trigger_ms = 3000;
    std::string en_analyzer = "inproc";
    std::size_t en_window = 16;
    unsigned en_parallelism = 0;
    std::uint32_t en_max_pull = 1024;
    double en_tol = 1e-10;
    std::size_t en_rmax = 0;
    std::string en_out = "report.csv";
    std::string en_records_log = "analyzed.csv";
    std::string en_summary = "summary.json";
    std::uint64_t en_max_cycles = 0;
    auto* en_cmd = app.add_subcommand("engine", "run the micro-batching analysis engine");
    en_cmd->add_option("--endpoints", en_endpoints, "HOST:PORT,HOST:PORT,...")->required();
    en_cmd->add_option("--trigger-ms", en_trigger_ms, "trigger interval in ms");
    en_cmd->add_option("--analyzer", en_analyzer, "inproc or pipe:\"CMD\"");
    en_cmd->add_option("--window", en_window, "snapshot window capacity per stream");
    en_cmd->add_option("--parallelism", en_parallelism,
                       "concurrent partition dispatches (0 = all)");
    en_cmd->add_option("--max-pull", en_max_pull, "max records per READ_SINCE page");
    en_cmd->add_option("--tol", en_tol, "SVD truncation tolerance relative to sigma_1");
    en_cmd->add_option("--rmax", en_rmax, "cap on DMD truncation rank (0 = none)");
    en_cmd->add_option("--out", en_out, "report CSV path");
    en_cmd->add_option("--records-log", en_records_log, "analyzed-records CSV path");
    en_cmd->add_option("--summary", en_summary, "summary JSON path");
    en_cmd->add_option("--max-cycles", en_max_cycles,
                       "run exactly N trigger cycles then exit (0 = until signalled)");

    // simgen
    fs::sim::SimConfig sim_config;
    std::string sg_dynamics;
    std::string sg_io = "off";
    std::string sg_log_dir = ".";
    std::int64_t sg_delay_ms = 0;
    std::string sg_backpressure = "block";
    std::int64_t sg_connect_timeout_ms = 5000;
    std::int64_t sg_write_timeout_ms = 10000;
    auto* sg_cmd = app.add_subcommand("simgen", "run the synthetic snapshot generator");
    sg_cmd->add_option("--ranks", sim_config.world_size, "number of worker ranks");
    sg_cmd->add_option("--dynamics", sg_dynamics,
                       "linear:diag:...|linear:rot:THETA|diffusion:N,MU|random:N,SEED")
        ->required();
    sg_cmd->add_option("--steps", sim_config.total_steps, "total simulation steps");
    sg_cmd->add_option("--interval", sim_config.write_interval, "emit every k-th step");
    sg_cmd->add_option("--delay-ms", sg_delay_ms, "simulated per-step compute time");
    sg_cmd->add_option("--io", sg_io, "off | file:DIR | broker:HOST:PORT,...");
    sg_cmd->add_option("--log", sg_log_dir, "directory for emission log and stats");
    sg_cmd->add_option("--field", sim_config.field_name, "field name");
    sg_cmd->add_option("--seed", sim_config.seed, "base RNG seed");
    sg_cmd->add_option("--queue-capacity", sim_config.queue_capacity, "broker queue capacity");
    sg_cmd->add_option("--backpressure", sg_backpressure, "block | drop-newest");
    sg_cmd->add_option("--connect-timeout-ms", sg_connect_timeout_ms, "broker connect timeout");
    sg_cmd->add_option("--write-timeout-ms", sg_write_timeout_ms, "broker write timeout");

    // analyze-file
    std::string af_input;
    std::string af_key = "file:0";
    double af_tol = 1e-10;
    std::size_t af_rmax = 0;
    auto* af_cmd = app.add_subcommand(
        "analyze-file", "DMD over a snapshot CSV, or serve pipe requests on stdin");
    af_cmd->add_option("--input", af_input, "CSV of step,v1,...,vn rows");
    af_cmd->add_option("--key", af_key, "stream key for the RESULT line");
    af_cmd->add_option("--tol", af_tol, "SVD truncation tolerance");
    af_cmd->add_option("--rmax", af_rmax, "cap on truncation rank (0 = none)");

    // run
    std::string run_config_path;
    std::string run_out;
    std::string run_tool = self_path();
    auto* run_cmd = app.add_subcommand("run", "run a full workflow from a JSON config");
    run_cmd->add_option("config", run_config_path, "workflow config JSON")->required();
    run_cmd->add_option("--out", run_out, "override output directory");
    run_cmd->add_option("--tool", run_tool, "binary to spawn components from");

    // report
    std::vector<std::string> rep_dirs;
    std::string rep_out = ".";
    auto* rep_cmd = app.add_subcommand("report", "cross-run scaling report");
    rep_cmd->add_option("dirs", rep_dirs, "run artifact directories")->required();
    rep_cmd->add_option("--out", rep_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ep_cmd) return cmd_endpoint(ep_bind, ep_retention, ep_stats_file, ep_max_frame);
        if (*en_cmd) {
            auto config = make_engine_config(en_endpoints, en_trigger_ms, en_analyzer,
                                             en_window, en_parallelism, en_max_pull, en_tol,
                                             en_rmax);
            return cmd_engine(config, en_out, en_records_log, en_summary, en_max_cycles);
        }
        if (*sg_cmd) {
            sim_config.dynamics = fs::sim::DynamicsSpec::parse(sg_dynamics);
            sim_config.step_compute_delay = std::chrono::milliseconds(sg_delay_ms);
            sim_config.connect_timeout = std::chrono::milliseconds(sg_connect_timeout_ms);
            sim_config.write_timeout = std::chrono::milliseconds(sg_write_timeout_ms);
            if (sg_backpressure == "block")
                sim_config.backpressure = fs::broker::Backpressure::Block;
            else if (sg_backpressure == "drop-newest")
                sim_config.backpressure = fs::broker::Backpressure::DropNewest;
            else
                throw fs::InvalidArgument("--backpressure must be block or drop-newest");
            return cmd_simgen(sim_config, sg_io, sg_log_dir);
        }
        if (*af_cmd) return cmd_analyze_file(af_input, af_key, af_tol, af_rmax);
        if (*run_cmd) {
            auto cfg = fs::bench::WorkflowConfig::load(run_config_path);
            if (!run_out.empty()) cfg.output_dir = run_out;
            auto result = fs::bench::run_workflow(cfg, run_tool);
            std::cout << "workflow complete: " << result.dir << '\n'
                      << "  records emitted=" << result.metrics.emitted
                      << " stored=" << result.metrics.stored
                      << " analyzed=" << result.metrics.analyzed
                      << " loss=" << result.metrics.loss << '\n'
                      << "  throughput=" << result.metrics.agg_bytes_per_s / 1e6 << " MB/s"
                      << " latency p50=" << result.metrics.latency_p50_s << "s"
                      << " p95=" << result.metrics.latency_p95_s << "s" << '\n'
                      << "  end-to-end lag=" << result.metrics.end_to_end_lag_s << "s"
                      << std::endl;
            return 0;
        }
        if (*rep_cmd) {
            fs::bench::write_scaling_report(rep_dirs, rep_out);
            std::cout << "scaling report written to " << rep_out << std::endl;
            return 0;
        }
    } catch (const fs::bench::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << std::endl;
        return 1;
    } catch (const fs::bench::ReconciliationError& e) {
        std::cerr << "reconciliation error: " << e.what() << std::endl;
        return 3;
    } catch (const fs::InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << std::endl;
        return 1;
    } catch (const fs::ParseError& e) {
        std::cerr << "parse error: " << e.what() << std::endl;
        return 1;
    } catch (const fs::Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
