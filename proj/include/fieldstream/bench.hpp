#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fieldstream/core.hpp"
#include "fieldstream/engine.hpp"
#include "fieldstream/logfmt.hpp"
#include "fieldstream/net.hpp"
#include "fieldstream/pipe_proto.hpp"
#include "fieldstream/plot.hpp"
#include "fieldstream/proc.hpp"
#include "fieldstream/sim.hpp"

// Orchestrator and metrics harness: launches endpoints, engine and generator
// as child processes from one JSON config, reconciles their logs, and renders
// the latency/throughput/stability reports.

namespace fieldstream::bench {

struct ValidationError : Error { using Error::Error; };      // exit code 1
struct ComponentError : Error { using Error::Error; };       // exit code 2
struct ReconciliationError : Error { using Error::Error; };  // exit code 3

// ---------------------------------------------------------------------------
// Workflow configuration
// ---------------------------------------------------------------------------

struct WorkflowConfig {
    std::vector<EndpointAddress> endpoints;  // bind and connect addresses
    std::size_t retention = 4096;
    std::string output_dir;
    sim::SimConfig generator;      // io forced to Broker against `endpoints`
    engine::EngineConfig engine;   // endpoints mirrored from `endpoints`
    std::string analyzer_str = "inproc";  // "inproc" | "pipe:CMD"; {tool} expands

    void validate() const {
        if (endpoints.empty()) throw ValidationError("config: endpoints list is empty");
        for (const auto& ep : endpoints)
            if (ep.port == 0) throw ValidationError("config: endpoint port must be nonzero");
        std::set<std::string> uniq;
        for (const auto& ep : endpoints)
            if (!uniq.insert(ep.str()).second)
                throw ValidationError("config: duplicate endpoint " + ep.str());
        if (endpoints.size() > generator.world_size)
            throw ValidationError("config: more endpoints than generator ranks");
        try {
            generator.validate();
            engine.validate();
        } catch (const Error& e) {
            throw ValidationError(std::string("config: ") + e.what());
        }
        if (engine.endpoints != endpoints)
            throw ValidationError("config: engine endpoint list does not match workflow endpoints");
    }

    /// P : G : E ratio of the run.
    std::uint32_t ratio_p() const { return generator.world_size; }
    std::uint32_t ratio_g() const { return static_cast<std::uint32_t>(endpoints.size()); }
    std::uint32_t ratio_e() const {
        return engine.parallelism == 0 ? generator.world_size : engine.parallelism;
    }

    static WorkflowConfig from_json(const nlohmann::json& j) {
        WorkflowConfig cfg;
        try {
            for (const auto& e : j.at("endpoints"))
                cfg.endpoints.push_back(EndpointAddress::parse(e.get<std::string>()));
            cfg.retention = j.value("retention", std::size_t{4096});
            cfg.output_dir = j.value("output_dir", std::string{});

            const auto& g = j.at("generator");
            cfg.generator.world_size = g.at("world_size").get<std::uint32_t>();
            cfg.generator.dynamics = sim::DynamicsSpec::parse(g.at("dynamics").get<std::string>());
            cfg.generator.total_steps = g.value("total_steps", std::uint64_t{2000});
            cfg.generator.write_interval = g.value("write_interval", std::uint32_t{5});
            cfg.generator.step_compute_delay =
                std::chrono::milliseconds(g.value("step_compute_delay_ms", std::int64_t{0}));
            cfg.generator.field_name = g.value("field_name", std::string{"pressure"});
            cfg.generator.seed = g.value("seed", std::uint64_t{1});
            cfg.generator.queue_capacity = g.value("queue_capacity", std::size_t{64});
            auto bp = g.value("backpressure", std::string{"block"});
            if (bp == "block")
                cfg.generator.backpressure = broker::Backpressure::Block;
            else if (bp == "drop-newest")
                cfg.generator.backpressure = broker::Backpressure::DropNewest;
            else
                throw ValidationError("config: unknown backpressure '" + bp + "'");
            cfg.generator.io = sim::IoMode::Broker;
            cfg.generator.endpoints = cfg.endpoints;

            const auto& e = j.value("engine", nlohmann::json::object());
            cfg.engine.trigger_interval =
                std::chrono::milliseconds(e.value("trigger_ms", std::int64_t{3000}));
            cfg.engine.window_capacity = e.value("window", std::size_t{16});
            cfg.engine.parallelism = e.value("parallelism", 0u);
            cfg.engine.max_records_per_pull =
                e.value("max_records_per_pull", std::uint32_t{1024});
            cfg.analyzer_str = e.value("analyzer", std::string{"inproc"});
            cfg.engine.endpoints = cfg.endpoints;
            if (j.contains("engine_endpoints")) {
                std::vector<EndpointAddress> eps;
                for (const auto& item : j.at("engine_endpoints"))
                    eps.push_back(EndpointAddress::parse(item.get<std::string>()));
                cfg.engine.endpoints = std::move(eps);
            }
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(std::string("config: ") + ex.what());
        }
        return cfg;
    }

    /// Loads a config file; BROKER_ENDPOINTS overrides the endpoint lists.
    static WorkflowConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot read config file " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(std::string("config: ") + ex.what());
        }
        auto cfg = from_json(j);
        if (const char* env = std::getenv("BROKER_ENDPOINTS"); env && *env) {
            cfg.endpoints = parse_endpoint_list(env);
            cfg.generator.endpoints = cfg.endpoints;
            cfg.engine.endpoints = cfg.endpoints;
        }
        return cfg;
    }

    nlohmann::json to_json() const {
        nlohmann::json eps = nlohmann::json::array();
        for (const auto& ep : endpoints) eps.push_back(ep.str());
        return {{"endpoints", std::move(eps)},
                {"retention", retention},
                {"output_dir", output_dir},
                {"generator",
                 {{"world_size", generator.world_size},
                  {"dynamics", generator.dynamics.str()},
                  {"total_steps", generator.total_steps},
                  {"write_interval", generator.write_interval},
                  {"step_compute_delay_ms", generator.step_compute_delay.count()},
                  {"field_name", generator.field_name},
                  {"seed", generator.seed},
                  {"queue_capacity", generator.queue_capacity},
                  {"backpressure",
                   generator.backpressure == broker::Backpressure::Block ? "block"
                                                                         : "drop-newest"}}},
                {"engine",
                 {{"trigger_ms", engine.trigger_interval.count()},
                  {"window", engine.window_capacity},
                  {"analyzer", analyzer_str},
                  {"parallelism", engine.parallelism},
                  {"max_records_per_pull", engine.max_records_per_pull}}}};
    }
};

// ---------------------------------------------------------------------------
// Latency measurement and reconciliation
// ---------------------------------------------------------------------------

struct LatencyReport {
    std::map<std::string, std::vector<double>> per_stream_ns;
    std::uint64_t matched = 0;
    std::uint64_t loss = 0;        // emitted but never analyzed
    std::uint64_t duplicates = 0;  // analyzed more than once

    std::vector<double> all_ns() const {
        std::vector<double> out;
        for (const auto& [key, v] : per_stream_ns) out.insert(out.end(), v.begin(), v.end());
        return out;
    }
};

/// Joins the generator's emission log with the engine's analyzed log on
/// (stream, step). Latency is analyzed_at minus the generation-time stamp.
/// An analyzed record missing from the emission log, or analyzed twice, is a
/// reconciliation failure.
inline LatencyReport measure_latency(const std::vector<logfmt::EmissionRow>& emissions,
                                     const std::vector<logfmt::AnalyzedRow>& analyzed) {
    std::map<std::pair<std::string, std::uint64_t>, std::uint64_t> emitted_at;
    for (const auto& e : emissions) emitted_at[{e.stream_key, e.step}] = e.produced_at_ns;

    LatencyReport report;
    std::set<std::pair<std::string, std::uint64_t>> seen;
    std::vector<std::string> offenders;
    for (const auto& a : analyzed) {
        auto id = std::make_pair(a.stream_key, a.step);
        auto it = emitted_at.find(id);
        if (it == emitted_at.end()) {
            if (offenders.size() < 8)
                offenders.push_back(a.stream_key + "@" + std::to_string(a.step));
            continue;
        }
        if (!seen.insert(id).second) {
            ++report.duplicates;
            continue;
        }
        ++report.matched;
        double lat = a.analyzed_at_ns >= it->second
                         ? static_cast<double>(a.analyzed_at_ns - it->second)
                         : 0.0;
        report.per_stream_ns[a.stream_key].push_back(lat);
    }
    if (!offenders.empty()) {
        std::string msg = "analyzed records missing from emission log:";
        for (const auto& o : offenders) msg += " " + o;
        throw ReconciliationError(msg);
    }
    if (report.duplicates > 0)
        throw ReconciliationError(std::to_string(report.duplicates) +
                                  " records analyzed more than once");
    report.loss = emissions.size() - report.matched;
    return report;
}

// ---------------------------------------------------------------------------
// Metrics summary
// ---------------------------------------------------------------------------

struct StreamMetrics {
    std::uint64_t emitted = 0;
    std::uint64_t stored = 0;
    std::uint64_t analyzed = 0;
    double bytes = 0;
    double records_per_s = 0;
    double bytes_per_s = 0;
    double p50_s = 0, p95_s = 0, max_s = 0;
};

struct MetricsSummary {
    std::map<std::string, StreamMetrics> per_stream;
    std::uint64_t emitted = 0, stored = 0, analyzed = 0;
    std::uint64_t loss = 0, duplicates = 0;
    std::uint64_t bytes_emitted = 0;
    double generator_elapsed_s = 0;
    double workflow_elapsed_s = 0;   // generator start to last analysis
    double end_to_end_lag_s = 0;     // last analysis minus generator finish
    double agg_records_per_s = 0;
    double agg_bytes_per_s = 0;
    double latency_p50_s = 0, latency_p95_s = 0, latency_max_s = 0, latency_mean_s = 0;
    std::uint32_t ratio_p = 0, ratio_g = 0, ratio_e = 0;

    nlohmann::json to_json() const {
        nlohmann::json per = nlohmann::json::object();
        for (const auto& [key, s] : per_stream) {
            per[key] = {{"emitted", s.emitted},
                        {"stored", s.stored},
                        {"analyzed", s.analyzed},
                        {"bytes", s.bytes},
                        {"records_per_s", s.records_per_s},
                        {"bytes_per_s", s.bytes_per_s},
                        {"latency_s", {{"p50", s.p50_s}, {"p95", s.p95_s}, {"max", s.max_s}}}};
        }
        return {{"per_stream", std::move(per)},
                {"records", {{"emitted", emitted}, {"stored", stored}, {"analyzed", analyzed},
                             {"loss", loss}, {"duplicates", duplicates}}},
                {"bytes_emitted", bytes_emitted},
                {"generator_elapsed_s", generator_elapsed_s},
                {"workflow_elapsed_s", workflow_elapsed_s},
                {"end_to_end_lag_s", end_to_end_lag_s},
                {"throughput", {{"records_per_s", agg_records_per_s},
                                {"bytes_per_s", agg_bytes_per_s}}},
                {"latency_s", {{"p50", latency_p50_s}, {"p95", latency_p95_s},
                               {"max", latency_max_s}, {"mean", latency_mean_s}}},
                {"ratio", {{"p", ratio_p}, {"g", ratio_g}, {"e", ratio_e}}}};
    }

    static MetricsSummary from_json(const nlohmann::json& j) {
        MetricsSummary m;
        m.emitted = j.at("records").at("emitted").get<std::uint64_t>();
        m.stored = j.at("records").at("stored").get<std::uint64_t>();
        m.analyzed = j.at("records").at("analyzed").get<std::uint64_t>();
        m.loss = j.at("records").at("loss").get<std::uint64_t>();
        m.duplicates = j.at("records").at("duplicates").get<std::uint64_t>();
        m.bytes_emitted = j.at("bytes_emitted").get<std::uint64_t>();
        m.generator_elapsed_s = j.at("generator_elapsed_s").get<double>();
        m.workflow_elapsed_s = j.at("workflow_elapsed_s").get<double>();
        m.end_to_end_lag_s = j.at("end_to_end_lag_s").get<double>();
        m.agg_records_per_s = j.at("throughput").at("records_per_s").get<double>();
        m.agg_bytes_per_s = j.at("throughput").at("bytes_per_s").get<double>();
        m.latency_p50_s = j.at("latency_s").at("p50").get<double>();
        m.latency_p95_s = j.at("latency_s").at("p95").get<double>();
        m.latency_max_s = j.at("latency_s").at("max").get<double>();
        m.latency_mean_s = j.at("latency_s").at("mean").get<double>();
        m.ratio_p = j.at("ratio").at("p").get<std::uint32_t>();
        m.ratio_g = j.at("ratio").at("g").get<std::uint32_t>();
        m.ratio_e = j.at("ratio").at("e").get<std::uint32_t>();
        return m;
    }
};

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

struct ReportRowLite {
    std::string stream_key;
    std::uint64_t trigger_seq = 0;
    std::uint64_t step_lo = 0;
    std::uint64_t step_hi = 0;
    std::string status;
    double metric = 0;
};

inline std::vector<ReportRowLite> read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<ReportRowLite> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = logfmt::split_csv(line);
        if (f.size() < 8) throw ParseError("bad report row: '" + line + "'");
        ReportRowLite row;
        row.stream_key = f[0];
        row.trigger_seq = logfmt::to_u64(f[1]);
        row.step_lo = logfmt::to_u64(f[2]);
        row.step_hi = logfmt::to_u64(f[3]);
        row.status = f[4];
        row.metric = f[6].empty() ? 0.0 : pipe::parse_double(f[6]);
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Writes metrics.json and the per-stream stability time-series panels
/// (metric vs step, one panel per stream).
inline void emit_report(const std::vector<ReportRowLite>& rows, const MetricsSummary& metrics,
                        const std::string& dir) {
    if (rows.empty()) throw ValidationError("no analysis rows to report");
    {
        std::ofstream out(dir + "/metrics.json");
        if (!out) throw IoError("cannot write " + dir + "/metrics.json");
        out << metrics.to_json().dump(2) << '\n';
    }
    std::map<std::string, plot::Series> by_stream;
    for (const auto& row : rows) {
        if (row.status != "ok") continue;
        by_stream[row.stream_key].points.emplace_back(static_cast<double>(row.step_hi),
                                                      row.metric);
    }
    std::vector<plot::Panel> panels;
    for (auto& [key, series] : by_stream) panels.push_back({key, std::move(series)});
    if (!panels.empty()) plot::write_panels_svg(dir + "/stability.svg", panels);
}

/// Cross-run scaling report: throughput and p95 latency against the number of
/// generator ranks, one point per run directory.
inline void write_scaling_report(const std::vector<std::string>& run_dirs,
                                 const std::string& out_dir) {
    if (run_dirs.empty()) throw ValidationError("no run directories given");
    std::vector<MetricsSummary> runs;
    for (const auto& dir : run_dirs) {
        std::ifstream in(dir + "/metrics.json");
        if (!in) throw IoError("cannot read " + dir + "/metrics.json");
        nlohmann::json j;
        in >> j;
        runs.push_back(MetricsSummary::from_json(j));
    }
    std::sort(runs.begin(), runs.end(),
              [](const MetricsSummary& a, const MetricsSummary& b) { return a.ratio_p < b.ratio_p; });

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir + "/scaling.csv");
        out << "p,g,e,records_per_s,bytes_per_s,latency_p50_s,latency_p95_s,latency_max_s,"
               "end_to_end_lag_s\n";
        for (const auto& r : runs)
            out << r.ratio_p << ',' << r.ratio_g << ',' << r.ratio_e << ','
                << r.agg_records_per_s << ',' << r.agg_bytes_per_s << ',' << r.latency_p50_s
                << ',' << r.latency_p95_s << ',' << r.latency_max_s << ','
                << r.end_to_end_lag_s << '\n';
    }
    plot::Series throughput{"throughput", {}};
    plot::Series latency{"p95 latency", {}};
    for (const auto& r : runs) {
        throughput.points.emplace_back(r.ratio_p, r.agg_bytes_per_s / 1e6);
        latency.points.emplace_back(r.ratio_p, r.latency_p95_s);
    }
    plot::write_panels_svg(out_dir + "/scaling.svg",
                           {{"aggregate throughput (MB/s) vs ranks", throughput},
                            {"analysis latency p95 (s) vs ranks", latency}});
}

// ---------------------------------------------------------------------------
// Workflow execution
// ---------------------------------------------------------------------------

struct StoredCounts {
    std::map<std::string, std::uint64_t> per_stream;
    bool steps_strictly_increasing = true;

    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (const auto& [key, c] : per_stream) n += c;
        return n;
    }
};

/// Pages through every stream on every endpoint and counts retained records.
inline StoredCounts read_stored_counts(const std::vector<EndpointAddress>& endpoints,
                                       std::chrono::milliseconds timeout =
                                           std::chrono::milliseconds(5000)) {
    StoredCounts out;
    for (const auto& ep : endpoints) {
        net::FramedConn conn(net::Socket::connect(ep, timeout));
        conn.socket().set_recv_timeout(timeout);
        conn.send(wire::ListStreams{});
        auto reply = conn.recv();
        if (!reply) throw IoError("endpoint " + ep.str() + " closed");
        auto* list = std::get_if<wire::StreamList>(&*reply);
        if (!list) throw ProtocolError("expected STREAM_LIST from " + ep.str());
        for (const auto& key : list->keys) {
            std::uint64_t cursor = 0;
            bool first = true;
            std::uint64_t count = 0;
            while (true) {
                conn.send(wire::ReadSince{key, cursor, 1024});
                auto page_reply = conn.recv();
                if (!page_reply) throw IoError("endpoint " + ep.str() + " closed");
                auto* page = std::get_if<wire::RecordBatch>(&*page_reply);
                if (!page) throw ProtocolError("expected RECORD_BATCH from " + ep.str());
                if (page->records.empty()) break;
                for (const auto& rec : page->records) {
                    if (!first && rec.step <= cursor) out.steps_strictly_increasing = false;
                    first = false;
                    cursor = rec.step;
                    ++count;
                }
            }
            out.per_stream[key] += count;
        }
    }
    return out;
}

struct WorkflowResult {
    std::string dir;
    MetricsSummary metrics;
};

namespace detail {

inline void write_manifest(const std::string& dir, const std::string& status,
                           const std::string& component, const std::string& detail) {
    std::ofstream out(dir + "/MANIFEST.txt");
    out << "status=" << status << '\n';
    if (!component.empty()) out << "component=" << component << '\n';
    if (!detail.empty()) out << "detail=" << detail << '\n';
}

inline bool wait_ready(const EndpointAddress& ep, std::chrono::milliseconds timeout) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        try {
            net::Socket::connect(ep, std::chrono::milliseconds(250));
            return true;
        } catch (const IoError&) {
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    }
    return false;
}

inline std::string endpoint_list_str(const std::vector<EndpointAddress>& eps) {
    std::string out;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        if (i) out += ',';
        out += eps[i].str();
    }
    return out;
}

inline std::string expand_tool(std::string s, const std::string& tool_path) {
    auto pos = s.find("{tool}");
    while (pos != std::string::npos) {
        s.replace(pos, 6, tool_path);
        pos = s.find("{tool}");
    }
    return s;
}

}  // namespace detail

/// Runs the full workflow: endpoints, engine, generator, drain, teardown,
/// post-processing. Throws ValidationError / ComponentError /
/// ReconciliationError; partial artifacts stay in the output directory with a
/// MANIFEST describing the failure.
inline WorkflowResult run_workflow(WorkflowConfig cfg, const std::string& tool_path) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::string dir = cfg.output_dir;
    if (dir.empty())
        dir = "run-" + std::to_string(
                  std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch()).count());
    fs::create_directories(dir);
    {
        std::ofstream out(dir + "/config.json");
        out << cfg.to_json().dump(2) << '\n';
    }

    std::vector<proc::ChildProcess> children;  // endpoints, then engine, then simgen
    auto teardown = [&] {
        for (auto it = children.rbegin(); it != children.rend(); ++it)
            if (it->valid()) it->terminate(std::chrono::milliseconds(3000));
    };
    auto fail = [&](const std::string& component, const std::string& detail) {
        detail::write_manifest(dir, "failed", component, detail);
        teardown();
        throw ComponentError(component + ": " + detail);
    };

    // endpoints
    for (std::size_t i = 0; i < cfg.endpoints.size(); ++i) {
        const auto& ep = cfg.endpoints[i];
        auto log = dir + "/endpoint_" + std::to_string(i) + ".log";
        children.push_back(proc::ChildProcess::spawn(
            {tool_path, "endpoint", "--bind", ep.str(), "--retention",
             std::to_string(cfg.retention), "--stats-file",
             dir + "/endpoint_" + std::to_string(i) + ".stats.csv"},
            "endpoint-" + std::to_string(i), log, log));
    }
    for (const auto& ep : cfg.endpoints)
        if (!detail::wait_ready(ep, std::chrono::milliseconds(5000)))
            fail("endpoint", ep.str() + " did not become ready");

    // engine
    {
        auto log = dir + "/engine.log";
        children.push_back(proc::ChildProcess::spawn(
            {tool_path, "engine", "--endpoints", detail::endpoint_list_str(cfg.endpoints),
             "--trigger-ms", std::to_string(cfg.engine.trigger_interval.count()),
             "--window", std::to_string(cfg.engine.window_capacity),
             "--analyzer", detail::expand_tool(cfg.analyzer_str, tool_path),
             "--parallelism", std::to_string(cfg.engine.parallelism),
             "--max-pull", std::to_string(cfg.engine.max_records_per_pull),
             "--out", dir + "/report.csv",
             "--records-log", dir + "/analyzed.csv",
             "--summary", dir + "/summary.json"},
            "engine", log, log));
    }
    proc::ChildProcess& engine_child = children.back();

    // generator
    {
        auto log = dir + "/simgen.log";
        children.push_back(proc::ChildProcess::spawn(
            {tool_path, "simgen", "--ranks", std::to_string(cfg.generator.world_size),
             "--dynamics", cfg.generator.dynamics.str(),
             "--steps", std::to_string(cfg.generator.total_steps),
             "--interval", std::to_string(cfg.generator.write_interval),
             "--delay-ms", std::to_string(cfg.generator.step_compute_delay.count()),
             "--io", "broker:" + detail::endpoint_list_str(cfg.endpoints),
             "--log", dir,
             "--field", cfg.generator.field_name,
             "--seed", std::to_string(cfg.generator.seed),
             "--queue-capacity", std::to_string(cfg.generator.queue_capacity),
             "--backpressure",
             cfg.generator.backpressure == broker::Backpressure::Block ? "block" : "drop-newest"},
            "simgen", log, log));
    }
    proc::ChildProcess& simgen_child = children.back();

    // wait for the generator to finish all its steps
    auto gen_budget = std::chrono::milliseconds(
        cfg.generator.total_steps * static_cast<std::uint64_t>(
            std::max<std::int64_t>(cfg.generator.step_compute_delay.count(), 1)) * 3 + 120000);
    auto gen_code = simgen_child.wait(gen_budget);
    if (!gen_code) fail("simgen", "did not finish within budget");
    if (*gen_code != 0) fail("simgen", "exited with code " + std::to_string(*gen_code));

    // drain: one final trigger after the last data, then stop
    engine_child.signal(SIGTERM);
    auto eng_code = engine_child.wait(cfg.engine.trigger_interval +
                                      std::chrono::milliseconds(60000));
    if (!eng_code) fail("engine", "did not stop after drain signal");
    if (*eng_code != 0) fail("engine", "exited with code " + std::to_string(*eng_code));

    // observe what the endpoints retained, then stop them
    StoredCounts stored;
    try {
        stored = read_stored_counts(cfg.endpoints);
    } catch (const Error& e) {
        fail("endpoint", std::string("stored-count readback: ") + e.what());
    }
    for (std::size_t i = 0; i < cfg.endpoints.size(); ++i) {
        auto code = children[i].terminate(std::chrono::milliseconds(5000));
        if (code != 0) fail("endpoint", "exited with code " + std::to_string(code));
    }

    // post-processing
    std::vector<logfmt::EmissionRow> emissions;
    std::vector<logfmt::AnalyzedRow> analyzed;
    nlohmann::json gen_stats, engine_summary;
    try {
        emissions = logfmt::read_emission_log(dir + "/emissions.csv");
        analyzed = logfmt::read_analyzed_log(dir + "/analyzed.csv");
        std::ifstream gs(dir + "/generator_stats.json");
        gs >> gen_stats;
        std::ifstream es(dir + "/summary.json");
        es >> engine_summary;
    } catch (const std::exception& e) {
        detail::write_manifest(dir, "failed", "post-process", e.what());
        throw ComponentError(std::string("post-process: ") + e.what());
    }

    LatencyReport latrep;
    try {
        latrep = measure_latency(emissions, analyzed);
    } catch (const ReconciliationError& e) {
        detail::write_manifest(dir, "failed", "reconciliation", e.what());
        throw;
    }

    MetricsSummary metrics;
    metrics.ratio_p = cfg.ratio_p();
    metrics.ratio_g = cfg.ratio_g();
    metrics.ratio_e = cfg.ratio_e();
    metrics.emitted = emissions.size();
    metrics.analyzed = analyzed.size();
    metrics.stored = stored.total();
    metrics.loss = latrep.loss;
    metrics.duplicates = latrep.duplicates;
    metrics.bytes_emitted = gen_stats.at("bytes").get<std::uint64_t>();
    metrics.generator_elapsed_s = gen_stats.at("elapsed_s").get<double>();

    const auto gen_started = gen_stats.at("started_at_ns").get<std::uint64_t>();
    const auto gen_finished = gen_stats.at("finished_at_ns").get<std::uint64_t>();
    const auto last_analyzed = engine_summary.value("last_analyzed_at_ns", std::uint64_t{0});
    metrics.workflow_elapsed_s =
        last_analyzed > gen_started ? static_cast<double>(last_analyzed - gen_started) / 1e9
                                    : metrics.generator_elapsed_s;
    metrics.end_to_end_lag_s =
        last_analyzed > gen_finished ? static_cast<double>(last_analyzed - gen_finished) / 1e9
                                     : 0.0;

    if (metrics.generator_elapsed_s > 0) {
        metrics.agg_records_per_s = static_cast<double>(metrics.emitted) /
                                    metrics.generator_elapsed_s;
        metrics.agg_bytes_per_s = static_cast<double>(metrics.bytes_emitted) /
                                  metrics.generator_elapsed_s;
    }
    auto all_lat = latrep.all_ns();
    if (!all_lat.empty()) {
        metrics.latency_p50_s = logfmt::percentile(all_lat, 50) / 1e9;
        metrics.latency_p95_s = logfmt::percentile(all_lat, 95) / 1e9;
        metrics.latency_max_s = logfmt::percentile(all_lat, 100) / 1e9;
        double sum = 0;
        for (double v : all_lat) sum += v;
        metrics.latency_mean_s = sum / static_cast<double>(all_lat.size()) / 1e9;
    }

    std::map<std::string, std::uint64_t> emitted_per_stream;
    for (const auto& e : emissions) ++emitted_per_stream[e.stream_key];
    std::map<std::string, std::uint64_t> analyzed_per_stream;
    for (const auto& a : analyzed) ++analyzed_per_stream[a.stream_key];
    const double bytes_per_record = 8.0 * cfg.generator.dynamics.element_count();
    for (const auto& [key, count] : emitted_per_stream) {
        StreamMetrics s;
        s.emitted = count;
        s.bytes = static_cast<double>(count) * bytes_per_record;
        if (auto it = stored.per_stream.find(key); it != stored.per_stream.end())
            s.stored = it->second;
        if (auto it = analyzed_per_stream.find(key); it != analyzed_per_stream.end())
            s.analyzed = it->second;
        if (metrics.generator_elapsed_s > 0) {
            s.records_per_s = static_cast<double>(count) / metrics.generator_elapsed_s;
            s.bytes_per_s = s.bytes / metrics.generator_elapsed_s;
        }
        if (auto it = latrep.per_stream_ns.find(key); it != latrep.per_stream_ns.end()) {
            s.p50_s = logfmt::percentile(it->second, 50) / 1e9;
            s.p95_s = logfmt::percentile(it->second, 95) / 1e9;
            s.max_s = logfmt::percentile(it->second, 100) / 1e9;
        }
        metrics.per_stream[key] = s;
    }

    auto rows = read_report_csv(dir + "/report.csv");
    emit_report(rows, metrics, dir);
    detail::write_manifest(dir, "ok", "", "");
    return {dir, metrics};
}

}  // namespace fieldstream::bench
