#pragma once

#include <atomic>
#include <chrono>
#include <complex>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fieldstream/core.hpp"
#include "fieldstream/dmd.hpp"
#include "fieldstream/logfmt.hpp"
#include "fieldstream/net.hpp"
#include "fieldstream/pipe_proto.hpp"
#include "fieldstream/proc.hpp"
#include "fieldstream/store.hpp"
#include "fieldstream/wire.hpp"

// Micro-batching analysis driver. On every trigger it discovers streams on
// all endpoints, pulls each stream's new records past its cursor, re-arranges
// them into per-stream micro-batches, and dispatches each batch exactly once
// to the configured analyzer, feeding a sliding snapshot window per stream.

namespace fieldstream::engine {

enum class AnalyzerKind { InProcess, ExternalPipe };

struct EngineConfig {
    std::vector<EndpointAddress> endpoints;
    std::chrono::milliseconds trigger_interval{3000};
    std::uint32_t max_records_per_pull = 1024;
    std::size_t window_capacity = 16;
    AnalyzerKind analyzer = AnalyzerKind::InProcess;
    std::string pipe_command;  // used by ExternalPipe
    unsigned parallelism = 0;  // concurrent partition dispatches; 0 = all at once
    double svd_tol = 1e-10;
    std::size_t r_max = 0;
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds io_timeout{10000};
    std::chrono::milliseconds pipe_timeout{30000};
    std::size_t max_frame = wire::kDefaultMaxFrame;

    void validate() const {
        if (endpoints.empty()) throw InvalidArgument("engine needs at least one endpoint");
        if (trigger_interval.count() <= 0) throw InvalidArgument("trigger_interval must be > 0");
        if (max_records_per_pull < 1) throw InvalidArgument("max_records_per_pull must be >= 1");
        if (window_capacity < 2) throw InvalidArgument("window capacity must be >= 2");
        if (analyzer == AnalyzerKind::ExternalPipe && pipe_command.empty())
            throw InvalidArgument("pipe analyzer needs a command");
    }
};

/// All unconsumed records of one stream gathered in one trigger cycle.
struct MicroBatch {
    std::string stream_key;
    std::uint64_t trigger_seq = 0;
    std::vector<store::StoredRecord> records;  // steps ascending
};

struct LatencyStats {
    std::uint64_t min_ns = 0;
    std::uint64_t max_ns = 0;
    double mean_ns = 0.0;
};

struct AnalysisReportRow {
    enum class Status { Ok, WarmingUp, Error };

    std::string stream_key;
    std::uint64_t trigger_seq = 0;
    std::uint64_t step_lo = 0;  // window range the analysis saw
    std::uint64_t step_hi = 0;
    Status status = Status::Ok;
    std::size_t batch_records = 0;
    double metric = 0.0;  // valid when status == Ok
    std::size_t rank = 0;
    std::vector<std::complex<double>> eigenvalues;
    std::uint64_t analyzed_at_ns = 0;
    LatencyStats latency;  // analyzed_at - produced_at over the batch
    std::string error;

    static std::string csv_header() {
        return "stream_key,trigger_seq,step_lo,step_hi,status,batch_records,metric,rank,"
               "eigenvalues,analyzed_at_ns,latency_min_ns,latency_max_ns,latency_mean_ns,error";
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << stream_key << ',' << trigger_seq << ',' << step_lo << ',' << step_hi << ','
            << status_name(status) << ',' << batch_records << ',';
        if (status == Status::Ok) out << pipe::format_double(metric);
        out << ',' << rank << ',';
        for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
            if (i) out << ';';
            out << pipe::format_double(eigenvalues[i].real()) << ' '
                << pipe::format_double(eigenvalues[i].imag());
        }
        out << ',' << analyzed_at_ns << ',' << latency.min_ns << ',' << latency.max_ns << ','
            << static_cast<std::uint64_t>(latency.mean_ns) << ',';
        for (char c : error) out << (c == ',' || c == '\n' ? ';' : c);
        return std::move(out).str();
    }

    static const char* status_name(Status s) {
        switch (s) {
            case Status::Ok: return "ok";
            case Status::WarmingUp: return "warming-up";
            default: return "error";
        }
    }
};

class StreamEngine {
public:
    explicit StreamEngine(EngineConfig config) : config_(std::move(config)) {
        config_.validate();
        conns_.resize(config_.endpoints.size());
        started_at_ns_ = monotonic_now_ns();
    }

    // Sinks, installed before the first cycle. Called with an internal lock
    // held, one call at a time.
    std::function<void(const AnalysisReportRow&)> on_row;
    std::function<void(const logfmt::AnalyzedRow&)> on_record;
    std::function<void(const std::string&)> on_warning;

    /// One trigger cycle: discover, pull, dispatch, collect. Returns the
    /// number of partitions dispatched.
    std::size_t run_cycle() {
        const std::uint64_t seq = trigger_seq_++;
        discover_streams();
        auto batches = pull_batches(seq);
        dispatch_all(batches);
        ++cycles_;
        return batches.size();
    }

    /// Timed trigger loop. After request_stop() one final drain cycle runs so
    /// the tail of every stream is analyzed.
    void run() {
        auto next = std::chrono::steady_clock::now() + config_.trigger_interval;
        while (true) {
            {
                std::unique_lock lock(run_mutex_);
                stop_cv_.wait_until(lock, next, [this] { return stop_requested_; });
                if (stop_requested_) break;
            }
            run_cycle();
            next += config_.trigger_interval;
            auto now = std::chrono::steady_clock::now();
            if (next < now) next = now;  // skip missed triggers instead of bursting
        }
        run_cycle();  // drain
        finished_at_ns_ = monotonic_now_ns();
    }

    void request_stop() {
        {
            std::lock_guard lock(run_mutex_);
            stop_requested_ = true;
        }
        stop_cv_.notify_all();
    }

    std::uint64_t cycles() const { return cycles_; }

    nlohmann::json summary_json() const {
        std::lock_guard lock(collect_mutex_);
        nlohmann::json per_stream = nlohmann::json::object();
        for (const auto& [key, s] : stream_agg_) {
            nlohmann::json j{{"batches", s.batches},
                             {"records", s.records},
                             {"warming_up", s.warmups},
                             {"errors", s.errors},
                             {"last_step", s.last_step}};
            if (!s.latencies_ns.empty()) {
                j["latency_s"] = {
                    {"p50", logfmt::percentile(s.latencies_ns, 50) / 1e9},
                    {"p95", logfmt::percentile(s.latencies_ns, 95) / 1e9},
                    {"max", logfmt::percentile(s.latencies_ns, 100) / 1e9},
                };
            }
            per_stream[key] = std::move(j);
        }
        std::vector<double> all;
        for (const auto& [key, s] : stream_agg_)
            all.insert(all.end(), s.latencies_ns.begin(), s.latencies_ns.end());
        nlohmann::json out{{"cycles", cycles_.load()},
                           {"streams", stream_agg_.size()},
                           {"records_analyzed", records_analyzed_},
                           {"started_at_ns", started_at_ns_},
                           {"finished_at_ns", finished_at_ns_},
                           {"last_analyzed_at_ns", last_analyzed_at_ns_},
                           {"per_stream", std::move(per_stream)}};
        if (!all.empty()) {
            out["latency_s"] = {{"p50", logfmt::percentile(all, 50) / 1e9},
                                {"p95", logfmt::percentile(all, 95) / 1e9},
                                {"max", logfmt::percentile(all, 100) / 1e9}};
        }
        return out;
    }

private:
    struct StreamState {
        std::size_t endpoint_index = 0;
        std::uint64_t cursor = 0;  // last consumed step
        std::optional<dmd::SnapshotWindow> window;
    };

    struct StreamAgg {
        std::uint64_t batches = 0;
        std::uint64_t records = 0;
        std::uint64_t warmups = 0;
        std::uint64_t errors = 0;
        std::uint64_t last_step = 0;
        std::vector<double> latencies_ns;
    };

    net::FramedConn* ensure_conn(std::size_t i) {
        if (conns_[i]) return conns_[i].get();
        try {
            auto sock = net::Socket::connect(config_.endpoints[i], config_.connect_timeout);
            sock.set_send_timeout(config_.io_timeout);
            sock.set_recv_timeout(config_.io_timeout);
            conns_[i] = std::make_unique<net::FramedConn>(std::move(sock), config_.max_frame);
            return conns_[i].get();
        } catch (const Error& e) {
            warn("degraded cycle: endpoint " + config_.endpoints[i].str() +
                 " unreachable: " + e.what());
            return nullptr;
        }
    }

    void drop_conn(std::size_t i, const Error& e) {
        conns_[i].reset();
        warn("degraded cycle: endpoint " + config_.endpoints[i].str() + ": " + e.what());
    }

    void discover_streams() {
        for (std::size_t i = 0; i < config_.endpoints.size(); ++i) {
            auto* conn = ensure_conn(i);
            if (!conn) continue;
            try {
                conn->send(wire::ListStreams{});
                auto reply = conn->recv();
                if (!reply) throw IoError("endpoint closed");
                auto* list = std::get_if<wire::StreamList>(&*reply);
                if (!list) throw ProtocolError("expected STREAM_LIST");
                for (auto& key : list->keys)
                    streams_.try_emplace(key, StreamState{i, 0, std::nullopt});
            } catch (const Error& e) {
                drop_conn(i, e);
            }
        }
    }

    std::vector<MicroBatch> pull_batches(std::uint64_t seq) {
        std::vector<MicroBatch> batches;
        for (auto& [key, state] : streams_) {
            auto* conn = conns_[state.endpoint_index].get();
            if (!conn) continue;  // endpoint down this cycle
            MicroBatch batch{key, seq, {}};
            try {
                while (true) {
                    conn->send(wire::ReadSince{key, state.cursor, config_.max_records_per_pull});
                    auto reply = conn->recv();
                    if (!reply) throw IoError("endpoint closed");
                    auto* page = std::get_if<wire::RecordBatch>(&*reply);
                    if (!page) throw ProtocolError("expected RECORD_BATCH");
                    if (page->records.empty()) break;
                    for (auto& rec : page->records) {
                        state.cursor = rec.step;
                        batch.records.push_back(
                            {rec.step, rec.produced_at_ns, std::move(rec.values)});
                    }
                }
            } catch (const Error& e) {
                drop_conn(state.endpoint_index, e);
                continue;
            }
            if (!batch.records.empty()) batches.push_back(std::move(batch));
        }
        return batches;
    }

    void dispatch_all(std::vector<MicroBatch>& batches) {
        const std::size_t stride =
            config_.parallelism == 0 ? std::max<std::size_t>(batches.size(), 1)
                                     : config_.parallelism;
        for (std::size_t begin = 0; begin < batches.size(); begin += stride) {
            std::size_t end = std::min(begin + stride, batches.size());
            std::vector<std::thread> workers;
            workers.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i)
                workers.emplace_back([this, &batch = batches[i]] { dispatch_one(batch); });
            for (auto& w : workers) w.join();
        }
    }

    /// Exactly one dispatch per partition per cycle. The stream's window is
    /// owned by the scheduler and lent to this worker alone.
    void dispatch_one(MicroBatch& batch) {
        auto& state = streams_.at(batch.stream_key);
        AnalysisReportRow row;
        row.stream_key = batch.stream_key;
        row.trigger_seq = batch.trigger_seq;
        row.batch_records = batch.records.size();
        try {
            if (!state.window)
                state.window.emplace(batch.records.front().values.size(),
                                     config_.window_capacity);
            for (const auto& rec : batch.records) state.window->push(rec.step, rec.values);
            row.step_lo = state.window->first_step();
            row.step_hi = state.window->last_step();
            if (state.window->size() < 2) {
                row.status = AnalysisReportRow::Status::WarmingUp;
            } else if (config_.analyzer == AnalyzerKind::InProcess) {
                auto res = dmd::compute_dmd(*state.window, config_.svd_tol, config_.r_max);
                row.metric = res.stability_metric;
                row.rank = res.rank;
                row.eigenvalues = std::move(res.eigenvalues);
            } else {
                auto res = analyze_via_pipe(batch.stream_key, *state.window);
                row.step_lo = res.step_lo;
                row.step_hi = res.step_hi;
                row.metric = res.metric;
                row.rank = res.eigenvalues.size();
                row.eigenvalues = std::move(res.eigenvalues);
            }
        } catch (const Error& e) {
            row.status = AnalysisReportRow::Status::Error;
            row.error = e.what();
        }
        row.analyzed_at_ns = monotonic_now_ns();
        row.latency = batch_latency(batch, row.analyzed_at_ns);
        collect(batch, row);
    }

    pipe::Result analyze_via_pipe(const std::string& key, const dmd::SnapshotWindow& window) {
        auto request = pipe::encode_request(key, window);
        auto outcome = proc::run_pipe_command(config_.pipe_command, request,
                                              config_.pipe_timeout);
        if (outcome.exit_code != 0)
            throw AnalyzerError("analyzer exited with status " +
                                std::to_string(outcome.exit_code));
        auto eol = outcome.output.find('\n');
        auto line = eol == std::string::npos ? outcome.output : outcome.output.substr(0, eol);
        auto res = pipe::parse_result(line);
        if (res.stream_key != key)
            throw AnalyzerError("analyzer replied for stream '" + res.stream_key +
                                "', expected '" + key + "'");
        return res;
    }

    static LatencyStats batch_latency(const MicroBatch& batch, std::uint64_t analyzed_at_ns) {
        LatencyStats out;
        if (batch.records.empty()) return out;
        out.min_ns = UINT64_MAX;
        double sum = 0;
        for (const auto& rec : batch.records) {
            std::uint64_t lat =
                analyzed_at_ns >= rec.produced_at_ns ? analyzed_at_ns - rec.produced_at_ns : 0;
            out.min_ns = std::min(out.min_ns, lat);
            out.max_ns = std::max(out.max_ns, lat);
            sum += static_cast<double>(lat);
        }
        out.mean_ns = sum / static_cast<double>(batch.records.size());
        return out;
    }

    void collect(const MicroBatch& batch, const AnalysisReportRow& row) {
        std::lock_guard lock(collect_mutex_);
        auto& agg = stream_agg_[batch.stream_key];
        ++agg.batches;
        agg.records += batch.records.size();
        if (row.status == AnalysisReportRow::Status::WarmingUp) ++agg.warmups;
        if (row.status == AnalysisReportRow::Status::Error) ++agg.errors;
        agg.last_step = batch.records.back().step;
        records_analyzed_ += batch.records.size();
        last_analyzed_at_ns_ = std::max(last_analyzed_at_ns_, row.analyzed_at_ns);
        for (const auto& rec : batch.records) {
            std::uint64_t lat = row.analyzed_at_ns >= rec.produced_at_ns
                                    ? row.analyzed_at_ns - rec.produced_at_ns
                                    : 0;
            agg.latencies_ns.push_back(static_cast<double>(lat));
            if (on_record)
                on_record({batch.stream_key, rec.step, rec.produced_at_ns, row.analyzed_at_ns,
                           row.trigger_seq});
        }
        if (on_row) on_row(row);
    }

    void warn(const std::string& message) {
        std::lock_guard lock(collect_mutex_);
        if (on_warning) on_warning(message);
    }

    EngineConfig config_;
    std::vector<std::unique_ptr<net::FramedConn>> conns_;
    std::map<std::string, StreamState> streams_;  // owned by the scheduler

    std::atomic<std::uint64_t> trigger_seq_{0};
    std::atomic<std::uint64_t> cycles_{0};

    std::mutex run_mutex_;
    std::condition_variable stop_cv_;
    bool stop_requested_ = false;

    mutable std::mutex collect_mutex_;
    std::map<std::string, StreamAgg> stream_agg_;
    std::uint64_t records_analyzed_ = 0;
    std::uint64_t last_analyzed_at_ns_ = 0;
    std::uint64_t started_at_ns_ = 0;
    std::uint64_t finished_at_ns_ = 0;
};

}  // namespace fieldstream::engine
