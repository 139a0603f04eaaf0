#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fieldstream/core.hpp"
#include "fieldstream/net.hpp"
#include "fieldstream/store.hpp"
#include "fieldstream/wire.hpp"

namespace fieldstream::server {

struct ServerConfig {
    EndpointAddress bind{"127.0.0.1", kDefaultEndpointPort};
    std::size_t retention = 4096;
    std::size_t max_frame = wire::kDefaultMaxFrame;
    std::string stats_file;  // per-second CSV snapshots when nonempty
};

/// One endpoint: accepts broker connections, keeps per-stream ordered record
/// logs in memory, and serves ranged reads to the stream engine.
///
/// A connection that REGISTERs becomes the writer for that one stream; its
/// APPENDs get no per-record reply, only rejected appends are answered with
/// an error ACK. LIST_STREAMS and READ_SINCE are served on any connection.
/// FINALIZE is acknowledged with detail "finalized", which is what a broker
/// waits for when draining.
class EndpointServer {
public:
    explicit EndpointServer(ServerConfig config)
        : config_(std::move(config)), store_(config_.retention) {}

    ~EndpointServer() { stop(); }

    void start() {
        listener_ = net::Listener::bind(config_.bind);
        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
        if (!config_.stats_file.empty())
            stats_thread_ = std::thread([this] { stats_loop(); });
    }

    std::uint16_t port() const { return listener_.port(); }
    EndpointAddress address() const { return {config_.bind.host, port()}; }

    store::StreamStore& store() { return store_; }
    const store::StreamStore& store() const { return store_; }

    /// Stops accepting, waits up to `drain` for live connections to finish
    /// whatever their peers already sent, then force-closes stragglers.
    void stop(std::chrono::milliseconds drain = std::chrono::milliseconds(2000)) {
        if (!running_.exchange(false)) return;
        listener_.interrupt();
        listener_.close();
        if (accept_thread_.joinable()) accept_thread_.join();
        {
            std::unique_lock lock(conn_mutex_);
            conn_done_.wait_for(lock, drain, [this] { return all_done_locked(); });
            for (auto& c : conns_)
                if (!c->done) c->conn.socket().shutdown_both();
        }
        for (auto& c : conns_)
            if (c->thread.joinable()) c->thread.join();
        {
            std::lock_guard lock(conn_mutex_);
            conns_.clear();
        }
        stats_stop_ = true;
        if (stats_thread_.joinable()) stats_thread_.join();
    }

private:
    struct Connection {
        explicit Connection(net::Socket sock, std::size_t max_frame)
            : conn(std::move(sock), max_frame) {}
        net::FramedConn conn;
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void accept_loop() {
        while (running_) {
            auto sock = listener_.accept();
            if (!sock) break;
            auto c = std::make_unique<Connection>(std::move(*sock), config_.max_frame);
            Connection* raw = c.get();
            std::lock_guard lock(conn_mutex_);
            reap_done_locked();
            raw->thread = std::thread([this, raw] { handle_connection(raw); });
            conns_.push_back(std::move(c));
        }
    }

    void handle_connection(Connection* c) {
        std::string registered_key;
        try {
            while (auto msg = c->conn.recv()) {
                if (!dispatch(c, registered_key, *msg)) break;
            }
        } catch (const Error&) {
            // framing or socket error: drop the connection
        }
        {
            std::lock_guard lock(conn_mutex_);
            c->done = true;
        }
        conn_done_.notify_all();
    }

    /// Returns false when the connection should be closed.
    bool dispatch(Connection* c, std::string& registered_key, wire::Message& msg) {
        using namespace wire;
        if (auto* reg = std::get_if<Register>(&msg)) {
            if (!registered_key.empty()) {
                c->conn.send(Ack{1, "already registered"});
                return true;
            }
            try {
                std::string key = make_stream_key(reg->field_name, reg->rank);
                store_.register_stream(key, reg->element_count);
                registered_key = key;
                c->conn.send(Ack{0, "registered"});
            } catch (const Error& e) {
                c->conn.send(Ack{1, e.what()});
            }
            return true;
        }
        if (auto* append = std::get_if<Append>(&msg)) {
            if (registered_key.empty()) {
                c->conn.send(Ack{1, "unregistered"});
                return true;
            }
            try {
                store_.append(registered_key, append->step, monotonic_now_ns(),
                              std::move(append->values));
            } catch (const OutOfOrder&) {
                c->conn.send(Ack{1, "out-of-order"});
            } catch (const Error& e) {
                c->conn.send(Ack{1, e.what()});
            }
            return true;
        }
        if (std::get_if<Finalize>(&msg)) {
            c->conn.send(Ack{0, "finalized"});
            return true;
        }
        if (std::get_if<ListStreams>(&msg)) {
            c->conn.send(StreamList{store_.list_streams()});
            return true;
        }
        if (auto* read = std::get_if<ReadSince>(&msg)) {
            auto result = store_.read_since(read->stream_key, read->after_step,
                                            read->max_records, config_.max_frame - 64);
            RecordBatch batch;
            batch.records.reserve(result.records.size());
            for (auto& rec : result.records)
                batch.records.push_back({rec.step, rec.produced_at_ns, std::move(rec.values)});
            c->conn.send(batch);
            return true;
        }
        c->conn.send(wire::Ack{1, "unexpected message"});
        return false;
    }

    void stats_loop() {
        std::ofstream out(config_.stats_file, std::ios::app);
        out << "unix_ms,stream_key,records_total,bytes_total,records_per_sec,retained\n";
        std::unordered_map<std::string, std::uint64_t> last_counts;
        while (!stats_stop_) {
            std::this_thread::sleep_for(std::chrono::milliseconds(1000));
            auto now_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
            for (const auto& s : store_.stats()) {
                std::uint64_t prev = last_counts[s.key];
                out << now_ms << ',' << s.key << ',' << s.appended << ',' << s.bytes << ','
                    << (s.appended - prev) << ',' << s.retained << '\n';
                last_counts[s.key] = s.appended;
            }
            out.flush();
        }
    }

    bool all_done_locked() const {
        for (const auto& c : conns_)
            if (!c->done) return false;
        return true;
    }

    void reap_done_locked() {
        std::erase_if(conns_, [](const std::unique_ptr<Connection>& c) {
            if (!c->done) return false;
            if (c->thread.joinable()) c->thread.join();
            return true;
        });
    }

    ServerConfig config_;
    store::StreamStore store_;
    net::Listener listener_;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;

    std::mutex conn_mutex_;
    std::condition_variable conn_done_;
    std::vector<std::unique_ptr<Connection>> conns_;

    std::thread stats_thread_;
    std::atomic<bool> stats_stop_{false};
};

}  // namespace fieldstream::server
