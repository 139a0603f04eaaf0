#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fieldstream/core.hpp"
#include "fieldstream/net.hpp"
#include "fieldstream/wire.hpp"

// Simulation-side client: registers one stream with its group's endpoint and
// ships per-timestep field data through a bounded queue and a background
// sender, so a write never waits on the network round trip.

namespace fieldstream::broker {

enum class Backpressure { Block, DropNewest };

struct BrokerConfig {
    std::vector<EndpointAddress> endpoints;
    std::size_t queue_capacity = 64;  // records
    Backpressure backpressure = Backpressure::Block;
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds write_timeout{10000};
    std::size_t max_frame = wire::kDefaultMaxFrame;

    void validate() const {
        if (endpoints.empty()) throw InvalidArgument("broker config needs at least one endpoint");
        if (queue_capacity < 1) throw InvalidArgument("queue_capacity must be >= 1");
        if (connect_timeout.count() <= 0 || write_timeout.count() <= 0)
            throw InvalidArgument("timeouts must be positive");
    }
};

enum class WriteOutcome { Queued, Dropped };

struct WriteReceipt {
    WriteOutcome outcome = WriteOutcome::Queued;
    std::uint64_t produced_at_ns = 0;
};

struct BrokerStats {
    std::uint64_t records_queued = 0;  // writes admitted (sent + dropped + in flight)
    std::uint64_t records_sent = 0;
    std::uint64_t records_dropped = 0;
    std::uint64_t bytes_sent = 0;
    std::chrono::nanoseconds wall_time{0};
    bool drained = false;         // queue fully flushed at finalize
    bool finalize_acked = false;  // server acknowledged FINALIZE
    std::string error;            // empty on a clean shutdown

    bool ok() const { return error.empty(); }
    std::uint64_t in_flight() const {
        return records_queued - records_sent - records_dropped;
    }
};

/// One registered stream: owns the connection and the background sender.
/// Single-owner: one simulation thread calls write/finalize; distinct
/// contexts are fully independent.
class BrokerContext {
public:
    BrokerContext(BrokerConfig config, const std::string& field_name, std::uint32_t rank,
                  std::uint32_t world_size, std::uint32_t element_count)
        : config_(std::move(config)) {
        if (const char* env = std::getenv("BROKER_ENDPOINTS"); env && *env)
            config_.endpoints = parse_endpoint_list(env);
        config_.validate();
        descriptor_ = FieldDescriptor{field_name, rank, world_size, element_count};
        descriptor_.validate();
        // APPEND frame length is 13 + 8 * element_count
        if (13 + std::size_t{8} * element_count > config_.max_frame)
            throw InvalidArgument("element_count too large for frame cap");

        group_id_ = assign_group(rank, world_size,
                                 static_cast<std::int64_t>(config_.endpoints.size()));
        endpoint_ = config_.endpoints[group_id_];

        conn_ = std::make_unique<net::FramedConn>(
            net::Socket::connect(endpoint_, config_.connect_timeout), config_.max_frame);
        conn_->socket().set_send_timeout(config_.write_timeout);
        conn_->socket().set_recv_timeout(config_.connect_timeout);

        conn_->send(wire::Register{field_name, rank, group_id_, element_count});
        auto reply = conn_->recv();
        if (!reply) throw IoError("endpoint " + endpoint_.str() + " closed during registration");
        auto* ack = std::get_if<wire::Ack>(&*reply);
        if (!ack) throw ProtocolError("expected ACK to REGISTER");
        if (!ack->ok())
            throw Error("registration rejected by " + endpoint_.str() + ": " + ack->detail);

        conn_->socket().set_recv_timeout(config_.write_timeout);
        started_at_ = std::chrono::steady_clock::now();
        sender_ = std::thread([this] { sender_loop(); });
    }

    ~BrokerContext() {
        {
            std::lock_guard lock(mutex_);
            if (finalized_) return;
            abort_ = true;
        }
        not_empty_.notify_all();
        not_full_.notify_all();
        conn_->socket().shutdown_both();
        if (sender_.joinable()) sender_.join();
    }

    BrokerContext(const BrokerContext&) = delete;
    BrokerContext& operator=(const BrokerContext&) = delete;

    const FieldDescriptor& descriptor() const { return descriptor_; }
    const EndpointAddress& endpoint() const { return endpoint_; }
    std::uint32_t group_id() const { return group_id_; }
    std::string stream_key() const { return descriptor_.stream_key(); }

    std::uint64_t records_queued() const { return records_queued_; }
    std::uint64_t records_sent() const { return records_sent_; }
    std::uint64_t records_dropped() const { return records_dropped_; }

    std::size_t queue_depth() const {
        std::lock_guard lock(mutex_);
        return queue_.size();
    }

    /// Copies `data` into the send queue, stamped with the current monotonic
    /// time. Under Block a full queue makes the call wait for space; under
    /// DropNewest it returns Dropped. Steps must be strictly increasing; a
    /// dropped write still consumes its step.
    WriteReceipt write(std::uint64_t step, std::span<const double> data) {
        if (data.size() != descriptor_.element_count)
            throw InvalidArgument("write of " + std::to_string(data.size()) +
                                  " values to stream of element_count " +
                                  std::to_string(descriptor_.element_count));
        const std::uint64_t produced_at = monotonic_now_ns();

        std::unique_lock lock(mutex_);
        if (finalize_requested_ || finalized_)
            throw Error("write after finalize");
        if (has_last_step_ && step <= last_step_)
            throw OutOfOrder("step " + std::to_string(step) + " not after " +
                             std::to_string(last_step_));
        if (sender_failed_) throw BrokenPipe(sender_error_);

        if (queue_.size() >= config_.queue_capacity) {
            if (config_.backpressure == Backpressure::DropNewest) {
                ++records_queued_;
                ++records_dropped_;
                last_step_ = step;
                has_last_step_ = true;
                return {WriteOutcome::Dropped, produced_at};
            }
            not_full_.wait(lock, [this] {
                return queue_.size() < config_.queue_capacity || sender_failed_ || abort_;
            });
            if (sender_failed_) throw BrokenPipe(sender_error_);
            if (abort_) throw Error("context destroyed during write");
        }

        queue_.push_back({step, std::vector<double>(data.begin(), data.end())});
        ++records_queued_;
        last_step_ = step;
        has_last_step_ = true;
        lock.unlock();
        not_empty_.notify_one();
        return {WriteOutcome::Queued, produced_at};
    }

    /// Drains the queue (bounded by write_timeout), sends FINALIZE, waits for
    /// its ACK and closes. Errors are reported in the returned stats rather
    /// than thrown so partial counters survive; a second call returns the
    /// same stats.
    BrokerStats finalize() {
        std::unique_lock lock(mutex_);
        if (finalized_) return final_stats_;
        finalize_requested_ = true;
        not_empty_.notify_all();

        auto deadline = std::chrono::steady_clock::now() + config_.write_timeout;
        bool finished = done_cv_.wait_until(lock, deadline, [this] { return sender_done_; });
        std::string error = sender_error_;
        if (!finished) {
            error = "finalize: flush timed out with " + std::to_string(queue_.size()) +
                    " records queued";
            lock.unlock();
            conn_->socket().shutdown_both();
            lock.lock();
            done_cv_.wait(lock, [this] { return sender_done_; });
        }
        lock.unlock();
        if (sender_.joinable()) sender_.join();
        lock.lock();

        BrokerStats stats;
        stats.records_queued = records_queued_;
        stats.records_sent = records_sent_;
        stats.records_dropped = records_dropped_;
        stats.bytes_sent = bytes_sent_;
        stats.wall_time = std::chrono::steady_clock::now() - started_at_;
        stats.drained = queue_.empty();
        stats.finalize_acked = finalize_acked_;
        if (error.empty() && !finalize_acked_)
            error = "finalize: no acknowledgement from endpoint";
        stats.error = error;
        final_stats_ = stats;
        finalized_ = true;
        return stats;
    }

private:
    struct Pending {
        std::uint64_t step;
        std::vector<double> values;
    };

    void sender_loop() {
        try {
            while (true) {
                Pending item;
                {
                    std::unique_lock lock(mutex_);
                    not_empty_.wait(lock, [this] {
                        return !queue_.empty() || finalize_requested_ || abort_;
                    });
                    if (abort_) break;
                    if (queue_.empty()) {
                        // finalize requested and everything flushed
                        send_finalize_locked(lock);
                        break;
                    }
                    item = std::move(queue_.front());
                    queue_.pop_front();
                }
                not_full_.notify_one();
                auto frame = wire::encode_frame(wire::Append{item.step, std::move(item.values)},
                                                config_.max_frame);
                conn_->socket().send_all(frame);
                records_sent_ += 1;
                bytes_sent_ += frame.size();
            }
        } catch (const Error& e) {
            std::lock_guard lock(mutex_);
            sender_failed_ = true;
            sender_error_ = e.what();
        }
        {
            std::lock_guard lock(mutex_);
            sender_done_ = true;
        }
        done_cv_.notify_all();
        not_full_.notify_all();
    }

    /// Sends FINALIZE and consumes ACKs until the server's "finalized" reply.
    /// Called with the queue lock held; drops it for the network round trip.
    void send_finalize_locked(std::unique_lock<std::mutex>& lock) {
        lock.unlock();
        conn_->send(wire::Finalize{});
        while (true) {
            auto reply = conn_->recv();
            if (!reply) throw IoError("endpoint closed before finalize acknowledgement");
            if (auto* ack = std::get_if<wire::Ack>(&*reply)) {
                if (ack->ok() && ack->detail == "finalized") break;
                // a stale error ACK for an earlier rejected append
            }
        }
        lock.lock();
        finalize_acked_ = true;
    }

    BrokerConfig config_;
    FieldDescriptor descriptor_;
    EndpointAddress endpoint_;
    std::uint32_t group_id_ = 0;
    std::unique_ptr<net::FramedConn> conn_;
    std::chrono::steady_clock::time_point started_at_;

    mutable std::mutex mutex_;
    std::condition_variable not_empty_;
    std::condition_variable not_full_;
    std::condition_variable done_cv_;
    std::deque<Pending> queue_;
    bool finalize_requested_ = false;
    bool finalized_ = false;
    bool abort_ = false;
    bool sender_failed_ = false;
    bool sender_done_ = false;
    std::string sender_error_;
    bool finalize_acked_ = false;
    BrokerStats final_stats_;

    bool has_last_step_ = false;
    std::uint64_t last_step_ = 0;

    std::atomic<std::uint64_t> records_queued_{0};
    std::atomic<std::uint64_t> records_sent_{0};
    std::atomic<std::uint64_t> records_dropped_{0};
    std::atomic<std::uint64_t> bytes_sent_{0};

    std::thread sender_;
};

/// Mirrors the init/write/finalize shape familiar from simulation I/O APIs.
inline std::unique_ptr<BrokerContext> broker_init(const BrokerConfig& config,
                                                  const std::string& field_name,
                                                  std::uint32_t rank, std::uint32_t world_size,
                                                  std::uint32_t element_count) {
    return std::make_unique<BrokerContext>(config, field_name, rank, world_size, element_count);
}

inline WriteReceipt broker_write(BrokerContext& ctx, std::uint64_t step,
                                 std::span<const double> data) {
    return ctx.write(step, data);
}

inline BrokerStats broker_finalize(BrokerContext& ctx) { return ctx.finalize(); }

}  // namespace fieldstream::broker
