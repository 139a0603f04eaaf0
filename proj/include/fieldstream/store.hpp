#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "fieldstream/core.hpp"

namespace fieldstream::store {

struct StoredRecord {
    std::uint64_t step = 0;
    std::uint64_t produced_at_ns = 0;
    std::vector<double> values;
};

struct ReadResult {
    std::vector<StoredRecord> records;
    bool found = false;  // false when the stream does not exist (not a hard error)
};

/// In-memory per-stream ordered record logs with bounded retention.
/// Safe for concurrent use from all connection handlers: the stream map takes
/// a shared_mutex, and each stream takes its own readers-writer lock so reads
/// may run concurrently with appends to other streams.
class StreamStore {
public:
    explicit StreamStore(std::size_t retention = 4096) : retention_(retention) {
        if (retention_ < 1) throw InvalidArgument("retention must be >= 1");
    }

    /// Idempotent for matching element_count; a conflicting re-registration
    /// is rejected.
    void register_stream(const std::string& key, std::uint32_t element_count) {
        if (element_count < 1) throw InvalidArgument("element_count must be >= 1");
        parse_stream_key(key);  // reject malformed keys at the boundary
        std::unique_lock map_lock(map_mutex_);
        auto it = streams_.find(key);
        if (it == streams_.end()) {
            auto log = std::make_unique<StreamLog>();
            log->element_count = element_count;
            streams_.emplace(key, std::move(log));
            return;
        }
        std::unique_lock lock(it->second->mutex);
        if (it->second->element_count != element_count)
            throw InvalidArgument("stream '" + key + "' already registered with element_count " +
                                  std::to_string(it->second->element_count));
    }

    void append(const std::string& key, std::uint64_t step, std::uint64_t produced_at_ns,
                std::vector<double> values) {
        auto* log = find(key);
        if (!log) throw NotFound("unregistered stream '" + key + "'");
        std::unique_lock lock(log->mutex);
        if (values.size() != log->element_count)
            throw InvalidArgument("append of " + std::to_string(values.size()) +
                                  " values to stream '" + key + "' registered with " +
                                  std::to_string(log->element_count));
        if (log->has_last && step <= log->last_step)
            throw OutOfOrder("out-of-order step " + std::to_string(step) + " for stream '" +
                             key + "' (last " + std::to_string(log->last_step) + ")");
        log->bytes_total += values.size() * sizeof(double);
        log->records.push_back({step, produced_at_ns, std::move(values)});
        log->last_step = step;
        log->has_last = true;
        ++log->appended_total;
        while (log->records.size() > retention_) {
            log->records.pop_front();
            ++log->evicted_total;
        }
    }

    /// Records with step > after_step, ascending, at most max_records and at
    /// most max_bytes of payload (always at least one record when available).
    ReadResult read_since(const std::string& key, std::uint64_t after_step,
                          std::uint32_t max_records,
                          std::size_t max_bytes = SIZE_MAX) const {
        auto* log = find(key);
        if (!log) return {{}, false};
        std::shared_lock lock(log->mutex);
        ReadResult out;
        out.found = true;
        auto it = std::upper_bound(log->records.begin(), log->records.end(), after_step,
                                   [](std::uint64_t s, const StoredRecord& r) { return s < r.step; });
        std::size_t bytes = 0;
        for (; it != log->records.end() && out.records.size() < max_records; ++it) {
            bytes += it->values.size() * sizeof(double) + 24;
            if (!out.records.empty() && bytes > max_bytes) break;
            out.records.push_back(*it);
        }
        return out;
    }

    /// Removes all records with step <= up_to_step; returns the evicted count.
    std::size_t trim(const std::string& key, std::uint64_t up_to_step) {
        auto* log = find(key);
        if (!log) throw NotFound("unknown stream '" + key + "'");
        std::unique_lock lock(log->mutex);
        std::size_t evicted = 0;
        while (!log->records.empty() && log->records.front().step <= up_to_step) {
            log->records.pop_front();
            ++evicted;
        }
        log->evicted_total += evicted;
        return evicted;
    }

    std::vector<std::string> list_streams() const {
        std::shared_lock map_lock(map_mutex_);
        std::vector<std::string> keys;
        keys.reserve(streams_.size());
        for (const auto& [key, log] : streams_) keys.push_back(key);
        return keys;  // std::map keeps them sorted
    }

    std::uint32_t element_count(const std::string& key) const {
        auto* log = find(key);
        if (!log) throw NotFound("unknown stream '" + key + "'");
        std::shared_lock lock(log->mutex);
        return log->element_count;
    }

    struct StreamStats {
        std::string key;
        std::uint64_t appended = 0;
        std::uint64_t evicted = 0;
        std::uint64_t bytes = 0;
        std::size_t retained = 0;
        std::uint64_t last_step = 0;
    };

    std::vector<StreamStats> stats() const {
        std::shared_lock map_lock(map_mutex_);
        std::vector<StreamStats> out;
        out.reserve(streams_.size());
        for (const auto& [key, log] : streams_) {
            std::shared_lock lock(log->mutex);
            out.push_back({key, log->appended_total, log->evicted_total, log->bytes_total,
                           log->records.size(), log->last_step});
        }
        return out;
    }

    std::size_t retention() const { return retention_; }

private:
    struct StreamLog {
        mutable std::shared_mutex mutex;
        std::deque<StoredRecord> records;
        std::uint32_t element_count = 0;
        bool has_last = false;
        std::uint64_t last_step = 0;
        std::uint64_t appended_total = 0;
        std::uint64_t evicted_total = 0;
        std::uint64_t bytes_total = 0;
    };

    StreamLog* find(const std::string& key) const {
        std::shared_lock map_lock(map_mutex_);
        auto it = streams_.find(key);
        return it == streams_.end() ? nullptr : it->second.get();
    }

    std::size_t retention_;
    mutable std::shared_mutex map_mutex_;
    std::map<std::string, std::unique_ptr<StreamLog>> streams_;
};

}  // namespace fieldstream::store
