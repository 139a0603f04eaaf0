#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fieldstream {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class of every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };

/// Malformed, unknown or oversized data on the wire.
struct ProtocolError : Error { using Error::Error; };
struct FrameTooLarge : ProtocolError { using ProtocolError::ProtocolError; };

/// Socket-level failure (connect, bind, send, recv).
struct IoError : Error { using Error::Error; };
struct BrokenPipe : IoError { using IoError::IoError; };

/// Append whose step does not exceed the last accepted step of its stream.
struct OutOfOrder : InvalidArgument { using InvalidArgument::InvalidArgument; };
struct NotFound : Error { using Error::Error; };

struct InsufficientSnapshots : Error { using Error::Error; };
struct DegenerateWindow : Error { using Error::Error; };

/// External analyzer process failed or produced an unusable reply.
struct AnalyzerError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Clock
// ---------------------------------------------------------------------------

/// Monotonic timestamp in nanoseconds. On Linux this is CLOCK_MONOTONIC and
/// is comparable across processes on the same host, which is what the
/// latency accounting relies on.
inline std::uint64_t monotonic_now_ns() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

// ---------------------------------------------------------------------------
// Endpoint addresses
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kDefaultEndpointPort = 6379;

struct EndpointAddress {
    std::string host;
    std::uint16_t port = kDefaultEndpointPort;

    bool operator==(const EndpointAddress&) const = default;

    std::string str() const { return host + ":" + std::to_string(port); }

    /// Parses "host" or "host:port". Hostnames and IPv4 literals only.
    static EndpointAddress parse(std::string_view text) {
        if (text.empty()) throw ParseError("empty endpoint address");
        EndpointAddress ep;
        auto colon = text.rfind(':');
        if (colon == std::string_view::npos) {
            ep.host = std::string(text);
            return ep;
        }
        ep.host = std::string(text.substr(0, colon));
        auto port_str = text.substr(colon + 1);
        if (ep.host.empty() || port_str.empty())
            throw ParseError("bad endpoint address: '" + std::string(text) + "'");
        std::uint64_t port = 0;
        for (char c : port_str) {
            if (c < '0' || c > '9')
                throw ParseError("bad port in endpoint address: '" + std::string(text) + "'");
            port = port * 10 + static_cast<std::uint64_t>(c - '0');
            if (port > 65535)
                throw ParseError("port out of range in endpoint address: '" + std::string(text) + "'");
        }
        if (port < 1) throw ParseError("port out of range in endpoint address: '" + std::string(text) + "'");
        ep.port = static_cast<std::uint16_t>(port);
        return ep;
    }
};

/// Parses a comma-separated "host:port,host:port,..." list.
inline std::vector<EndpointAddress> parse_endpoint_list(std::string_view text) {
    std::vector<EndpointAddress> out;
    while (!text.empty()) {
        auto comma = text.find(',');
        auto item = comma == std::string_view::npos ? text : text.substr(0, comma);
        out.push_back(EndpointAddress::parse(item));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    if (out.empty()) throw ParseError("empty endpoint list");
    return out;
}

// ---------------------------------------------------------------------------
// Stream naming
// ---------------------------------------------------------------------------

/// Field names become the prefix of stream keys and flow through the text
/// protocols (CSV logs, pipe requests), so beyond the ':' separator they must
/// not contain whitespace, commas or control characters.
inline bool valid_field_name(std::string_view name) {
    if (name.empty()) return false;
    for (unsigned char c : name) {
        if (c == ':' || c == ',' || c <= 0x20 || c == 0x7f) return false;
    }
    return true;
}

/// Builds the "field_name:rank" key naming one process's stream of one field.
inline std::string make_stream_key(std::string_view field_name, std::uint32_t rank) {
    if (!valid_field_name(field_name))
        throw InvalidArgument("invalid field name: '" + std::string(field_name) + "'");
    return std::string(field_name) + ":" + std::to_string(rank);
}

/// Inverse of make_stream_key. Accepts only canonical keys: exactly one ':',
/// a valid field name, and a decimal rank without leading zeros.
inline std::pair<std::string, std::uint32_t> parse_stream_key(std::string_view key) {
    auto first = key.find(':');
    if (first == std::string_view::npos || key.rfind(':') != first)
        throw ParseError("malformed stream key: '" + std::string(key) + "'");
    auto name = key.substr(0, first);
    auto rank_str = key.substr(first + 1);
    if (!valid_field_name(name))
        throw ParseError("malformed stream key: '" + std::string(key) + "'");
    if (rank_str.empty() || (rank_str.size() > 1 && rank_str[0] == '0'))
        throw ParseError("malformed stream key: '" + std::string(key) + "'");
    std::uint64_t rank = 0;
    for (char c : rank_str) {
        if (c < '0' || c > '9')
            throw ParseError("malformed stream key: '" + std::string(key) + "'");
        rank = rank * 10 + static_cast<std::uint64_t>(c - '0');
        if (rank > std::numeric_limits<std::uint32_t>::max())
            throw ParseError("rank out of range in stream key: '" + std::string(key) + "'");
    }
    return {std::string(name), static_cast<std::uint32_t>(rank)};
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Identity of one stream: which field, produced by which process, and how
/// many doubles each snapshot carries.
struct FieldDescriptor {
    std::string field_name;
    std::uint32_t rank = 0;
    std::uint32_t world_size = 1;
    std::uint32_t element_count = 1;

    void validate() const {
        if (!valid_field_name(field_name))
            throw InvalidArgument("invalid field name: '" + field_name + "'");
        if (world_size < 1) throw InvalidArgument("world_size must be >= 1");
        if (rank >= world_size) throw InvalidArgument("rank must be < world_size");
        if (element_count < 1) throw InvalidArgument("element_count must be >= 1");
    }

    std::string stream_key() const { return make_stream_key(field_name, rank); }
};

/// One timestep of one process's field data, plus the provenance timestamp
/// used for latency accounting.
struct StreamRecord {
    std::string stream_key;
    std::uint64_t step = 0;
    std::uint64_t produced_at_ns = 0;
    std::vector<double> payload;
};

// ---------------------------------------------------------------------------
// Process groups
// ---------------------------------------------------------------------------

/// Maps a rank to its group: floor(rank * num_endpoints / world_size).
/// Groups are contiguous rank blocks whose sizes differ by at most one, so
/// spatially adjacent regions land on the same endpoint.
inline std::uint32_t assign_group(std::int64_t rank, std::int64_t world_size,
                                  std::int64_t num_endpoints) {
    if (world_size < 1) throw InvalidArgument("world_size must be >= 1");
    if (rank < 0 || rank >= world_size)
        throw InvalidArgument("rank " + std::to_string(rank) + " out of range for world_size " +
                              std::to_string(world_size));
    if (num_endpoints < 1 || num_endpoints > world_size)
        throw InvalidArgument("num_endpoints must be in [1, world_size]");
    return static_cast<std::uint32_t>(
        static_cast<std::uint64_t>(rank) * static_cast<std::uint64_t>(num_endpoints) /
        static_cast<std::uint64_t>(world_size));
}

/// Deterministic rank -> endpoint assignment for a fixed world size.
struct GroupMap {
    std::uint32_t world_size = 1;
    std::vector<EndpointAddress> endpoints;

    GroupMap(std::uint32_t world, std::vector<EndpointAddress> eps)
        : world_size(world), endpoints(std::move(eps)) {
        if (world_size < 1) throw InvalidArgument("world_size must be >= 1");
        if (endpoints.empty() || endpoints.size() > world_size)
            throw InvalidArgument("endpoint count must be in [1, world_size]");
    }

    std::uint32_t group_count() const { return static_cast<std::uint32_t>(endpoints.size()); }

    std::uint32_t group_of(std::uint32_t rank) const {
        return assign_group(rank, world_size, static_cast<std::int64_t>(endpoints.size()));
    }

    const EndpointAddress& endpoint_for(std::uint32_t rank) const {
        return endpoints[group_of(rank)];
    }
};

}  // namespace fieldstream
