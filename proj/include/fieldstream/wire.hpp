#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fieldstream/core.hpp"

// Framed binary protocol spoken between broker clients, endpoint servers and
// the stream engine. Every frame is
//
//     length   u32 big-endian   byte count of type + body
//     msg_type u8
//     body     length-1 bytes
//
// Multi-byte header fields are big-endian; bulk f64 payloads are
// little-endian IEEE-754 so host-order arrays copy straight through on
// little-endian hardware. The full layout, with hex examples, is in
// docs/protocol.md.

namespace fieldstream::wire {

inline constexpr std::size_t kDefaultMaxFrame = 16u << 20;  // type+body cap, bytes
inline constexpr std::size_t kMaxString = 0xffff;

enum class MsgType : std::uint8_t {
    Register = 0x01,
    Append = 0x02,
    Finalize = 0x03,
    Ack = 0x10,
    ListStreams = 0x20,
    StreamList = 0x21,
    ReadSince = 0x22,
    RecordBatch = 0x23,
};

struct Register {
    std::string field_name;
    std::uint32_t rank = 0;
    std::uint32_t group_id = 0;
    std::uint32_t element_count = 0;
    bool operator==(const Register&) const = default;
};

struct Append {
    std::uint64_t step = 0;
    std::vector<double> values;
    bool operator==(const Append&) const = default;
};

struct Finalize {
    bool operator==(const Finalize&) const = default;
};

struct Ack {
    std::uint8_t status = 0;  // 0 = ok, 1 = error
    std::string detail;
    bool ok() const { return status == 0; }
    bool operator==(const Ack&) const = default;
};

struct ListStreams {
    bool operator==(const ListStreams&) const = default;
};

struct StreamList {
    std::vector<std::string> keys;
    bool operator==(const StreamList&) const = default;
};

struct ReadSince {
    std::string stream_key;
    std::uint64_t after_step = 0;
    std::uint32_t max_records = 0;
    bool operator==(const ReadSince&) const = default;
};

struct WireRecord {
    std::uint64_t step = 0;
    std::uint64_t produced_at_ns = 0;
    std::vector<double> values;
    bool operator==(const WireRecord&) const = default;
};

struct RecordBatch {
    std::vector<WireRecord> records;
    bool operator==(const RecordBatch&) const = default;
};

using Message = std::variant<Register, Append, Finalize, Ack, ListStreams, StreamList,
                             ReadSince, RecordBatch>;

namespace detail {

struct Writer {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16be(std::uint16_t v) {
        buf.push_back(static_cast<std::uint8_t>(v >> 8));
        buf.push_back(static_cast<std::uint8_t>(v));
    }
    void u32be(std::uint32_t v) {
        for (int shift = 24; shift >= 0; shift -= 8)
            buf.push_back(static_cast<std::uint8_t>(v >> shift));
    }
    void u64be(std::uint64_t v) {
        for (int shift = 56; shift >= 0; shift -= 8)
            buf.push_back(static_cast<std::uint8_t>(v >> shift));
    }
    void f64le(double v) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int shift = 0; shift <= 56; shift += 8)
            buf.push_back(static_cast<std::uint8_t>(bits >> shift));
    }
    void str(const std::string& s) {
        if (s.size() > kMaxString) throw InvalidArgument("string exceeds 65535 bytes");
        u16be(static_cast<std::uint16_t>(s.size()));
        buf.insert(buf.end(), s.begin(), s.end());
    }
};

struct Reader {
    std::span<const std::uint8_t> data;
    std::size_t pos = 0;

    std::size_t remaining() const { return data.size() - pos; }

    void need(std::size_t n) const {
        if (remaining() < n) throw ProtocolError("truncated message body");
    }
    std::uint8_t u8() {
        need(1);
        return data[pos++];
    }
    std::uint16_t u16be() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data[pos] << 8 | data[pos + 1]);
        pos += 2;
        return v;
    }
    std::uint32_t u32be() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | data[pos + i];
        pos += 4;
        return v;
    }
    std::uint64_t u64be() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = v << 8 | data[pos + i];
        pos += 8;
        return v;
    }
    double f64le() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) bits = bits << 8 | data[pos + i];
        pos += 8;
        return std::bit_cast<double>(bits);
    }
    std::string str() {
        auto len = u16be();
        need(len);
        std::string s(reinterpret_cast<const char*>(data.data() + pos), len);
        pos += len;
        return s;
    }
    std::vector<double> f64s(std::uint32_t count) {
        // Bound the count against the bytes actually present before allocating.
        if (remaining() / 8 < count) throw ProtocolError("declared count exceeds body");
        std::vector<double> out;
        out.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) out.push_back(f64le());
        return out;
    }
};

inline void encode_body(const Message& msg, Writer& w) {
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Register>) {
                w.u8(static_cast<std::uint8_t>(MsgType::Register));
                w.str(m.field_name);
                w.u32be(m.rank);
                w.u32be(m.group_id);
                w.u32be(m.element_count);
            } else if constexpr (std::is_same_v<T, Append>) {
                w.u8(static_cast<std::uint8_t>(MsgType::Append));
                w.u64be(m.step);
                w.u32be(static_cast<std::uint32_t>(m.values.size()));
                for (double v : m.values) w.f64le(v);
            } else if constexpr (std::is_same_v<T, Finalize>) {
                w.u8(static_cast<std::uint8_t>(MsgType::Finalize));
            } else if constexpr (std::is_same_v<T, Ack>) {
                w.u8(static_cast<std::uint8_t>(MsgType::Ack));
                w.u8(m.status);
                w.str(m.detail);
            } else if constexpr (std::is_same_v<T, ListStreams>) {
                w.u8(static_cast<std::uint8_t>(MsgType::ListStreams));
            } else if constexpr (std::is_same_v<T, StreamList>) {
                w.u8(static_cast<std::uint8_t>(MsgType::StreamList));
                w.u32be(static_cast<std::uint32_t>(m.keys.size()));
                for (const auto& k : m.keys) w.str(k);
            } else if constexpr (std::is_same_v<T, ReadSince>) {
                w.u8(static_cast<std::uint8_t>(MsgType::ReadSince));
                w.str(m.stream_key);
                w.u64be(m.after_step);
                w.u32be(m.max_records);
            } else if constexpr (std::is_same_v<T, RecordBatch>) {
                w.u8(static_cast<std::uint8_t>(MsgType::RecordBatch));
                w.u32be(static_cast<std::uint32_t>(m.records.size()));
                for (const auto& r : m.records) {
                    w.u64be(r.step);
                    w.u64be(r.produced_at_ns);
                    w.u32be(static_cast<std::uint32_t>(r.values.size()));
                    for (double v : r.values) w.f64le(v);
                }
            }
        },
        msg);
}

inline Message decode_body(std::span<const std::uint8_t> body) {
    Reader r{body};
    auto type = r.u8();
    Message msg;
    switch (static_cast<MsgType>(type)) {
        case MsgType::Register: {
            Register m;
            m.field_name = r.str();
            m.rank = r.u32be();
            m.group_id = r.u32be();
            m.element_count = r.u32be();
            msg = std::move(m);
            break;
        }
        case MsgType::Append: {
            Append m;
            m.step = r.u64be();
            m.values = r.f64s(r.u32be());
            msg = std::move(m);
            break;
        }
        case MsgType::Finalize:
            msg = Finalize{};
            break;
        case MsgType::Ack: {
            Ack m;
            m.status = r.u8();
            m.detail = r.str();
            msg = std::move(m);
            break;
        }
        case MsgType::ListStreams:
            msg = ListStreams{};
            break;
        case MsgType::StreamList: {
            StreamList m;
            auto count = r.u32be();
            // Each key costs at least its 2-byte length prefix.
            if (r.remaining() / 2 < count) throw ProtocolError("declared count exceeds body");
            m.keys.reserve(count);
            for (std::uint32_t i = 0; i < count; ++i) m.keys.push_back(r.str());
            msg = std::move(m);
            break;
        }
        case MsgType::ReadSince: {
            ReadSince m;
            m.stream_key = r.str();
            m.after_step = r.u64be();
            m.max_records = r.u32be();
            msg = std::move(m);
            break;
        }
        case MsgType::RecordBatch: {
            RecordBatch m;
            auto count = r.u32be();
            if (r.remaining() / 20 < count) throw ProtocolError("declared count exceeds body");
            m.records.reserve(count);
            for (std::uint32_t i = 0; i < count; ++i) {
                WireRecord rec;
                rec.step = r.u64be();
                rec.produced_at_ns = r.u64be();
                rec.values = r.f64s(r.u32be());
                m.records.push_back(std::move(rec));
            }
            msg = std::move(m);
            break;
        }
        default:
            throw ProtocolError("unknown msg_type 0x" + std::to_string(type));
    }
    if (r.remaining() != 0) throw ProtocolError("trailing bytes in message body");
    return msg;
}

}  // namespace detail

/// Encodes one message as a complete frame. Deterministic byte layout.
inline std::vector<std::uint8_t> encode_frame(const Message& msg,
                                              std::size_t max_frame = kDefaultMaxFrame) {
    detail::Writer w;
    w.u32be(0);  // length patched below
    detail::encode_body(msg, w);
    std::size_t length = w.buf.size() - 4;
    if (length > max_frame)
        throw FrameTooLarge("frame of " + std::to_string(length) + " bytes exceeds cap of " +
                            std::to_string(max_frame));
    w.buf[0] = static_cast<std::uint8_t>(length >> 24);
    w.buf[1] = static_cast<std::uint8_t>(length >> 16);
    w.buf[2] = static_cast<std::uint8_t>(length >> 8);
    w.buf[3] = static_cast<std::uint8_t>(length);
    return w.buf;
}

/// Attempts to decode one frame from the front of `buffer`. Returns the
/// message and the number of bytes consumed, or nullopt when the buffer does
/// not yet hold a complete frame.
inline std::optional<std::pair<Message, std::size_t>> decode_frame(
    std::span<const std::uint8_t> buffer, std::size_t max_frame = kDefaultMaxFrame) {
    if (buffer.size() < 4) return std::nullopt;
    std::uint32_t length = 0;
    for (int i = 0; i < 4; ++i) length = length << 8 | buffer[i];
    if (length < 1) throw ProtocolError("frame length must be >= 1");
    if (length > max_frame)
        throw ProtocolError("frame of " + std::to_string(length) + " bytes exceeds cap of " +
                            std::to_string(max_frame));
    if (buffer.size() < 4u + length) return std::nullopt;
    Message msg = detail::decode_body(buffer.subspan(4, length));
    return std::make_pair(std::move(msg), static_cast<std::size_t>(4 + length));
}

/// Incremental frame decoder for a byte stream. Single-owner: one instance
/// per connection, fed by whoever reads that connection's socket.
class FrameDecoder {
public:
    explicit FrameDecoder(std::size_t max_frame = kDefaultMaxFrame) : max_frame_(max_frame) {}

    void feed(std::span<const std::uint8_t> bytes) {
        buf_.insert(buf_.end(), bytes.begin(), bytes.end());
    }

    /// Pops the next complete message, or nullopt if more bytes are needed.
    std::optional<Message> next() {
        auto decoded = decode_frame(std::span(buf_).subspan(consumed_), max_frame_);
        if (!decoded) {
            compact();
            return std::nullopt;
        }
        consumed_ += decoded->second;
        return std::move(decoded->first);
    }

    std::size_t buffered() const { return buf_.size() - consumed_; }

private:
    void compact() {
        if (consumed_ == 0) return;
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(consumed_));
        consumed_ = 0;
    }

    std::size_t max_frame_;
    std::vector<std::uint8_t> buf_;
    std::size_t consumed_ = 0;
};

}  // namespace fieldstream::wire
