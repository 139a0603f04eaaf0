#pragma once

// Independent reference implementation of the frame codec, used as the
// round-trip oracle. Deliberately written as flat offset arithmetic with no
// code shared with the library's codec.

#include <bit>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fieldstream/wire.hpp"

namespace refcodec {

using fieldstream::wire::Ack;
using fieldstream::wire::Append;
using fieldstream::wire::Finalize;
using fieldstream::wire::ListStreams;
using fieldstream::wire::Message;
using fieldstream::wire::ReadSince;
using fieldstream::wire::RecordBatch;
using fieldstream::wire::Register;
using fieldstream::wire::StreamList;
using fieldstream::wire::WireRecord;

using Bytes = std::vector<std::uint8_t>;

inline void put8(Bytes& b, std::uint8_t v) { b.push_back(v); }
inline void put16(Bytes& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 8));
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
}
inline void put32(Bytes& b, std::uint32_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 24));
    b.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    b.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
}
inline void put64(Bytes& b, std::uint64_t v) {
    put32(b, static_cast<std::uint32_t>(v >> 32));
    put32(b, static_cast<std::uint32_t>(v & 0xffffffffULL));
}
inline void putf64(Bytes& b, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}
inline void putstr(Bytes& b, const std::string& s) {
    put16(b, static_cast<std::uint16_t>(s.size()));
    for (char c : s) b.push_back(static_cast<std::uint8_t>(c));
}

inline Bytes ref_encode(const Message& msg) {
    Bytes body;
    if (const auto* m = std::get_if<Register>(&msg)) {
        put8(body, 0x01);
        putstr(body, m->field_name);
        put32(body, m->rank);
        put32(body, m->group_id);
        put32(body, m->element_count);
    } else if (const auto* m = std::get_if<Append>(&msg)) {
        put8(body, 0x02);
        put64(body, m->step);
        put32(body, static_cast<std::uint32_t>(m->values.size()));
        for (double v : m->values) putf64(body, v);
    } else if (std::get_if<Finalize>(&msg)) {
        put8(body, 0x03);
    } else if (const auto* m = std::get_if<Ack>(&msg)) {
        put8(body, 0x10);
        put8(body, m->status);
        putstr(body, m->detail);
    } else if (std::get_if<ListStreams>(&msg)) {
        put8(body, 0x20);
    } else if (const auto* m = std::get_if<StreamList>(&msg)) {
        put8(body, 0x21);
        put32(body, static_cast<std::uint32_t>(m->keys.size()));
        for (const auto& k : m->keys) putstr(body, k);
    } else if (const auto* m = std::get_if<ReadSince>(&msg)) {
        put8(body, 0x22);
        putstr(body, m->stream_key);
        put64(body, m->after_step);
        put32(body, m->max_records);
    } else if (const auto* m = std::get_if<RecordBatch>(&msg)) {
        put8(body, 0x23);
        put32(body, static_cast<std::uint32_t>(m->records.size()));
        for (const auto& r : m->records) {
            put64(body, r.step);
            put64(body, r.produced_at_ns);
            put32(body, static_cast<std::uint32_t>(r.values.size()));
            for (double v : r.values) putf64(body, v);
        }
    } else {
        throw std::runtime_error("unhandled message type");
    }
    Bytes out;
    put32(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

struct RefCursor {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t off = 0;

    void need(std::size_t n) const {
        if (off + n > len) throw std::runtime_error("ref: truncated");
    }
    std::uint8_t g8() {
        need(1);
        return p[off++];
    }
    std::uint16_t g16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>((p[off] << 8) | p[off + 1]);
        off += 2;
        return v;
    }
    std::uint32_t g32() {
        need(4);
        std::uint32_t v = (std::uint32_t{p[off]} << 24) | (std::uint32_t{p[off + 1]} << 16) |
                          (std::uint32_t{p[off + 2]} << 8) | std::uint32_t{p[off + 3]};
        off += 4;
        return v;
    }
    std::uint64_t g64() {
        std::uint64_t hi = g32();
        return (hi << 32) | g32();
    }
    double gf64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= std::uint64_t{p[off + i]} << (8 * i);
        off += 8;
        return std::bit_cast<double>(bits);
    }
    std::string gstr() {
        auto n = g16();
        need(n);
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
};

/// Decodes one complete frame; throws if the buffer does not start with one.
inline std::pair<Message, std::size_t> ref_decode(const Bytes& bytes) {
    RefCursor c{bytes.data(), bytes.size()};
    auto frame_len = c.g32();
    if (bytes.size() < 4 + frame_len) throw std::runtime_error("ref: incomplete frame");
    auto type = c.g8();
    Message out;
    switch (type) {
        case 0x01: {
            Register m;
            m.field_name = c.gstr();
            m.rank = c.g32();
            m.group_id = c.g32();
            m.element_count = c.g32();
            out = m;
            break;
        }
        case 0x02: {
            Append m;
            m.step = c.g64();
            auto n = c.g32();
            for (std::uint32_t i = 0; i < n; ++i) m.values.push_back(c.gf64());
            out = m;
            break;
        }
        case 0x03:
            out = Finalize{};
            break;
        case 0x10: {
            Ack m;
            m.status = c.g8();
            m.detail = c.gstr();
            out = m;
            break;
        }
        case 0x20:
            out = ListStreams{};
            break;
        case 0x21: {
            StreamList m;
            auto n = c.g32();
            for (std::uint32_t i = 0; i < n; ++i) m.keys.push_back(c.gstr());
            out = m;
            break;
        }
        case 0x22: {
            ReadSince m;
            m.stream_key = c.gstr();
            m.after_step = c.g64();
            m.max_records = c.g32();
            out = m;
            break;
        }
        case 0x23: {
            RecordBatch m;
            auto n = c.g32();
            for (std::uint32_t i = 0; i < n; ++i) {
                WireRecord r;
                r.step = c.g64();
                r.produced_at_ns = c.g64();
                auto k = c.g32();
                for (std::uint32_t j = 0; j < k; ++j) r.values.push_back(c.gf64());
                m.records.push_back(std::move(r));
            }
            out = m;
            break;
        }
        default:
            throw std::runtime_error("ref: unknown type");
    }
    if (c.off != 4 + frame_len) throw std::runtime_error("ref: length mismatch");
    return {std::move(out), c.off};
}

// ---------------------------------------------------------------------------
// Bit-exact message comparison (NaN payloads compare by representation).
// ---------------------------------------------------------------------------

inline bool bits_equal(double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

inline bool values_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!bits_equal(a[i], b[i])) return false;
    return true;
}

inline bool messages_equal(const Message& a, const Message& b) {
    if (a.index() != b.index()) return false;
    if (const auto* x = std::get_if<Register>(&a)) return *x == std::get<Register>(b);
    if (const auto* x = std::get_if<Append>(&a)) {
        const auto& y = std::get<Append>(b);
        return x->step == y.step && values_equal(x->values, y.values);
    }
    if (std::get_if<Finalize>(&a)) return true;
    if (const auto* x = std::get_if<Ack>(&a)) return *x == std::get<Ack>(b);
    if (std::get_if<ListStreams>(&a)) return true;
    if (const auto* x = std::get_if<StreamList>(&a)) return *x == std::get<StreamList>(b);
    if (const auto* x = std::get_if<ReadSince>(&a)) return *x == std::get<ReadSince>(b);
    if (const auto* x = std::get_if<RecordBatch>(&a)) {
        const auto& y = std::get<RecordBatch>(b);
        if (x->records.size() != y.records.size()) return false;
        for (std::size_t i = 0; i < x->records.size(); ++i) {
            if (x->records[i].step != y.records[i].step) return false;
            if (x->records[i].produced_at_ns != y.records[i].produced_at_ns) return false;
            if (!values_equal(x->records[i].values, y.records[i].values)) return false;
        }
        return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Random message generation
// ---------------------------------------------------------------------------

inline double random_double(std::mt19937_64& rng) {
    // Mix ordinary magnitudes with raw bit patterns: NaNs, infinities,
    // negative zero and denormals all appear.
    switch (rng() % 4) {
        case 0:
            return std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
        case 1:
            return std::bit_cast<double>(rng());
        case 2: {
            static const double specials[] = {
                std::numeric_limits<double>::quiet_NaN(),
                std::numeric_limits<double>::infinity(),
                -std::numeric_limits<double>::infinity(),
                -0.0,
                std::numeric_limits<double>::denorm_min(),
            };
            return specials[rng() % 5];
        }
        default:
            return static_cast<double>(static_cast<std::int64_t>(rng()));
    }
}

inline std::string random_string(std::mt19937_64& rng, std::size_t max_len = 24) {
    static const char alphabet[] =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-./ ";
    std::string s;
    auto len = rng() % (max_len + 1);
    for (std::size_t i = 0; i < len; ++i) s += alphabet[rng() % (sizeof(alphabet) - 1)];
    return s;
}

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t max_len = 32) {
    std::vector<double> v(rng() % (max_len + 1));
    for (auto& x : v) x = random_double(rng);
    return v;
}

inline Message random_message(std::mt19937_64& rng) {
    switch (rng() % 8) {
        case 0:
            return Register{random_string(rng), static_cast<std::uint32_t>(rng()),
                            static_cast<std::uint32_t>(rng()),
                            static_cast<std::uint32_t>(rng())};
        case 1:
            return Append{rng(), random_values(rng)};
        case 2:
            return Finalize{};
        case 3:
            return Ack{static_cast<std::uint8_t>(rng() % 2), random_string(rng)};
        case 4:
            return ListStreams{};
        case 5: {
            StreamList m;
            auto n = rng() % 6;
            for (std::size_t i = 0; i < n; ++i) m.keys.push_back(random_string(rng));
            return m;
        }
        case 6:
            return ReadSince{random_string(rng), rng(), static_cast<std::uint32_t>(rng())};
        default: {
            RecordBatch m;
            auto n = rng() % 4;
            for (std::size_t i = 0; i < n; ++i)
                m.records.push_back({rng(), rng(), random_values(rng, 8)});
            return m;
        }
    }
}

}  // namespace refcodec
