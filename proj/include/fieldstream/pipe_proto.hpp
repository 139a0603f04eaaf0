#pragma once

#include <charconv>
#include <complex>
#include <cstdint>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fieldstream/core.hpp"
#include "fieldstream/dmd.hpp"

// Text protocol between the stream engine and an external analyzer process.
//
// Request (engine -> analyzer stdin):
//     STREAM <stream_key> <n> <m>\n        n = values per snapshot, m = snapshots
//     <step> <v1> ... <vn>\n               m such lines, steps ascending
//     \n                                   blank line terminates the request
//
// Reply (analyzer stdout -> engine), a single line:
//     RESULT <stream_key> <step_lo> <step_hi> <metric> <r> <re1> <im1> ... <re_r> <im_r>
//
// Floats are formatted as shortest round-trip decimals, so a matrix survives
// the text round trip bit-exactly.

namespace fieldstream::pipe {

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view text) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw ParseError("bad float: '" + std::string(text) + "'");
    return v;
}

inline std::uint64_t parse_u64(std::string_view text) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw ParseError("bad integer: '" + std::string(text) + "'");
    return v;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

/// One analyzer request: the full snapshot window of one stream.
struct Request {
    std::string stream_key;
    std::vector<std::uint64_t> steps;
    std::vector<std::vector<double>> snapshots;  // one per step, each of length n

    std::size_t n() const { return snapshots.empty() ? 0 : snapshots.front().size(); }
    std::size_t m() const { return snapshots.size(); }
};

/// Parsed RESULT line.
struct Result {
    std::string stream_key;
    std::uint64_t step_lo = 0;
    std::uint64_t step_hi = 0;
    double metric = 0.0;
    std::vector<std::complex<double>> eigenvalues;
};

inline std::string encode_request(const std::string& stream_key,
                                  const dmd::SnapshotWindow& window) {
    std::string out = "STREAM " + stream_key + " " + std::to_string(window.dim()) + " " +
                      std::to_string(window.size()) + "\n";
    for (const auto& snap : window.snapshots()) {
        out += std::to_string(snap.step);
        for (double v : snap.values) {
            out += ' ';
            out += format_double(v);
        }
        out += '\n';
    }
    out += '\n';
    return out;
}

/// Reads one request from `in`. Returns nullopt on clean EOF before a header.
inline std::optional<Request> read_request(std::istream& in) {
    std::string line;
    // skip blank separators between requests
    do {
        if (!std::getline(in, line)) return std::nullopt;
    } while (line.empty());

    auto header = split_ws(line);
    if (header.size() != 4 || header[0] != "STREAM")
        throw AnalyzerError("bad request header: '" + line + "'");
    Request req;
    req.stream_key = std::string(header[1]);
    auto n = parse_u64(header[2]);
    auto m = parse_u64(header[3]);
    if (n < 1 || m < 1) throw AnalyzerError("bad request dimensions in '" + line + "'");

    for (std::uint64_t row = 0; row < m; ++row) {
        if (!std::getline(in, line)) throw AnalyzerError("truncated request body");
        auto fields = split_ws(line);
        if (fields.size() != n + 1)
            throw AnalyzerError("request row has " + std::to_string(fields.size()) +
                                " fields, expected " + std::to_string(n + 1));
        req.steps.push_back(parse_u64(fields[0]));
        std::vector<double> snap;
        snap.reserve(n);
        for (std::uint64_t i = 1; i <= n; ++i) snap.push_back(parse_double(fields[i]));
        req.snapshots.push_back(std::move(snap));
    }
    if (std::getline(in, line) && !line.empty())
        throw AnalyzerError("request not terminated by blank line");
    return req;
}

inline std::string encode_result(const std::string& stream_key, std::uint64_t step_lo,
                                 std::uint64_t step_hi, const dmd::DmdResult& res) {
    std::string out = "RESULT " + stream_key + " " + std::to_string(step_lo) + " " +
                      std::to_string(step_hi) + " " + format_double(res.stability_metric) +
                      " " + std::to_string(res.rank);
    for (const auto& ev : res.eigenvalues) {
        out += ' ';
        out += format_double(ev.real());
        out += ' ';
        out += format_double(ev.imag());
    }
    out += '\n';
    return out;
}

inline Result parse_result(std::string_view line) {
    auto fields = split_ws(line);
    if (fields.size() < 6 || fields[0] != "RESULT")
        throw AnalyzerError("bad analyzer reply: '" + std::string(line) + "'");
    Result res;
    res.stream_key = std::string(fields[1]);
    res.step_lo = parse_u64(fields[2]);
    res.step_hi = parse_u64(fields[3]);
    try {
        res.metric = parse_double(fields[4]);
    } catch (const ParseError& e) {
        throw AnalyzerError(std::string("bad analyzer reply: ") + e.what());
    }
    std::uint64_t r = 0;
    try {
        r = parse_u64(fields[5]);
    } catch (const ParseError& e) {
        throw AnalyzerError(std::string("bad analyzer reply: ") + e.what());
    }
    if (r < 1 || fields.size() != 6 + 2 * r)
        throw AnalyzerError("analyzer reply has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(6 + 2 * r));
    for (std::uint64_t i = 0; i < r; ++i) {
        try {
            res.eigenvalues.emplace_back(parse_double(fields[6 + 2 * i]),
                                         parse_double(fields[7 + 2 * i]));
        } catch (const ParseError& e) {
            throw AnalyzerError(std::string("bad analyzer reply: ") + e.what());
        }
    }
    return res;
}

}  // namespace fieldstream::pipe
