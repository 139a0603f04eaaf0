#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fieldstream/core.hpp"

// CSV logs shared by the generator, the engine and the bench harness.
// Fields never contain commas, so the parsers are plain splitters.

namespace fieldstream::logfmt {

inline constexpr std::string_view kEmissionHeader = "stream_key,step,produced_at_ns";
inline constexpr std::string_view kAnalyzedHeader =
    "stream_key,step,produced_at_ns,analyzed_at_ns,trigger_seq";

/// One record handed to the pipeline by a generator rank.
struct EmissionRow {
    std::string stream_key;
    std::uint64_t step = 0;
    std::uint64_t produced_at_ns = 0;
};

/// One record consumed by the engine; produced_at_ns here is the endpoint's
/// receipt stamp carried on the wire.
struct AnalyzedRow {
    std::string stream_key;
    std::uint64_t step = 0;
    std::uint64_t produced_at_ns = 0;
    std::uint64_t analyzed_at_ns = 0;
    std::uint64_t trigger_seq = 0;
};

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline std::uint64_t to_u64(const std::string& s) {
    if (s.empty()) throw ParseError("empty integer field");
    std::uint64_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') throw ParseError("bad integer field: '" + s + "'");
        v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return v;
}

inline void write_emission_log(const std::string& path, const std::vector<EmissionRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << kEmissionHeader << '\n';
    for (const auto& r : rows)
        out << r.stream_key << ',' << r.step << ',' << r.produced_at_ns << '\n';
}

inline std::vector<EmissionRow> read_emission_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<EmissionRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 3) throw ParseError("bad emission log row: '" + line + "'");
        rows.push_back({f[0], to_u64(f[1]), to_u64(f[2])});
    }
    return rows;
}

inline std::vector<AnalyzedRow> read_analyzed_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::vector<AnalyzedRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 5) throw ParseError("bad analyzed log row: '" + line + "'");
        rows.push_back({f[0], to_u64(f[1]), to_u64(f[2]), to_u64(f[3]), to_u64(f[4])});
    }
    return rows;
}

/// Nearest-rank percentile; q in [0, 100]. The input need not be sorted.
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InvalidArgument("percentile of empty sample");
    std::sort(values.begin(), values.end());
    if (q <= 0) return values.front();
    if (q >= 100) return values.back();
    auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * values.size()));
    return values[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace fieldstream::logfmt
