#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fieldstream/broker.hpp"
#include "fieldstream/core.hpp"
#include "fieldstream/logfmt.hpp"

// Stand-in for the MPI simulation: P isolated workers advance a field at a
// configured cadence and emit every k-th step via broker, per-emission files,
// or not at all.

namespace fieldstream::sim {

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

/// One explicit step of x <- A x.
inline std::vector<double> step_linear(std::span<const double> state,
                                       const Eigen::MatrixXd& A) {
    if (A.cols() != static_cast<Eigen::Index>(state.size()) || A.rows() != A.cols())
        throw InvalidArgument("matrix/state dimension mismatch");
    Eigen::Map<const Eigen::VectorXd> x(state.data(), static_cast<Eigen::Index>(state.size()));
    Eigen::VectorXd next = A * x;
    return std::vector<double>(next.data(), next.data() + next.size());
}

/// One explicit step of 1-D diffusion with zero Dirichlet boundaries:
/// u_i <- u_i + mu (u_{i+1} - 2 u_i + u_{i-1}), stable for mu <= 1/2.
inline std::vector<double> step_diffusion(std::span<const double> state, double mu) {
    if (!(mu > 0.0) || mu > 0.5) throw InvalidArgument("diffusion needs 0 < mu <= 0.5");
    const std::size_t n = state.size();
    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) {
        double left = i > 0 ? state[i - 1] : 0.0;
        double right = i + 1 < n ? state[i + 1] : 0.0;
        next[i] = state[i] + mu * (right - 2.0 * state[i] + left);
    }
    return next;
}

/// The dense update matrix of step_diffusion, I + mu * tridiag(1, -2, 1).
inline Eigen::MatrixXd diffusion_matrix(std::size_t n, double mu) {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                              static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0 - 2.0 * mu;
        if (i > 0) t(i, i - 1) = mu;
        if (i + 1 < n) t(i, i + 1) = mu;
    }
    return t;
}

/// Grammar: "linear:diag:0.9,0.5" | "linear:rot:0.7853981633974483"
///        | "diffusion:3,0.1" | "random:256,42".
struct DynamicsSpec {
    enum class Kind { LinearDiag, LinearRotation, Diffusion, Random };

    Kind kind = Kind::Random;
    std::vector<double> diag;   // LinearDiag
    double theta = 0.0;         // LinearRotation
    std::uint32_t n = 1;        // Diffusion interior points / Random element count
    double mu = 0.1;            // Diffusion
    std::uint64_t seed = 1;     // Random

    std::uint32_t element_count() const {
        switch (kind) {
            case Kind::LinearDiag: return static_cast<std::uint32_t>(diag.size());
            case Kind::LinearRotation: return 2;
            default: return n;
        }
    }

    void validate() const {
        switch (kind) {
            case Kind::LinearDiag:
                if (diag.empty()) throw InvalidArgument("linear:diag needs at least one entry");
                break;
            case Kind::LinearRotation:
                break;
            case Kind::Diffusion:
                if (n < 1) throw InvalidArgument("diffusion needs n >= 1");
                if (!(mu > 0.0) || mu > 0.5)
                    throw InvalidArgument("diffusion needs 0 < mu <= 0.5");
                break;
            case Kind::Random:
                if (n < 1) throw InvalidArgument("random needs element count >= 1");
                break;
        }
    }

    static DynamicsSpec parse(std::string_view text) {
        DynamicsSpec spec;
        auto fail = [&] { throw ParseError("bad dynamics spec: '" + std::string(text) + "'"); };
        auto colon = text.find(':');
        if (colon == std::string_view::npos) fail();
        auto head = text.substr(0, colon);
        auto rest = text.substr(colon + 1);
        try {
            if (head == "linear") {
                auto colon2 = rest.find(':');
                if (colon2 == std::string_view::npos) fail();
                auto sub = rest.substr(0, colon2);
                auto args = rest.substr(colon2 + 1);
                if (sub == "diag") {
                    spec.kind = Kind::LinearDiag;
                    for (auto part : split(args, ','))
                        spec.diag.push_back(std::stod(std::string(part)));
                } else if (sub == "rot") {
                    spec.kind = Kind::LinearRotation;
                    spec.theta = std::stod(std::string(args));
                } else {
                    fail();
                }
            } else if (head == "diffusion") {
                auto parts = split(rest, ',');
                if (parts.size() != 2) fail();
                spec.kind = Kind::Diffusion;
                spec.n = static_cast<std::uint32_t>(std::stoul(std::string(parts[0])));
                spec.mu = std::stod(std::string(parts[1]));
            } else if (head == "random") {
                auto parts = split(rest, ',');
                if (parts.size() != 2) fail();
                spec.kind = Kind::Random;
                spec.n = static_cast<std::uint32_t>(std::stoul(std::string(parts[0])));
                spec.seed = std::stoull(std::string(parts[1]));
            } else {
                fail();
            }
        } catch (const std::logic_error&) {
            fail();
        }
        spec.validate();
        return spec;
    }

    std::string str() const {
        switch (kind) {
            case Kind::LinearDiag: {
                std::string out = "linear:diag:";
                for (std::size_t i = 0; i < diag.size(); ++i) {
                    if (i) out += ',';
                    out += std::to_string(diag[i]);
                }
                return out;
            }
            case Kind::LinearRotation:
                return "linear:rot:" + std::to_string(theta);
            case Kind::Diffusion:
                return "diffusion:" + std::to_string(n) + "," + std::to_string(mu);
            default:
                return "random:" + std::to_string(n) + "," + std::to_string(seed);
        }
    }

private:
    static std::vector<std::string_view> split(std::string_view text, char sep) {
        std::vector<std::string_view> out;
        while (true) {
            auto pos = text.find(sep);
            if (pos == std::string_view::npos) {
                out.push_back(text);
                return out;
            }
            out.push_back(text.substr(0, pos));
            text.remove_prefix(pos + 1);
        }
    }
};

/// Per-rank dynamics state. Each rank owns an independent instance, so no
/// halo exchange is needed and per-stream analysis semantics stay intact.
class DynamicsInstance {
public:
    DynamicsInstance(const DynamicsSpec& spec, std::uint32_t rank, std::uint64_t base_seed)
        : spec_(spec), rng_(mix_seed(spec.kind == DynamicsSpec::Kind::Random
                                         ? spec.seed
                                         : base_seed,
                                     rank)) {
        spec_.validate();
        switch (spec_.kind) {
            case DynamicsSpec::Kind::LinearDiag: {
                auto d = static_cast<Eigen::Index>(spec_.diag.size());
                matrix_ = Eigen::MatrixXd::Zero(d, d);
                for (Eigen::Index i = 0; i < d; ++i) matrix_(i, i) = spec_.diag[i];
                state_.assign(spec_.diag.size(), 1.0);
                break;
            }
            case DynamicsSpec::Kind::LinearRotation: {
                matrix_ = Eigen::MatrixXd(2, 2);
                matrix_ << std::cos(spec_.theta), -std::sin(spec_.theta),
                           std::sin(spec_.theta), std::cos(spec_.theta);
                state_ = {1.0, 0.0};
                break;
            }
            case DynamicsSpec::Kind::Diffusion: {
                state_.assign(spec_.n, 0.0);
                state_[0] = 1.0;  // impulse at the first interior point excites all modes
                break;
            }
            case DynamicsSpec::Kind::Random: {
                state_.resize(spec_.n);
                fill_random();
                break;
            }
        }
    }

    const std::vector<double>& state() const { return state_; }

    void advance() {
        switch (spec_.kind) {
            case DynamicsSpec::Kind::LinearDiag:
            case DynamicsSpec::Kind::LinearRotation:
                state_ = step_linear(state_, matrix_);
                break;
            case DynamicsSpec::Kind::Diffusion:
                state_ = step_diffusion(state_, spec_.mu);
                break;
            case DynamicsSpec::Kind::Random:
                fill_random();
                break;
        }
    }

private:
    static std::uint64_t mix_seed(std::uint64_t seed, std::uint32_t rank) {
        return seed + 0x9e3779b97f4a7c15ull * (rank + 1);
    }

    void fill_random() {
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (auto& v : state_) v = dist(rng_);
    }

    DynamicsSpec spec_;
    std::mt19937_64 rng_;
    Eigen::MatrixXd matrix_;
    std::vector<double> state_;
};

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

enum class IoMode { Broker, File, Disabled };

inline std::string io_mode_name(IoMode m) {
    switch (m) {
        case IoMode::Broker: return "broker";
        case IoMode::File: return "file";
        default: return "off";
    }
}

struct SimConfig {
    std::uint32_t world_size = 1;
    DynamicsSpec dynamics;
    std::uint64_t total_steps = 2000;
    std::uint32_t write_interval = 5;
    std::chrono::milliseconds step_compute_delay{0};
    IoMode io = IoMode::Disabled;
    std::vector<EndpointAddress> endpoints;  // Broker mode
    std::string file_dir;                    // File mode
    std::string field_name = "pressure";
    std::uint64_t seed = 1;

    std::size_t queue_capacity = 64;
    broker::Backpressure backpressure = broker::Backpressure::Block;
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds write_timeout{10000};

    void validate() const {
        if (world_size < 1) throw InvalidArgument("world_size must be >= 1");
        if (total_steps < 1) throw InvalidArgument("total_steps must be >= 1");
        if (write_interval < 1) throw InvalidArgument("write_interval must be >= 1");
        dynamics.validate();
        if (!valid_field_name(field_name))
            throw InvalidArgument("invalid field name: '" + field_name + "'");
        if (io == IoMode::Broker) {
            if (endpoints.empty()) throw InvalidArgument("broker mode needs endpoints");
            if (endpoints.size() > world_size)
                throw InvalidArgument("more endpoints than ranks");
        }
        if (io == IoMode::File && file_dir.empty())
            throw InvalidArgument("file mode needs a directory");
    }
};

struct RankStats {
    std::uint32_t rank = 0;
    std::uint64_t records_emitted = 0;  // queued into the pipeline / written
    std::uint64_t records_dropped = 0;
    std::uint64_t bytes_emitted = 0;  // payload bytes
    std::uint64_t elapsed_ns = 0;
    bool failed = false;
    std::string error;
};

struct GeneratorStats {
    std::vector<RankStats> ranks;
    std::uint64_t started_at_ns = 0;
    std::uint64_t finished_at_ns = 0;

    std::uint64_t total_records() const {
        std::uint64_t n = 0;
        for (const auto& r : ranks) n += r.records_emitted;
        return n;
    }
    std::uint64_t total_dropped() const {
        std::uint64_t n = 0;
        for (const auto& r : ranks) n += r.records_dropped;
        return n;
    }
    std::uint64_t total_bytes() const {
        std::uint64_t n = 0;
        for (const auto& r : ranks) n += r.bytes_emitted;
        return n;
    }
    bool any_failed() const {
        for (const auto& r : ranks)
            if (r.failed) return true;
        return false;
    }
    double elapsed_s() const {
        return static_cast<double>(finished_at_ns - started_at_ns) / 1e9;
    }

    nlohmann::json to_json() const {
        nlohmann::json per_rank = nlohmann::json::array();
        for (const auto& r : ranks) {
            per_rank.push_back({{"rank", r.rank},
                                {"records", r.records_emitted},
                                {"dropped", r.records_dropped},
                                {"bytes", r.bytes_emitted},
                                {"elapsed_s", static_cast<double>(r.elapsed_ns) / 1e9},
                                {"failed", r.failed},
                                {"error", r.error}});
        }
        return {{"started_at_ns", started_at_ns},
                {"finished_at_ns", finished_at_ns},
                {"elapsed_s", elapsed_s()},
                {"records", total_records()},
                {"dropped", total_dropped()},
                {"bytes", total_bytes()},
                {"any_failed", any_failed()},
                {"per_rank", std::move(per_rank)}};
    }
};

namespace detail {

/// Raw little-endian doubles, fsynced per emission: the durable file-based
/// baseline the broker path is compared against.
inline std::uint64_t write_emission_file(const std::string& path,
                                         std::span<const double> values) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(values.size() * 8);
    for (double v : values) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int shift = 0; shift <= 56; shift += 8)
            bytes.push_back(static_cast<std::uint8_t>(bits >> shift));
    }
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw IoError("open " + path + ": " + std::strerror(errno));
    std::size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n < 0) {
            ::close(fd);
            throw IoError("write " + path + ": " + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
    return bytes.size();
}

}  // namespace detail

/// Runs P worker threads for total_steps each, emitting every write_interval-th
/// step through the configured I/O mode. Appends one row per emitted record to
/// `emission_log` (ordered by rank, then step) when it is non-null.
inline GeneratorStats run_generator(const SimConfig& config,
                                    std::vector<logfmt::EmissionRow>* emission_log = nullptr) {
    config.validate();
    const std::uint32_t element_count = config.dynamics.element_count();

    GeneratorStats stats;
    stats.ranks.resize(config.world_size);
    std::vector<std::vector<logfmt::EmissionRow>> logs(config.world_size);
    stats.started_at_ns = monotonic_now_ns();

    auto worker = [&](std::uint32_t rank) {
        RankStats& rs = stats.ranks[rank];
        rs.rank = rank;
        auto& log = logs[rank];
        const auto t0 = monotonic_now_ns();
        try {
            DynamicsInstance dyn(config.dynamics, rank, config.seed);
            const std::string key = make_stream_key(config.field_name, rank);

            std::unique_ptr<broker::BrokerContext> ctx;
            if (config.io == IoMode::Broker) {
                broker::BrokerConfig bc;
                bc.endpoints = config.endpoints;
                bc.queue_capacity = config.queue_capacity;
                bc.backpressure = config.backpressure;
                bc.connect_timeout = config.connect_timeout;
                bc.write_timeout = config.write_timeout;
                ctx = broker::broker_init(bc, config.field_name, rank, config.world_size,
                                          element_count);
            }
            std::ofstream index;
            if (config.io == IoMode::File) {
                index.open(config.file_dir + "/" + config.field_name + "_" +
                           std::to_string(rank) + ".index.csv");
                index << "step,file,bytes\n";
            }

            for (std::uint64_t step = 1; step <= config.total_steps; ++step) {
                if (config.step_compute_delay.count() > 0)
                    std::this_thread::sleep_for(config.step_compute_delay);
                dyn.advance();
                if (step % config.write_interval != 0) continue;

                switch (config.io) {
                    case IoMode::Broker: {
                        auto receipt = ctx->write(step, dyn.state());
                        if (receipt.outcome == broker::WriteOutcome::Queued) {
                            ++rs.records_emitted;
                            rs.bytes_emitted += 8ull * element_count;
                            log.push_back({key, step, receipt.produced_at_ns});
                        } else {
                            ++rs.records_dropped;
                        }
                        break;
                    }
                    case IoMode::File: {
                        auto produced_at = monotonic_now_ns();
                        std::string name = config.field_name + "_" + std::to_string(rank) +
                                           "_" + std::to_string(step) + ".f64";
                        auto bytes = detail::write_emission_file(config.file_dir + "/" + name,
                                                                 dyn.state());
                        index << step << ',' << name << ',' << bytes << '\n';
                        ++rs.records_emitted;
                        rs.bytes_emitted += bytes;
                        log.push_back({key, step, produced_at});
                        break;
                    }
                    case IoMode::Disabled:
                        break;
                }
            }

            if (ctx) {
                auto bstats = ctx->finalize();
                if (!bstats.ok()) {
                    rs.failed = true;
                    rs.error = bstats.error;
                }
            }
            if (index.is_open()) index.flush();
        } catch (const Error& e) {
            rs.failed = true;
            rs.error = e.what();
        }
        rs.elapsed_ns = monotonic_now_ns() - t0;
    };

    std::vector<std::thread> threads;
    threads.reserve(config.world_size);
    for (std::uint32_t rank = 0; rank < config.world_size; ++rank)
        threads.emplace_back(worker, rank);
    for (auto& t : threads) t.join();
    stats.finished_at_ns = monotonic_now_ns();

    if (emission_log) {
        for (auto& log : logs)
            emission_log->insert(emission_log->end(), log.begin(), log.end());
    }
    return stats;
}

}  // namespace fieldstream::sim
