#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "fieldstream/core.hpp"
#include "fieldstream/wire.hpp"

namespace fieldstream::net {

inline std::string errno_str(int err) { return std::string(std::strerror(err)); }

/// RAII TCP socket. Blocking by default; send/recv timeouts via setsockopt.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Socket& operator=(Socket&& other) noexcept {
        if (this != &other) {
            close();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    /// Unblocks any thread stuck in send/recv on this socket.
    void shutdown_both() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

    static Socket connect(const EndpointAddress& ep, std::chrono::milliseconds timeout) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        std::string port = std::to_string(ep.port);
        if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0)
            throw IoError("resolve " + ep.str() + ": " + gai_strerror(rc));

        Socket sock(::socket(res->ai_family, res->ai_socktype | SOCK_NONBLOCK, 0));
        if (!sock.valid()) {
            ::freeaddrinfo(res);
            throw IoError("socket: " + errno_str(errno));
        }
        int rc = ::connect(sock.fd_, res->ai_addr, static_cast<socklen_t>(res->ai_addrlen));
        ::freeaddrinfo(res);
        if (rc != 0 && errno != EINPROGRESS)
            throw IoError("connect " + ep.str() + ": " + errno_str(errno));
        if (rc != 0) {
            pollfd pfd{sock.fd_, POLLOUT, 0};
            int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
            if (ready == 0) throw IoError("connect " + ep.str() + ": timed out");
            if (ready < 0) throw IoError("connect " + ep.str() + ": " + errno_str(errno));
            int err = 0;
            socklen_t len = sizeof(err);
            ::getsockopt(sock.fd_, SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0) throw IoError("connect " + ep.str() + ": " + errno_str(err));
        }
        // back to blocking mode
        int flags = ::fcntl(sock.fd_, F_GETFL, 0);
        ::fcntl(sock.fd_, F_SETFL, flags & ~O_NONBLOCK);
        int one = 1;
        ::setsockopt(sock.fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return sock;
    }

    void set_send_timeout(std::chrono::milliseconds t) const {
        timeval tv{static_cast<time_t>(t.count() / 1000),
                   static_cast<suseconds_t>(t.count() % 1000 * 1000)};
        ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
    }

    void set_recv_timeout(std::chrono::milliseconds t) const {
        timeval tv{static_cast<time_t>(t.count() / 1000),
                   static_cast<suseconds_t>(t.count() % 1000 * 1000)};
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    }

    void send_all(std::span<const std::uint8_t> bytes) const {
        std::size_t off = 0;
        while (off < bytes.size()) {
            ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK)
                    throw BrokenPipe("send timed out");
                throw BrokenPipe("send: " + errno_str(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    /// Returns 0 on orderly EOF. Throws IoError on timeout/failure.
    std::size_t recv_some(std::span<std::uint8_t> out) const {
        while (true) {
            ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK)
                    throw IoError("recv timed out");
                throw IoError("recv: " + errno_str(errno));
            }
            return static_cast<std::size_t>(n);
        }
    }

private:
    int fd_ = -1;
};

/// Listening TCP socket. Binding port 0 picks a free port, readable via port().
class Listener {
public:
    Listener() = default;
    Listener(Listener&&) = default;
    Listener& operator=(Listener&&) = default;

    static Listener bind(const EndpointAddress& ep, int backlog = 64) {
        Listener l;
        l.sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
        if (!l.sock_.valid()) throw IoError("socket: " + errno_str(errno));
        int one = 1;
        ::setsockopt(l.sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(ep.port);
        if (ep.host.empty() || ep.host == "0.0.0.0") {
            addr.sin_addr.s_addr = INADDR_ANY;
        } else if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
            addrinfo hints{};
            hints.ai_family = AF_INET;
            hints.ai_socktype = SOCK_STREAM;
            addrinfo* res = nullptr;
            if (int rc = ::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res); rc != 0)
                throw IoError("resolve " + ep.host + ": " + gai_strerror(rc));
            addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
            ::freeaddrinfo(res);
        }
        if (::bind(l.sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw IoError("bind " + ep.str() + ": " + errno_str(errno));
        if (::listen(l.sock_.fd(), backlog) != 0)
            throw IoError("listen " + ep.str() + ": " + errno_str(errno));

        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(l.sock_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
        l.port_ = ntohs(bound.sin_port);
        return l;
    }

    /// Blocks until a connection arrives; nullopt once the listener is closed.
    std::optional<Socket> accept() const {
        while (true) {
            int fd = ::accept(sock_.fd(), nullptr, nullptr);
            if (fd >= 0) {
                int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
                return Socket(fd);
            }
            if (errno == EINTR) continue;
            return std::nullopt;  // listener closed or failed
        }
    }

    std::uint16_t port() const { return port_; }
    void close() { sock_.close(); }
    /// Unblocks a thread stuck in accept(); Linux wakes accept on shutdown.
    void interrupt() { sock_.shutdown_both(); }

private:
    Socket sock_;
    std::uint16_t port_ = 0;
};

/// A socket plus an incremental frame decoder: one framed peer connection.
class FramedConn {
public:
    explicit FramedConn(Socket sock, std::size_t max_frame = wire::kDefaultMaxFrame)
        : sock_(std::move(sock)), decoder_(max_frame), max_frame_(max_frame) {}

    void send(const wire::Message& msg) const {
        sock_.send_all(wire::encode_frame(msg, max_frame_));
    }

    /// Blocks for the next message; nullopt on orderly peer close.
    std::optional<wire::Message> recv() {
        while (true) {
            if (auto msg = decoder_.next()) return msg;
            std::uint8_t chunk[16384];
            std::size_t n = sock_.recv_some(chunk);
            if (n == 0) {
                if (decoder_.buffered() > 0) throw ProtocolError("connection closed mid-frame");
                return std::nullopt;
            }
            decoder_.feed(std::span(chunk, n));
        }
    }

    Socket& socket() { return sock_; }
    const Socket& socket() const { return sock_; }

private:
    Socket sock_;
    wire::FrameDecoder decoder_;
    std::size_t max_frame_;
};

}  // namespace fieldstream::net
