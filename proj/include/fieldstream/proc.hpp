#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fieldstream/core.hpp"

namespace fieldstream::proc {

inline std::string errno_text() { return std::string(std::strerror(errno)); }

struct PipeOutcome {
    std::string output;
    int exit_code = 0;
};

/// Runs `command` via /bin/sh -c, feeds `input` to its stdin, and returns its
/// stdout. Reading and writing are interleaved so requests larger than the
/// pipe buffer cannot deadlock against a chatty child.
inline PipeOutcome run_pipe_command(const std::string& command, std::string_view input,
                                    std::chrono::milliseconds timeout =
                                        std::chrono::milliseconds(30000)) {
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0)
        throw IoError("pipe: " + errno_text());

    pid_t pid = ::fork();
    if (pid < 0) throw IoError("fork: " + errno_text());
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), nullptr);
        _exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    int wr = in_pipe[1];
    int rd = out_pipe[0];
    ::fcntl(wr, F_SETFL, O_NONBLOCK);
    ::fcntl(rd, F_SETFL, O_NONBLOCK);

    PipeOutcome result;
    std::size_t written = 0;
    auto deadline = std::chrono::steady_clock::now() + timeout;
    bool timed_out = false;

    while (rd >= 0) {
        pollfd fds[2];
        nfds_t nfds = 0;
        pollfd* wfd = nullptr;
        pollfd* rfd = nullptr;
        if (wr >= 0) {
            fds[nfds] = {wr, POLLOUT, 0};
            wfd = &fds[nfds++];
        }
        fds[nfds] = {rd, POLLIN, 0};
        rfd = &fds[nfds++];

        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            timed_out = true;
            break;
        }
        int ready = ::poll(fds, nfds, static_cast<int>(left.count()));
        if (ready < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (ready == 0) {
            timed_out = true;
            break;
        }
        if (wfd && (wfd->revents & (POLLOUT | POLLERR))) {
            ssize_t n = ::write(wr, input.data() + written, input.size() - written);
            if (n > 0) written += static_cast<std::size_t>(n);
            if (n < 0 && errno != EAGAIN && errno != EINTR) {
                ::close(wr);
                wr = -1;
            } else if (written == input.size()) {
                ::close(wr);
                wr = -1;
            }
        }
        if (rfd->revents & (POLLIN | POLLHUP)) {
            char buf[16384];
            ssize_t n = ::read(rd, buf, sizeof(buf));
            if (n > 0) {
                result.output.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0 || (n < 0 && errno != EAGAIN && errno != EINTR)) {
                ::close(rd);
                rd = -1;
            }
        }
    }
    if (wr >= 0) ::close(wr);
    if (rd >= 0) ::close(rd);

    if (timed_out) {
        ::kill(pid, SIGKILL);
        int status = 0;
        ::waitpid(pid, &status, 0);
        throw AnalyzerError("analyzer command timed out: " + command);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (WIFEXITED(status))
        result.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        result.exit_code = 128 + WTERMSIG(status);
    return result;
}

/// Supervised child process with stdout/stderr redirected to files.
class ChildProcess {
public:
    ChildProcess() = default;
    ChildProcess(ChildProcess&& other) noexcept
        : pid_(std::exchange(other.pid_, -1)), name_(std::move(other.name_)) {}
    ChildProcess& operator=(ChildProcess&& other) noexcept {
        if (this != &other) {
            kill_now();
            pid_ = std::exchange(other.pid_, -1);
            name_ = std::move(other.name_);
        }
        return *this;
    }
    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;
    ~ChildProcess() { kill_now(); }

    static ChildProcess spawn(const std::vector<std::string>& argv, const std::string& name,
                              const std::string& stdout_path, const std::string& stderr_path) {
        if (argv.empty()) throw InvalidArgument("empty argv");
        std::vector<char*> cargv;
        cargv.reserve(argv.size() + 1);
        for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
        cargv.push_back(nullptr);

        pid_t pid = ::fork();
        if (pid < 0) throw IoError("fork: " + errno_text());
        if (pid == 0) {
            if (!stdout_path.empty()) {
                int fd = ::open(stdout_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
                if (fd >= 0) {
                    ::dup2(fd, STDOUT_FILENO);
                    ::close(fd);
                }
            }
            if (!stderr_path.empty()) {
                int fd = ::open(stderr_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
                if (fd >= 0) {
                    ::dup2(fd, STDERR_FILENO);
                    ::close(fd);
                }
            }
            ::execv(cargv[0], cargv.data());
            ::fprintf(stderr, "exec %s: %s\n", cargv[0], std::strerror(errno));
            _exit(127);
        }
        ChildProcess child;
        child.pid_ = pid;
        child.name_ = name;
        return child;
    }

    pid_t pid() const { return pid_; }
    const std::string& name() const { return name_; }
    bool valid() const { return pid_ > 0; }

    void signal(int sig) const {
        if (pid_ > 0) ::kill(pid_, sig);
    }

    /// Polls for exit up to `timeout`; nullopt if still running.
    std::optional<int> wait(std::chrono::milliseconds timeout) {
        if (pid_ <= 0) return exit_code_;
        auto deadline = std::chrono::steady_clock::now() + timeout;
        while (true) {
            int status = 0;
            pid_t rc = ::waitpid(pid_, &status, WNOHANG);
            if (rc == pid_) {
                exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status)
                             : WIFSIGNALED(status) ? 128 + WTERMSIG(status)
                                                   : -1;
                pid_ = -1;
                return exit_code_;
            }
            if (rc < 0) {  // reaped elsewhere or gone
                pid_ = -1;
                return exit_code_;
            }
            if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
            ::usleep(10000);
        }
    }

    /// SIGTERM, a grace period, then SIGKILL.
    int terminate(std::chrono::milliseconds grace = std::chrono::milliseconds(5000)) {
        if (pid_ <= 0) return exit_code_.value_or(-1);
        signal(SIGTERM);
        if (auto code = wait(grace)) return *code;
        signal(SIGKILL);
        return wait(std::chrono::milliseconds(5000)).value_or(-1);
    }

    void kill_now() {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            int status = 0;
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
    }

private:

    pid_t pid_ = -1;
    std::string name_;
    std::optional<int> exit_code_;
};

}  // namespace fieldstream::proc
