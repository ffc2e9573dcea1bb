#pragma once

// Out-of-process matcher plugins. A plugin is any executable that speaks the
// one-shot pipe protocol below; it is launched per image pair through
// /bin/sh -c so commands may carry arguments.
//
//   stdin:   "MMREG/1 <wa> <ha> <wb> <hb>\n"
//            wa*ha float32 little-endian pixels of image a, row-major
//            wb*hb float32 little-endian pixels of image b, row-major
//   stdout:  "MATCHES <n>\n"
//            n lines "xa ya xb yb confidence\n"
//   exit 0 on success; anything else is a failure and stderr is reported.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmreg/core.hpp"
#include "mmreg/features.hpp"

namespace mmreg {

namespace detail {

inline void ignore_sigpipe_once() {
    static std::once_flag flag;
    std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}

inline void set_nonblocking(int fd) {
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

struct ChildProcess {
    pid_t pid = -1;
    int stdin_fd = -1;
    int stdout_fd = -1;
    int stderr_fd = -1;

    ~ChildProcess() {
        if (stdin_fd >= 0) ::close(stdin_fd);
        if (stdout_fd >= 0) ::close(stdout_fd);
        if (stderr_fd >= 0) ::close(stderr_fd);
        if (pid > 0) {
            ::kill(pid, SIGKILL);
            int status = 0;
            ::waitpid(pid, &status, 0);
        }
    }
};

inline ChildProcess spawn_shell(const std::string& command) {
    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0 || ::pipe(err_pipe) != 0)
        throw Error("external matcher: pipe() failed");
    const pid_t pid = ::fork();
    if (pid < 0) throw Error("external matcher: fork() failed");
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]})
            ::close(fd);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    ChildProcess child;
    child.pid = pid;
    child.stdin_fd = in_pipe[1];
    child.stdout_fd = out_pipe[0];
    child.stderr_fd = err_pipe[0];
    set_nonblocking(child.stdin_fd);
    set_nonblocking(child.stdout_fd);
    set_nonblocking(child.stderr_fd);
    return child;
}

}  // namespace detail

// Runs `command` on the pair of single-channel images and parses its output.
// Throws Error on timeout, nonzero exit, or malformed/inconsistent output.
inline MatchSet run_external_matcher(const RasterImage& a, const RasterImage& b,
                                     const std::string& command, double timeout_s = 60.0) {
    if (a.channels != 1 || b.channels != 1)
        throw std::invalid_argument("run_external_matcher: single-channel images required");
    if (!(timeout_s > 0.0))
        throw std::invalid_argument("run_external_matcher: timeout must be > 0");
    detail::ignore_sigpipe_once();

    // assemble the request payload
    std::string payload = "MMREG/1 " + std::to_string(a.width) + " " + std::to_string(a.height) +
                          " " + std::to_string(b.width) + " " + std::to_string(b.height) + "\n";
    static_assert(sizeof(float) == 4, "wire format requires 32-bit floats");
    const size_t header_len = payload.size();
    payload.resize(header_len + (a.data.size() + b.data.size()) * sizeof(float));
    std::memcpy(payload.data() + header_len, a.data.data(), a.data.size() * sizeof(float));
    std::memcpy(payload.data() + header_len + a.data.size() * sizeof(float), b.data.data(),
                b.data.size() * sizeof(float));

    detail::ChildProcess child = detail::spawn_shell(command);
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);

    std::string out_text, err_text;
    size_t written = 0;
    bool timed_out = false;
    while (child.stdin_fd >= 0 || child.stdout_fd >= 0 || child.stderr_fd >= 0) {
        const auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            timed_out = true;
            break;
        }
        const int wait_ms = static_cast<int>(std::min<int64_t>(
            250, std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1));
        struct pollfd fds[3];
        int nfds = 0;
        int idx_in = -1, idx_out = -1, idx_err = -1;
        if (child.stdin_fd >= 0) {
            idx_in = nfds;
            fds[nfds++] = {child.stdin_fd, POLLOUT, 0};
        }
        if (child.stdout_fd >= 0) {
            idx_out = nfds;
            fds[nfds++] = {child.stdout_fd, POLLIN, 0};
        }
        if (child.stderr_fd >= 0) {
            idx_err = nfds;
            fds[nfds++] = {child.stderr_fd, POLLIN, 0};
        }
        const int rc = ::poll(fds, nfds, wait_ms);
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw Error("external matcher: poll() failed");
        }
        if (rc == 0) continue;
        if (idx_in >= 0 && (fds[idx_in].revents & (POLLOUT | POLLERR | POLLHUP))) {
            const ssize_t n = ::write(child.stdin_fd, payload.data() + written,
                                      std::min<size_t>(payload.size() - written, 65536));
            if (n > 0) written += static_cast<size_t>(n);
            // EPIPE/HUP: plugin stopped reading; its exit status decides the outcome
            if ((n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) ||
                written == payload.size()) {
                ::close(child.stdin_fd);
                child.stdin_fd = -1;
            }
        }
        auto drain = [&](int& fd, std::string& sink) {
            char buf[65536];
            const ssize_t n = ::read(fd, buf, sizeof buf);
            if (n > 0) {
                sink.append(buf, static_cast<size_t>(n));
            } else if (n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) {
                ::close(fd);
                fd = -1;
            }
        };
        if (idx_out >= 0 && (fds[idx_out].revents & (POLLIN | POLLERR | POLLHUP)))
            drain(child.stdout_fd, out_text);
        if (idx_err >= 0 && (fds[idx_err].revents & (POLLIN | POLLERR | POLLHUP)))
            drain(child.stderr_fd, err_text);
    }

    int status = 0;
    if (!timed_out) {
        // streams closed; wait for exit, still bounded by the deadline
        while (true) {
            const pid_t r = ::waitpid(child.pid, &status, WNOHANG);
            if (r == child.pid) {
                child.pid = -1;
                break;
            }
            if (r < 0 && errno != EINTR) throw Error("external matcher: waitpid() failed");
            if (std::chrono::steady_clock::now() >= deadline) {
                timed_out = true;
                break;
            }
            ::usleep(1000);
        }
    }
    if (timed_out) {
        std::ostringstream msg;
        msg << "external matcher timed out after " << timeout_s << "s: " << command;
        throw Error(msg.str());
    }
    auto stderr_snippet = [&]() -> std::string {
        std::string s = err_text.substr(0, 512);
        while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
        return s.empty() ? std::string("(no stderr)") : s;
    };
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        std::ostringstream msg;
        msg << "external matcher failed (";
        if (WIFEXITED(status))
            msg << "exit status " << WEXITSTATUS(status);
        else if (WIFSIGNALED(status))
            msg << "signal " << WTERMSIG(status);
        else
            msg << "abnormal termination";
        msg << "): " << stderr_snippet();
        throw Error(msg.str());
    }

    // parse the response
    std::istringstream iss(out_text);
    std::string tag;
    long long count = -1;
    if (!(iss >> tag >> count) || tag != "MATCHES" || count < 0)
        throw Error("external matcher: malformed response header");
    MatchSet result;
    std::set<std::pair<double, double>> seen_a, seen_b;
    for (long long i = 0; i < count; ++i) {
        double xa, ya, xb, yb, conf;
        if (!(iss >> xa >> ya >> xb >> yb >> conf))
            throw Error("external matcher: truncated match list");
        if (!std::isfinite(xa) || !std::isfinite(ya) || !std::isfinite(xb) ||
            !std::isfinite(yb) || !std::isfinite(conf))
            throw Error("external matcher: non-finite match values");
        if (conf < 0.0 || conf > 1.0)
            throw Error("external matcher: confidence outside [0, 1]");
        if (!seen_a.insert({xa, ya}).second || !seen_b.insert({xb, yb}).second)
            throw Error("external matcher: non-injective matching");
        Keypoint ka, kb;
        ka.x = xa;
        ka.y = ya;
        kb.x = xb;
        kb.y = yb;
        result.keypoints_a.push_back(std::move(ka));
        result.keypoints_b.push_back(std::move(kb));
        result.pairs.push_back({static_cast<int>(i), static_cast<int>(i), conf});
    }
    std::string rest;
    if (iss >> rest)
        throw Error("external matcher: trailing data after match list");
    result.validate();
    return result;
}

class ExternalMatcher : public Matcher {
public:
    explicit ExternalMatcher(std::string command, double timeout_s = 60.0,
                             std::string label = {})
        : command_(std::move(command)),
          timeout_s_(timeout_s),
          label_(label.empty() ? command_ : std::move(label)) {}

    std::string name() const override { return label_; }

    MatchSet match(const RasterImage& a, const RasterImage& b) override {
        return run_external_matcher(a, b, command_, timeout_s_);
    }

private:
    std::string command_;
    double timeout_s_;
    std::string label_;
};

}  // namespace mmreg
