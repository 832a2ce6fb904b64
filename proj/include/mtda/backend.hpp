#pragma once

#include <chrono>
#include <csignal>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "mtda/error.hpp"

namespace mtda {

/// Produces the model's continuation for a full prompt.
using TranslateFn = std::function<std::string(const std::string& prompt)>;
/// Quality estimate of a translation of `source` (higher is better).
using EstimateFn = std::function<double(const std::string& source, const std::string& translation)>;

/// Either an HTTP base URL ("http://host:port[/prefix]") or a shell command
/// speaking line-delimited JSON on stdin/stdout.
struct BackendEndpoint {
    std::string url;
    std::string command;
    std::chrono::milliseconds timeout{30000};
    int retry_count = 2;
};

namespace detail {

inline nlohmann::json parse_backend_reply(std::string_view body, std::string_view what) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
        throw BackendError(BackendError::Reason::protocol, std::string(what) + ": malformed JSON reply");
    }
    if (!j.is_object()) {
        throw BackendError(BackendError::Reason::protocol, std::string(what) + ": reply is not a JSON object");
    }
    if (j.contains("error")) {
        const auto err = j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
        if (err == "too_long") {
            throw BackendError(BackendError::Reason::too_long, std::string(what) + ": prompt too long");
        }
        throw BackendError(BackendError::Reason::protocol, std::string(what) + ": backend error: " + err);
    }
    return j;
}

inline std::string reply_translation(const nlohmann::json& j) {
    if (!j.contains("translation") || !j["translation"].is_string()) {
        throw BackendError(BackendError::Reason::protocol, "translate: reply lacks string \"translation\"");
    }
    return j["translation"].get<std::string>();
}

inline double reply_score(const nlohmann::json& j) {
    if (!j.contains("score") || !j["score"].is_number()) {
        throw BackendError(BackendError::Reason::protocol, "estimate: reply lacks numeric \"score\"");
    }
    return j["score"].get<double>();
}

/// Retries transport failures and timeouts; protocol errors and "too long"
/// rejections are final.
template <typename F>
auto with_retries(int retries, F&& call) {
    for (int attempt = 0;; ++attempt) {
        try {
            return call();
        } catch (const BackendError& e) {
            const bool transient =
                e.reason() == BackendError::Reason::transport || e.reason() == BackendError::Reason::timeout;
            if (!transient || attempt >= retries) {
                throw;
            }
        }
    }
}

} // namespace detail

/// JSON over HTTP POST: /translate {"prompt"} -> {"translation"},
/// /estimate {"source", "translation"} -> {"score"}. HTTP 413 or
/// {"error": "too_long"} signals an over-long prompt.
class HttpBackend {
  public:
    explicit HttpBackend(BackendEndpoint ep) : ep_(std::move(ep)) {
        std::string url = ep_.url;
        const auto scheme_end = url.find("://");
        const std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
        const auto path_start = url.find('/', host_start);
        base_ = url.substr(0, path_start);
        if (scheme_end == std::string::npos) {
            base_ = "http://" + base_;
        }
        prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
        while (!prefix_.empty() && prefix_.back() == '/') {
            prefix_.pop_back();
        }
        if (ep_.timeout.count() <= 0) {
            throw UsageError("backend timeout must be positive");
        }
    }

    std::string translate(const std::string& prompt) const {
        return detail::reply_translation(post("/translate", {{"prompt", prompt}}));
    }

    double estimate(const std::string& source, const std::string& translation) const {
        return detail::reply_score(post("/estimate", {{"source", source}, {"translation", translation}}));
    }

    nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
        return detail::with_retries(ep_.retry_count, [&] {
            httplib::Client cli(base_);
            const auto secs = std::chrono::duration_cast<std::chrono::seconds>(ep_.timeout);
            const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(ep_.timeout - secs);
            cli.set_connection_timeout(secs.count(), usecs.count());
            cli.set_read_timeout(secs.count(), usecs.count());
            cli.set_write_timeout(secs.count(), usecs.count());
            auto res = cli.Post(prefix_ + path, body.dump(), "application/json");
            if (!res) {
                const auto err = res.error();
                const auto reason = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout
                                        ? BackendError::Reason::timeout
                                        : BackendError::Reason::transport;
                throw BackendError(reason, base_ + prefix_ + path + ": " + httplib::to_string(err));
            }
            if (res->status == 413) {
                throw BackendError(BackendError::Reason::too_long, path + ": prompt too long");
            }
            if (res->status < 200 || res->status >= 300) {
                throw BackendError(BackendError::Reason::protocol, path + ": HTTP " + std::to_string(res->status));
            }
            return detail::parse_backend_reply(res->body, path);
        });
    }

  private:
    BackendEndpoint ep_;
    std::string base_;
    std::string prefix_;
};

/// Long-lived child process; one JSON request per line on its stdin, one
/// reply per line on its stdout. Requests carry "kind": "translate" or
/// "estimate". Calls are serialized.
class SubprocessBackend {
  public:
    explicit SubprocessBackend(BackendEndpoint ep) : ep_(std::move(ep)) {
        if (ep_.timeout.count() <= 0) {
            throw UsageError("backend timeout must be positive");
        }
    }

    SubprocessBackend(const SubprocessBackend&) = delete;
    SubprocessBackend& operator=(const SubprocessBackend&) = delete;

    ~SubprocessBackend() { stop(); }

    std::string translate(const std::string& prompt) {
        return detail::reply_translation(request({{"kind", "translate"}, {"prompt", prompt}}));
    }

    double estimate(const std::string& source, const std::string& translation) {
        return detail::reply_score(
            request({{"kind", "estimate"}, {"source", source}, {"translation", translation}}));
    }

    nlohmann::json request(const nlohmann::json& body) {
        std::lock_guard lock(mu_);
        return detail::with_retries(ep_.retry_count, [&] {
            if (pid_ <= 0) {
                start();
            }
            try {
                write_line(body.dump() + "\n");
                return detail::parse_backend_reply(read_line(), "subprocess");
            } catch (const BackendError& e) {
                if (e.reason() == BackendError::Reason::transport || e.reason() == BackendError::Reason::timeout) {
                    stop();
                }
                throw;
            }
        });
    }

  private:
    void start() {
        int to_child[2];
        int from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0) {
            throw BackendError(BackendError::Reason::transport, "subprocess: pipe() failed");
        }
        const pid_t pid = fork();
        if (pid < 0) {
            throw BackendError(BackendError::Reason::transport, "subprocess: fork() failed");
        }
        if (pid == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            execl("/bin/sh", "sh", "-c", ep_.command.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        pid_ = pid;
        in_fd_ = to_child[1];
        out_fd_ = from_child[0];
        buffer_.clear();
        std::signal(SIGPIPE, SIG_IGN);
    }

    void stop() {
        if (in_fd_ >= 0) {
            close(in_fd_);
            in_fd_ = -1;
        }
        if (out_fd_ >= 0) {
            close(out_fd_);
            out_fd_ = -1;
        }
        if (pid_ > 0) {
            kill(pid_, SIGTERM);
            waitpid(pid_, nullptr, 0);
            pid_ = -1;
        }
    }

    void write_line(const std::string& line) {
        std::size_t off = 0;
        while (off < line.size()) {
            const ssize_t n = write(in_fd_, line.data() + off, line.size() - off);
            if (n <= 0) {
                throw BackendError(BackendError::Reason::transport, "subprocess: write failed");
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string read_line() {
        const auto deadline = std::chrono::steady_clock::now() + ep_.timeout;
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) {
                throw BackendError(BackendError::Reason::timeout, "subprocess: reply timed out");
            }
            pollfd pfd{out_fd_, POLLIN, 0};
            const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
            if (ready == 0) {
                throw BackendError(BackendError::Reason::timeout, "subprocess: reply timed out");
            }
            char chunk[4096];
            const ssize_t n = read(out_fd_, chunk, sizeof chunk);
            if (n <= 0) {
                throw BackendError(BackendError::Reason::transport, "subprocess: backend exited");
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    BackendEndpoint ep_;
    std::mutex mu_;
    pid_t pid_ = -1;
    int in_fd_ = -1;
    int out_fd_ = -1;
    std::string buffer_;
};

inline TranslateFn make_translator(const BackendEndpoint& ep) {
    if (!ep.command.empty()) {
        auto backend = std::make_shared<SubprocessBackend>(ep);
        return [backend](const std::string& prompt) { return backend->translate(prompt); };
    }
    if (ep.url.empty()) {
        throw UsageError("translator endpoint needs a url or a command");
    }
    auto backend = std::make_shared<HttpBackend>(ep);
    return [backend](const std::string& prompt) { return backend->translate(prompt); };
}

inline EstimateFn make_estimator(const BackendEndpoint& ep) {
    if (!ep.command.empty()) {
        auto backend = std::make_shared<SubprocessBackend>(ep);
        return [backend](const std::string& s, const std::string& t) { return backend->estimate(s, t); };
    }
    if (ep.url.empty()) {
        throw UsageError("estimator endpoint needs a url or a command");
    }
    auto backend = std::make_shared<HttpBackend>(ep);
    return [backend](const std::string& s, const std::string& t) { return backend->estimate(s, t); };
}

} // namespace mtda
