#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "mtda/backend.hpp"

using namespace mtda;
using nlohmann::json;

namespace {

// Local stand-in for the model servers.
class MockServer {
  public:
    MockServer() {
        server_.Post("/v1/translate", [this](const httplib::Request& req, httplib::Response& res) {
            ++translate_calls;
            const auto prompt = json::parse(req.body).at("prompt").get<std::string>();
            if (prompt == "huge") {
                res.status = 413;
                return;
            }
            if (prompt == "long") {
                res.set_content(R"({"error":"too_long"})", "application/json");
                return;
            }
            if (prompt == "boom") {
                res.status = 500;
                return;
            }
            if (prompt == "junk") {
                res.set_content("not json", "application/json");
                return;
            }
            res.set_content(json{{"translation", "T(" + prompt + ")"}}.dump(), "application/json");
        });
        server_.Post("/v1/estimate", [](const httplib::Request& req, httplib::Response& res) {
            const auto body = json::parse(req.body);
            const double score = static_cast<double>(body.at("translation").get<std::string>().size());
            res.set_content(json{{"score", score}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

    std::atomic<int> translate_calls{0};

  private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

BackendError::Reason reason_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const BackendError& e) {
        return e.reason();
    }
    ADD_FAILURE() << "no BackendError thrown";
    return BackendError::Reason::protocol;
}

// Binds an ephemeral port and releases it without ever listening.
int unused_port() {
    const int fd = socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    close(fd);
    return ntohs(addr.sin_port);
}

} // namespace

TEST(HttpBackend, TranslateAndEstimate) {
    MockServer mock;
    const auto t = make_translator({mock.url(), "", std::chrono::milliseconds(2000), 0});
    const auto e = make_estimator({mock.url() + "/", "", std::chrono::milliseconds(2000), 0});
    EXPECT_EQ(t("hola = "), "T(hola = )");
    EXPECT_EQ(e("src", "abcd"), 4.0);
}

TEST(HttpBackend, ErrorClassification) {
    MockServer mock;
    const auto t = make_translator({mock.url(), "", std::chrono::milliseconds(2000), 2});
    EXPECT_EQ(reason_of([&] { t("huge"); }), BackendError::Reason::too_long);
    EXPECT_EQ(reason_of([&] { t("long"); }), BackendError::Reason::too_long);
    EXPECT_EQ(reason_of([&] { t("junk"); }), BackendError::Reason::protocol);
    const int before = mock.translate_calls.load();
    EXPECT_EQ(reason_of([&] { t("boom"); }), BackendError::Reason::protocol);
    // protocol errors are not retried
    EXPECT_EQ(mock.translate_calls.load() - before, 1);
}

TEST(HttpBackend, ConnectionRefusedIsTransport) {
    const auto t = make_translator({"http://127.0.0.1:" + std::to_string(unused_port()), "",
                                    std::chrono::milliseconds(500), 1});
    EXPECT_EQ(reason_of([&] { t("x"); }), BackendError::Reason::transport);
}

TEST(Retries, OnlyTransientFailuresAreRetried) {
    int calls = 0;
    const auto flaky = [&] {
        if (++calls < 3) {
            throw BackendError(BackendError::Reason::timeout, "slow");
        }
        return 7;
    };
    EXPECT_EQ(detail::with_retries(2, flaky), 7);
    EXPECT_EQ(calls, 3);
    calls = 0;
    EXPECT_THROW(detail::with_retries(1, flaky), BackendError);
    EXPECT_EQ(calls, 2);
    calls = 0;
    EXPECT_THROW(detail::with_retries(5,
                                      [&]() -> int {
                                          ++calls;
                                          throw BackendError(BackendError::Reason::too_long, "big");
                                      }),
                 BackendError);
    EXPECT_EQ(calls, 1);
}

TEST(SubprocessBackend, LineProtocol) {
    const std::string script = R"(while IFS= read -r l; do case "$l" in *'"translate"'*) echo '{"translation":"ok"}';; *) echo '{"score":0.25}';; esac; done)";
    const auto t = make_translator({"", script, std::chrono::milliseconds(5000), 0});
    const auto e = make_estimator({"", script, std::chrono::milliseconds(5000), 0});
    EXPECT_EQ(t("a = "), "ok");
    EXPECT_EQ(t("b = "), "ok");
    EXPECT_EQ(e("a", "ok"), 0.25);
}

TEST(SubprocessBackend, TooLongReply) {
    const auto t = make_translator({"", R"(while read l; do echo '{"error":"too_long"}'; done)",
                                    std::chrono::milliseconds(5000), 0});
    EXPECT_EQ(reason_of([&] { t("x"); }), BackendError::Reason::too_long);
}

TEST(SubprocessBackend, TimeoutAndExit) {
    const auto slow = make_translator({"", "sleep 5", std::chrono::milliseconds(200), 0});
    EXPECT_EQ(reason_of([&] { slow("x"); }), BackendError::Reason::timeout);
    const auto gone = make_translator({"", "true", std::chrono::milliseconds(2000), 1});
    EXPECT_EQ(reason_of([&] { gone("x"); }), BackendError::Reason::transport);
}

TEST(Backend, EndpointValidation) {
    EXPECT_THROW(make_translator({}), UsageError);
    EXPECT_THROW(make_translator({"http://x", "", std::chrono::milliseconds(0), 0}), UsageError);
}
