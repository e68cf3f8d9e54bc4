#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "cirsynth/provider.hpp"
#include "cirsynth/query_synth.hpp"
#include "test_support.hpp"

#include <httplib.h>

using namespace cirsynth;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

/// httplib server on an ephemeral localhost port, stopped on destruction.
class LocalServer {
public:
    explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server_.Post(".*", [this, handler](const httplib::Request& req, httplib::Response& res) {
            {
                std::lock_guard lock(mutex_);
                bodies_.push_back(req.body);
                auth_.push_back(req.get_header_value("Authorization"));
            }
            handler(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }

    [[nodiscard]] std::string url(const std::string& path = "/v1") const {
        return "http://127.0.0.1:" + std::to_string(port_) + path;
    }
    [[nodiscard]] std::vector<std::string> bodies() {
        std::lock_guard lock(mutex_);
        return bodies_;
    }
    [[nodiscard]] std::vector<std::string> auth() {
        std::lock_guard lock(mutex_);
        return auth_;
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::mutex mutex_;
    std::vector<std::string> bodies_;
    std::vector<std::string> auth_;
};

struct SleepLog {
    std::vector<std::chrono::milliseconds> delays;
    RetryPolicy policy() {
        RetryPolicy r;
        r.sleeper = [this](std::chrono::milliseconds d) { delays.push_back(d); };
        return r;
    }
};

ProviderConfig plain_config(const std::string& url, int retries) {
    ProviderConfig c;
    c.endpoint = url;
    c.model_name = "m1";
    c.timeout_seconds = 2.0;
    c.max_retries = retries;
    c.request_template = {{"model", "{{model}}"}, {"prompt", "{{input}}"}};
    c.response_pointer = "/answer";
    return c;
}

class CountingCompletion final : public CompletionBackend {
public:
    explicit CountingCompletion(std::string reply) : reply_(std::move(reply)) {}
    std::string complete(const std::string&) override {
        ++calls;
        return reply_;
    }
    [[nodiscard]] std::string model_id() const override { return "counting"; }
    std::atomic<int> calls{0};

private:
    std::string reply_;
};

class ConstCaptioner final : public CaptionBackend {
public:
    explicit ConstCaptioner(std::string c) : c_(std::move(c)) {}
    std::string caption(const ImageRef&) override { return c_; }
    [[nodiscard]] std::string model_id() const override { return "const"; }

private:
    std::string c_;
};

}  // namespace

TEST_CASE("RetryPolicy doubles the delay and caps it") {
    RetryPolicy r;
    CHECK(r.delay_for(1) == 200ms);
    CHECK(r.delay_for(2) == 400ms);
    CHECK(r.delay_for(3) == 800ms);
    CHECK(r.delay_for(5) == 3200ms);
    CHECK(r.delay_for(6) == 5000ms);
    CHECK(r.delay_for(40) == 5000ms);
}

TEST_CASE("ProviderConfig validation and round trip") {
    auto c = plain_config("http://localhost:1/x", 3);
    CHECK_NOTHROW(c.validate());
    CHECK(ProviderConfig::from_json(c.to_json()).to_json() == c.to_json());
    c.max_retries = 11;
    CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
    c.max_retries = -1;
    CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
    c.max_retries = 0;
    c.timeout_seconds = 0;
    CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
    CHECK_THROWS_CODE(HttpJsonClient(plain_config("ftp://x", 1), {}), ErrorCode::InvalidConfig);
}

TEST_CASE("presets point at the usual response fields") {
    CHECK(chat_completion_preset("http://h/v1/chat/completions", "gpt").response_pointer ==
          "/choices/0/message/content");
    CHECK(embedding_preset("http://h/v1/embeddings", "e").response_pointer == "/data/0/embedding");
    CHECK(caption_preset("http://h/caption", "blip").response_pointer == "/caption");
}

TEST_CASE("HttpJsonClient retries 5xx and 429, then succeeds") {
    std::atomic<int> hits{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
        const int n = ++hits;
        if (n == 1) {
            res.status = 503;
        } else if (n == 2) {
            res.status = 429;
        } else {
            res.set_content(R"({"answer": "ok"})", "application/json");
        }
    });
    SleepLog sleeps;
    HttpJsonClient client(plain_config(server.url(), 3), sleeps.policy());
    CHECK(client.request("hello") == "ok");
    CHECK(client.attempts() == 3);
    CHECK(sleeps.delays == std::vector<std::chrono::milliseconds>{200ms, 400ms});
}

TEST_CASE("HttpJsonClient treats malformed bodies as retryable and gives up") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "text/plain");
    });
    SleepLog sleeps;
    HttpJsonClient client(plain_config(server.url(), 2), sleeps.policy());
    CHECK_THROWS_CODE(client.request("x"), ErrorCode::ProviderMalformedResponse);
    CHECK(client.attempts() == 3);
    CHECK(sleeps.delays.size() == 2);
}

TEST_CASE("HttpJsonClient: missing response field is malformed") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"other": 1})", "application/json");
    });
    SleepLog sleeps;
    HttpJsonClient client(plain_config(server.url(), 1), sleeps.policy());
    CHECK_THROWS_CODE(client.request("x"), ErrorCode::ProviderMalformedResponse);
    CHECK(client.attempts() == 2);
}

TEST_CASE("HttpJsonClient does not retry 4xx") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) { res.status = 400; });
    SleepLog sleeps;
    HttpJsonClient client(plain_config(server.url(), 5), sleeps.policy());
    CHECK_THROWS_CODE(client.request("x"), ErrorCode::ProviderMalformedResponse);
    CHECK(client.attempts() == 1);
    CHECK(sleeps.delays.empty());
}

TEST_CASE("unreachable endpoint times out after max_retries + 1 attempts") {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }  // closed again: nothing listens there now
    auto cfg = plain_config("http://127.0.0.1:" + std::to_string(port) + "/v1", 2);
    cfg.timeout_seconds = 0.2;
    SleepLog sleeps;
    HttpJsonClient client(cfg, sleeps.policy());
    CHECK_THROWS_CODE(client.request("x"), ErrorCode::ProviderTimeout);
    CHECK(client.attempts() == 3);
    CHECK(sleeps.delays == std::vector<std::chrono::milliseconds>{200ms, 400ms});
}

TEST_CASE("request template substitution is literal") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"answer": "fine"})", "application/json");
    });
    HttpJsonClient client(plain_config(server.url(), 0), {});
    const std::string input = "say {{model}} and \"quotes\"\nnewline";
    CHECK(client.request(input) == "fine");
    const auto body = json::parse(server.bodies().at(0));
    CHECK(body["model"] == "m1");
    CHECK(body["prompt"] == input);
}

TEST_CASE("API key comes from the named environment variable") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"answer": "k"})", "application/json");
    });
    auto cfg = plain_config(server.url(), 0);
    cfg.api_key_env_var = "CIRSYNTH_TEST_KEY";
    ::setenv("CIRSYNTH_TEST_KEY", "sekret", 1);
    HttpJsonClient client(cfg, {});
    (void)client.request("x");
    ::unsetenv("CIRSYNTH_TEST_KEY");
    (void)client.request("y");
    const auto auth = server.auth();
    CHECK(auth.at(0) == "Bearer sekret");
    CHECK(auth.at(1).empty());
}

TEST_CASE("HTTP backends decode their payloads") {
    LocalServer server([](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        if (req.path == "/caption") {
            res.set_content(json{{"caption", "img:" + body["image"].get<std::string>()}}.dump(), "application/json");
        } else if (req.path == "/embed") {
            res.set_content(R"({"data": [{"embedding": [0.5, -1.0, 2.0]}]})", "application/json");
        } else {
            res.set_content(R"({"choices": [{"message": {"content": "make it blue"}}]})", "application/json");
        }
    });
    HttpCaptioner cap(caption_preset(server.url("/caption"), "cap"), {});
    CHECK(cap.caption({"id7", {}}) == "img:id7");
    CHECK(cap.caption({"id7", "abc"}) == "img:YWJj");  // base64 of the bytes

    HttpEmbedder emb(embedding_preset(server.url("/embed"), "e"), {});
    CHECK(emb.embed("t").raw() == std::vector<double>{0.5, -1.0, 2.0});

    auto chat = chat_completion_preset(server.url("/chat"), "llm");
    chat.api_key_env_var.clear();
    HttpCompletion llm(chat, {});
    CHECK(llm.complete("p") == "make it blue");
}

TEST_CASE("HttpEmbedder rejects non-numeric vectors") {
    LocalServer server([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"data": [{"embedding": ["a"]}]})", "application/json");
    });
    HttpEmbedder emb(embedding_preset(server.url(), "e"), {});
    CHECK_THROWS_CODE(emb.embed("t"), ErrorCode::ProviderMalformedResponse);
}

TEST_CASE("ResponseCache persists across instances") {
    testing::TempDir dir("cache");
    const auto k1 = ResponseCache::make_key("caption", "m", "payload");
    const auto k2 = ResponseCache::make_key("embedding", "m", "payload");
    CHECK(k1 != k2);
    CHECK(k1 != ResponseCache::make_key("caption", "m2", "payload"));
    {
        ResponseCache c(dir.path());
        CHECK_FALSE(c.get(k1).has_value());
        c.put(k1, std::string("a cat"));
        c.put(k2, std::vector<double>{0.1, 1.0 / 3.0});
    }
    ResponseCache again(dir.path());
    CHECK(std::get<std::string>(*again.get(k1)) == "a cat");
    CHECK(std::get<std::vector<double>>(*again.get(k2)) == std::vector<double>{0.1, 1.0 / 3.0});
}

TEST_CASE("ResponseCache ignores torn files") {
    testing::TempDir dir("cache");
    const auto key = ResponseCache::make_key("caption", "m", "x");
    {
        std::ofstream out(dir / (key + ".json"));
        out << "{\"key\": \"";
    }
    ResponseCache c(dir.path());
    CHECK_FALSE(c.get(key).has_value());
}

TEST_CASE("gateway counts only cache misses as provider calls") {
    auto gw = ProviderGateway::mock();
    const auto a = gw.caption_image({"img1", {}});
    const auto b = gw.caption_image({"img1", {}});
    CHECK(a == b);
    CHECK(gw.stats().caption_calls == 1);
    CHECK(gw.stats().cache_hits == 1);

    (void)gw.embed_text("a red dog");
    (void)gw.embed_text("a red dog");
    (void)gw.generate_instruction(build_prompt("x", "y"));
    CHECK(gw.stats().embedding_calls == 1);
    CHECK(gw.stats().completion_calls == 1);
    CHECK(gw.stats().total_calls() == 3);
}

TEST_CASE("gateway with a warm disk cache makes zero provider calls") {
    testing::TempDir dir("warm");
    {
        auto gw = ProviderGateway::mock(32, MockTextEmbedder::Mode::BagOfWords, dir.path());
        (void)gw.caption_image({"a", {}});
        (void)gw.generate_instruction("Source sentence: s\nTarget sentence: t\n");
        (void)gw.embed_text("some text");
    }
    auto gw = ProviderGateway::mock(32, MockTextEmbedder::Mode::BagOfWords, dir.path());
    (void)gw.caption_image({"a", {}});
    (void)gw.generate_instruction("Source sentence: s\nTarget sentence: t\n");
    (void)gw.embed_text("some text");
    CHECK(gw.stats().total_calls() == 0);
    CHECK(gw.stats().cache_hits == 3);
}

TEST_CASE("gateway error contract") {
    auto blank = std::make_shared<CountingCompletion>("  \n ");
    ProviderGateway gw(std::make_shared<ConstCaptioner>(" \"\" "), blank, std::make_shared<MockTextEmbedder>(8),
                       nullptr);
    CHECK_THROWS_CODE(gw.generate_instruction(""), ErrorCode::InvalidArgument);
    CHECK(blank->calls == 0);
    CHECK_THROWS_CODE(gw.generate_instruction("p"), ErrorCode::EmptyCompletion);
    CHECK_THROWS_CODE(gw.caption_image({"x", {}}), ErrorCode::ProviderMalformedResponse);
    CHECK_THROWS_CODE(gw.embed_text(""), ErrorCode::InvalidArgument);

    // A failed completion is not cached: the next call reaches the backend again.
    CHECK_THROWS_CODE(gw.generate_instruction("p"), ErrorCode::EmptyCompletion);
    CHECK(blank->calls == 2);
}

TEST_CASE("clean_instruction") {
    CHECK(clean_instruction("  \"Make it red.\"  ") == "Make it red.");
    CHECK(clean_instruction("first line\nsecond line") == "first line second line");
    CHECK(clean_instruction("a\r\n\r\nb") == "a b");
    CHECK(clean_instruction("`code`") == "code");
    CHECK(clean_instruction("two  spaces") == "two spaces");
    CHECK(clean_instruction(" \n\t ").empty());
}

TEST_CASE("mock backends are deterministic") {
    MockCaptioner cap;
    CHECK(cap.caption({"q", {}}) == cap.caption({"q", {}}));
    CHECK(cap.caption({"q", {}}).starts_with("a "));
    CHECK(cap.caption({"q", "bytes"}) == cap.caption({"other-id", "bytes"}));  // keyed by content

    MockInstructionGenerator llm;
    CHECK(llm.complete(build_prompt("a red dog", "a blue cat")) == "change a red dog to a blue cat");

    MockTextEmbedder bow(16, MockTextEmbedder::Mode::BagOfWords);
    const auto e = bow.embed("A red dog");
    CHECK(e.dim() == 16);
    CHECK(e.norm() == doctest::Approx(1.0));
    CHECK(e == bow.embed("a RED dog!"));  // case and punctuation do not matter
    MockTextEmbedder whole(16, MockTextEmbedder::Mode::WholeText);
    CHECK(whole.embed("a red dog") != whole.embed("a RED dog"));
    CHECK(bow.model_id() != whole.model_id());
}
