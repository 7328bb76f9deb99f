#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "demopos/gateway.hpp"
#include "testutil.hpp"

using namespace demopos;

namespace {

ChatPrompt prompt_of(const std::string& system, const std::string& user) {
  return ChatPrompt{{{Role::kSystem, system}, {Role::kUser, user}}};
}

GenerationParams params_for(const std::string& model) {
  GenerationParams p;
  p.model_name = model;
  return p;
}

/// Counts calls and fails the first n of them with a transport error.
class FlakyBackend : public Backend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  ModelResponse send(const ChatPrompt&, const GenerationParams&) override {
    ++calls_;
    if (failures_-- > 0) {
      throw TransportError("synthetic outage");
    }
    ModelResponse r;
    r.raw_text = "ok";
    return r;
  }
  int calls() const { return calls_; }

 private:
  int failures_;
  int calls_ = 0;
};

}  // namespace

TEST_CASE("token estimate is the stated formula") {
  CHECK(estimate_tokens(prompt_of("", "")) == 16);
  std::string half(1500, 'x');
  CHECK(estimate_tokens(prompt_of(half, half)) == 1016);
}

TEST_CASE("token estimate is monotone in content length") {
  std::mt19937 rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string system = testutil::random_text(rng, 20);
    std::string user = testutil::random_text(rng, 20);
    std::size_t before = estimate_tokens(prompt_of(system, user));
    std::size_t after = estimate_tokens(prompt_of(system, user + " extra"));
    CHECK(after >= before);
  }
}

TEST_CASE("request digest is stable and content sensitive") {
  ChatPrompt prompt = prompt_of("sys", "hello");
  GenerationParams params = params_for("model-a");
  std::string digest = request_digest("model-a", prompt, params);
  CHECK(digest == request_digest("model-a", prompt, params));
  CHECK(digest != request_digest("model-b", prompt, params));
  CHECK(digest != request_digest("model-a", prompt_of("sys", "hello!"), params));
  GenerationParams hotter = params;
  hotter.temperature = 0.7;
  CHECK(digest != request_digest("model-a", prompt, hotter));
}

TEST_CASE("generation defaults follow the task kind") {
  CHECK(default_max_new_tokens(TaskKind::kClassification) == 50);
  CHECK(default_max_new_tokens(TaskKind::kMultipleChoice) == 50);
  CHECK(default_max_new_tokens(TaskKind::kExtractiveQa) == 500);
  CHECK(default_max_new_tokens(TaskKind::kSummarization) == 500);
  GenerationParams p;
  CHECK(p.temperature == 0.0);
  CHECK(p.top_p == 1.0);
}

TEST_CASE("scripted backend plays back digests, rules, and the default") {
  auto backend = std::make_shared<ScriptedBackend>();
  ChatPrompt prompt = prompt_of("sys", "What is 2+2?");
  GenerationParams params = params_for("m");
  backend->add_fixture(request_digest("m", prompt, params), R"({"Answer": "B"})");
  backend->add_rule("2\\+3", "five");
  backend->set_default_reply("dunno");

  CHECK(backend->send(prompt, params).raw_text == R"({"Answer": "B"})");
  CHECK(backend->send(prompt_of("sys", "What is 2+3?"), params).raw_text == "five");
  CHECK(backend->send(prompt_of("sys", "riddle me this"), params).raw_text == "dunno");

  ScriptedBackend strict;
  CHECK_THROWS_AS(strict.send(prompt, params), GatewayError);
}

TEST_CASE("cache returns identical bytes without a second backend call") {
  testutil::TempDir dir("gateway");
  auto backend = std::make_shared<ScriptedBackend>();
  backend->set_default_reply("answer text");
  Gateway gateway(backend, dir.file("cache"), RetryPolicy{3, std::chrono::milliseconds(0)});

  ChatPrompt prompt = prompt_of("sys", "user question");
  GenerationParams params = params_for("m");
  ModelResponse first = gateway.complete(prompt, params, 8192);
  CHECK(!first.cached);
  CHECK(gateway.backend_calls() == 1);

  ModelResponse second = gateway.complete(prompt, params, 8192);
  CHECK(second.cached);
  CHECK(second.raw_text == first.raw_text);
  CHECK(gateway.backend_calls() == 1);

  SUBCASE("a different digest misses the cache") {
    gateway.complete(prompt_of("sys", "user question?"), params, 8192);
    CHECK(gateway.backend_calls() == 2);
  }

  SUBCASE("cache entries hold the canonical request, response, and timestamp") {
    std::filesystem::path entry =
        dir.file("cache") / (request_digest("m", prompt, params) + ".json");
    REQUIRE(std::filesystem::exists(entry));
    nlohmann::json j = nlohmann::json::parse(read_file(entry));
    CHECK(j.at("request").at("model") == "m");
    CHECK(j.at("request").at("messages").size() == 2);
    CHECK(j.at("response").at("raw_text") == "answer text");
    CHECK(j.at("response").at("finish_reason") == "stop");
    CHECK(j.contains("timestamp"));
  }
}

TEST_CASE("over-length prompts are skipped, not sent or cached") {
  testutil::TempDir dir("gateway");
  auto backend = std::make_shared<ScriptedBackend>();
  backend->set_default_reply("x");
  Gateway gateway(backend, dir.file("cache"), RetryPolicy{3, std::chrono::milliseconds(0)});

  // ~24.6k chars -> estimate 8216 > 8192 even before max_new_tokens.
  ChatPrompt prompt = prompt_of(std::string(24600, 'a'), "q");
  GenerationParams params = params_for("m");
  CHECK(estimate_tokens(prompt) + params.max_new_tokens > 8192);
  ModelResponse r = gateway.complete(prompt, params, 8192);
  CHECK(r.finish_reason == FinishReason::kError);
  CHECK(r.over_length());
  CHECK(gateway.backend_calls() == 0);

  // A raised limit re-evaluates instead of replaying a cached skip.
  ModelResponse ok = gateway.complete(prompt, params, 100000);
  CHECK(ok.finish_reason == FinishReason::kStop);
  CHECK(gateway.backend_calls() == 1);
}

TEST_CASE("transient failures retry with bounded attempts") {
  testutil::TempDir dir("gateway");
  SUBCASE("recovers within the retry budget") {
    auto backend = std::make_shared<FlakyBackend>(2);
    Gateway gateway(backend, dir.file("cache"), RetryPolicy{3, std::chrono::milliseconds(0)});
    ModelResponse r = gateway.complete(prompt_of("s", "u"), params_for("m"), 8192);
    CHECK(r.raw_text == "ok");
    CHECK(backend->calls() == 3);
  }
  SUBCASE("gives up after the last retry") {
    auto backend = std::make_shared<FlakyBackend>(100);
    Gateway gateway(backend, dir.file("cache"), RetryPolicy{3, std::chrono::milliseconds(0)});
    CHECK_THROWS_AS(gateway.complete(prompt_of("s", "u"), params_for("m"), 8192), GatewayError);
    CHECK(backend->calls() == 4);  // initial attempt + 3 retries
  }
}

TEST_CASE("concurrent misses fetch each digest once") {
  testutil::TempDir dir("gateway");
  auto backend = std::make_shared<ScriptedBackend>();
  backend->set_default_reply("shared");
  Gateway gateway(backend, dir.file("cache"), RetryPolicy{3, std::chrono::milliseconds(0)});

  ChatPrompt prompt = prompt_of("sys", "same prompt");
  GenerationParams params = params_for("m");
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&]() {
      ModelResponse r = gateway.complete(prompt, params, 8192);
      if (r.raw_text != "shared") ++mismatches;
    });
  }
  for (std::thread& t : threads) t.join();
  CHECK(mismatches == 0);
  CHECK(gateway.backend_calls() == 1);
}

namespace {

/// Minimal chat-completions endpoint for exercising HttpBackend.
class LocalEndpoint {
 public:
  LocalEndpoint() {
    server_.Post("/v1/chat/completions",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   ++requests_;
                   if (fail_next_ > 0) {
                     --fail_next_;
                     res.status = 503;
                     return;
                   }
                   nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
                   if (body.is_discarded() || !body.contains("messages")) {
                     res.status = 400;
                     res.set_content("{\"error\": \"bad request\"}", "application/json");
                     return;
                   }
                   last_auth_ = req.get_header_value("Authorization");
                   std::string user = body.at("messages").back().at("content");
                   nlohmann::json reply = {
                       {"choices",
                        {{{"message",
                           {{"role", "assistant"},
                            {"content", "echo: " + user.substr(0, 16)}}},
                          {"finish_reason", "stop"}}}}};
                   res.set_content(reply.dump(), "application/json");
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this]() { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1";
  }
  void fail_next(int n) { fail_next_ = n; }
  int requests() const { return requests_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> fail_next_{0};
  std::atomic<int> requests_{0};
  std::string last_auth_;
};

}  // namespace

TEST_CASE("http backend speaks the chat-completions protocol") {
  LocalEndpoint endpoint;
  ::setenv("DEMOPOS_TEST_KEY", "sk-local-test", 1);

  EndpointConfig config;
  config.base_url = endpoint.base_url();  // includes a /v1 path prefix
  config.api_key_env = "DEMOPOS_TEST_KEY";
  HttpBackend backend(config);

  ModelResponse r = backend.send(prompt_of("be brief", "hello there"), params_for("m1"));
  CHECK(r.raw_text == "echo: hello there");
  CHECK(r.finish_reason == FinishReason::kStop);
  CHECK(endpoint.last_auth() == "Bearer sk-local-test");

  SUBCASE("5xx surfaces as a retryable transport error") {
    endpoint.fail_next(1);
    CHECK_THROWS_AS(backend.send(prompt_of("s", "u"), params_for("m1")), TransportError);
  }
  SUBCASE("the gateway retries 5xx responses through to success") {
    testutil::TempDir dir("gateway");
    endpoint.fail_next(2);
    int before = endpoint.requests();
    Gateway gateway(std::make_shared<HttpBackend>(config), dir.file("cache"),
                    RetryPolicy{3, std::chrono::milliseconds(0)});
    ModelResponse ok = gateway.complete(prompt_of("s", "retry me"), params_for("m1"), 8192);
    CHECK(ok.raw_text == "echo: retry me");
    CHECK(endpoint.requests() - before == 3);
  }
  SUBCASE("a connection failure is a transport error") {
    EndpointConfig dead;
    dead.base_url = "http://127.0.0.1:9/v1";
    dead.timeout_sec = 1;
    HttpBackend unreachable(dead);
    CHECK_THROWS_AS(unreachable.send(prompt_of("s", "u"), params_for("m")), TransportError);
  }
}

TEST_CASE("concurrent distinct prompts leave no torn cache files") {
  testutil::TempDir dir("gateway");
  auto backend = std::make_shared<ScriptedBackend>();
  backend->set_default_reply("r");
  Gateway gateway(backend, dir.file("cache"), RetryPolicy{3, std::chrono::milliseconds(0)});

  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t]() {
      for (int i = 0; i < 25; ++i) {
        gateway.complete(prompt_of("s", "q" + std::to_string(t) + "_" + std::to_string(i)),
                         params_for("m"), 8192);
      }
    });
  }
  for (std::thread& t : threads) t.join();
  int entries = 0;
  for (const auto& file : std::filesystem::directory_iterator(dir.file("cache"))) {
    nlohmann::json j = nlohmann::json::parse(read_file(file.path()), nullptr, false);
    CHECK(!j.is_discarded());
    ++entries;
  }
  CHECK(entries == 100);
}
