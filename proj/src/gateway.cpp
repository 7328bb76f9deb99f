#include "demopos/gateway.hpp"

#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace demopos {
namespace {

using nlohmann::json;

json prompt_to_messages(const ChatPrompt& prompt) {
  json messages = json::array();
  for (const ChatMessage& m : prompt.messages) {
    messages.push_back(
        {{"role", m.role == Role::kSystem ? "system" : "user"}, {"content", m.content}});
  }
  return messages;
}

json canonical_request(const std::string& model_name, const ChatPrompt& prompt,
                       const GenerationParams& params) {
  return json{{"model", model_name},
              {"messages", prompt_to_messages(prompt)},
              {"temperature", params.temperature},
              {"top_p", params.top_p},
              {"max_tokens", params.max_new_tokens}};
}

}  // namespace

int default_max_new_tokens(TaskKind kind) {
  return is_label_constrained(kind) ? 50 : 500;
}

std::string to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStop: return "stop";
    case FinishReason::kLength: return "length";
    case FinishReason::kError: return "error";
  }
  throw Error("unknown finish reason");
}

FinishReason finish_reason_from_string(const std::string& name) {
  if (name == "stop") return FinishReason::kStop;
  if (name == "length") return FinishReason::kLength;
  if (name == "error") return FinishReason::kError;
  throw SchemaError("unknown finish reason: " + name);
}

std::size_t estimate_tokens(const ChatPrompt& prompt) {
  std::size_t chars = 0;
  for (const ChatMessage& m : prompt.messages) chars += m.content.size();
  return (chars + 2) / 3 + 8 * prompt.messages.size();
}

std::string request_digest(const std::string& model_name, const ChatPrompt& prompt,
                           const GenerationParams& params) {
  return sha256_hex(canonical_request(model_name, prompt, params).dump());
}

HttpBackend::HttpBackend(EndpointConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) {
    throw ConfigError("endpoint base_url is empty");
  }
  // httplib clients take an origin only; keep any path prefix (e.g. /v1)
  // aside and prepend it per request.
  std::string url = config_.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  std::size_t scheme = url.find("://");
  std::size_t path = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path == std::string::npos) {
    origin_ = url;
  } else {
    origin_ = url.substr(0, path);
    path_prefix_ = url.substr(path);
  }
  if (const char* key = std::getenv(config_.api_key_env.c_str())) {
    api_key_ = key;
  }
}

ModelResponse HttpBackend::send(const ChatPrompt& prompt, const GenerationParams& params) {
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout_sec, 0);
  client.set_read_timeout(config_.timeout_sec, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }

  json body = canonical_request(params.model_name, prompt, params);
  auto result =
      client.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
  if (!result) {
    throw TransportError("request failed: " + httplib::to_string(result.error()));
  }
  if (result->status >= 500) {
    throw TransportError("server error " + std::to_string(result->status));
  }
  if (result->status != 200) {
    throw GatewayError("endpoint returned " + std::to_string(result->status) + ": " +
                       result->body);
  }

  json reply = json::parse(result->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") || reply.at("choices").empty()) {
    throw GatewayError("malformed endpoint reply");
  }
  const json& choice = reply.at("choices").at(0);
  ModelResponse response;
  if (choice.contains("message") && choice.at("message").contains("content") &&
      choice.at("message").at("content").is_string()) {
    response.raw_text = choice.at("message").at("content").get<std::string>();
  } else {
    throw GatewayError("endpoint reply has no message content");
  }
  std::string finish = choice.value("finish_reason", "stop");
  response.finish_reason = finish == "length" ? FinishReason::kLength : FinishReason::kStop;
  return response;
}

ModelResponse ScriptedBackend::send(const ChatPrompt& prompt, const GenerationParams& params) {
  if (limited_.load()) {
    if (budget_.fetch_sub(1) <= 0) {
      budget_.fetch_add(1);
      throw TransportError("scripted backend budget exhausted");
    }
  }
  ModelResponse response;
  auto it = fixtures_.find(request_digest(params.model_name, prompt, params));
  if (it != fixtures_.end()) {
    response.raw_text = it->second;
    return response;
  }
  // Rules see the model name ahead of the prompt, so fixtures can script
  // per-model behavior.
  std::string text = "<model>\n" + params.model_name + "\n" + serialize_prompt(prompt);
  for (const auto& [pattern, reply] : rules_) {
    if (std::regex_search(text, pattern)) {
      response.raw_text = reply;
      return response;
    }
  }
  if (has_default_) {
    response.raw_text = default_reply_;
    return response;
  }
  throw GatewayError("scripted backend has no fixture for this prompt");
}

void ScriptedBackend::add_fixture(const std::string& digest, const std::string& reply) {
  fixtures_[digest] = reply;
}

void ScriptedBackend::add_rule(const std::string& pattern, const std::string& reply) {
  rules_.emplace_back(std::regex(pattern), reply);
}

void ScriptedBackend::set_default_reply(const std::string& reply) {
  default_reply_ = reply;
  has_default_ = true;
}

void ScriptedBackend::fail_after(long n) {
  budget_.store(n);
  limited_.store(true);
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw SchemaError("malformed fixture file: " + path.string());
  }
  auto backend = std::make_shared<ScriptedBackend>();
  if (j.contains("digests")) {
    for (const auto& [digest, reply] : j.at("digests").items()) {
      backend->add_fixture(digest, reply.get<std::string>());
    }
  }
  if (j.contains("rules")) {
    for (const auto& rule : j.at("rules")) {
      backend->add_rule(rule.at("match").get<std::string>(), rule.at("reply").get<std::string>());
    }
  }
  if (j.contains("default")) {
    backend->set_default_reply(j.at("default").get<std::string>());
  }
  return backend;
}

Gateway::Gateway(std::shared_ptr<Backend> backend, std::filesystem::path cache_dir,
                 RetryPolicy retry)
    : backend_(std::move(backend)), cache_dir_(std::move(cache_dir)), retry_(retry) {
  std::filesystem::create_directories(cache_dir_);
}

ModelResponse Gateway::send_with_retry(const ChatPrompt& prompt, const GenerationParams& params) {
  std::chrono::milliseconds delay = retry_.base_delay;
  for (int attempt = 0;; ++attempt) {
    try {
      backend_calls_.fetch_add(1);
      return backend_->send(prompt, params);
    } catch (const TransportError& e) {
      if (attempt >= retry_.max_retries) {
        throw GatewayError(std::string("giving up after retries: ") + e.what());
      }
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

ModelResponse Gateway::complete(const ChatPrompt& prompt, const GenerationParams& params,
                                std::size_t context_limit) {
  const std::string digest = request_digest(params.model_name, prompt, params);
  const std::filesystem::path entry = cache_dir_ / (digest + ".json");

  auto read_entry = [&]() -> std::optional<ModelResponse> {
    if (!std::filesystem::exists(entry)) return std::nullopt;
    nlohmann::json j = nlohmann::json::parse(read_file(entry), nullptr, false);
    if (j.is_discarded()) {
      throw GatewayError("corrupt cache entry: " + entry.string());
    }
    ModelResponse response;
    response.raw_text = j.at("response").at("raw_text").get<std::string>();
    response.finish_reason =
        finish_reason_from_string(j.at("response").at("finish_reason").get<std::string>());
    response.cached = true;
    return response;
  };

  if (auto cached = read_entry()) return *cached;

  if (estimate_tokens(prompt) + static_cast<std::size_t>(params.max_new_tokens) > context_limit) {
    ModelResponse response;
    response.finish_reason = FinishReason::kError;
    response.error = "over_length";
    return response;
  }

  // Only one thread fetches a given digest; the rest wait and replay the
  // cache entry it writes.
  {
    std::unique_lock<std::mutex> lock(mutex_);
    while (inflight_.count(digest)) cv_.wait(lock);
    if (auto cached = read_entry()) return *cached;
    inflight_.insert(digest);
  }

  try {
    auto start = std::chrono::steady_clock::now();
    ModelResponse response = send_with_retry(prompt, params);
    response.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start)
                              .count();
    nlohmann::json record = {
        {"request", canonical_request(params.model_name, prompt, params)},
        {"response",
         {{"raw_text", response.raw_text}, {"finish_reason", to_string(response.finish_reason)}}},
        {"timestamp", std::chrono::duration_cast<std::chrono::seconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count()}};
    write_file_atomic(entry, record.dump(2) + "\n");
    {
      std::lock_guard<std::mutex> lock(mutex_);
      inflight_.erase(digest);
    }
    cv_.notify_all();
    return response;
  } catch (...) {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      inflight_.erase(digest);
    }
    cv_.notify_all();
    throw;
  }
}

}  // namespace demopos
