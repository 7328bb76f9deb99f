#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <string>
#include <unordered_set>
#include <vector>

#include "demopos/corpus.hpp"
#include "demopos/prompting.hpp"

namespace demopos {

struct GenerationParams {
  double temperature = 0.0;
  double top_p = 1.0;
  int max_new_tokens = 50;
  std::string model_name;
};

/// 50 tokens for label tasks, 500 for generative ones.
int default_max_new_tokens(TaskKind kind);

enum class FinishReason { kStop, kLength, kError };

std::string to_string(FinishReason reason);
FinishReason finish_reason_from_string(const std::string& name);

struct ModelResponse {
  std::string raw_text;
  FinishReason finish_reason = FinishReason::kStop;
  long latency_ms = 0;
  bool cached = false;
  /// Set when finish_reason is kError; "over_length" marks a skipped prompt.
  std::string error;

  bool over_length() const { return finish_reason == FinishReason::kError && error == "over_length"; }
};

/// Conservative upper bound: ceil(total characters / 3) plus 8 per message.
/// Exact tokenization is model-specific and out of scope.
std::size_t estimate_tokens(const ChatPrompt& prompt);

/// Content digest over (model, messages, generation params). Any byte change
/// yields a different digest.
std::string request_digest(const std::string& model_name, const ChatPrompt& prompt,
                           const GenerationParams& params);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ModelResponse send(const ChatPrompt& prompt, const GenerationParams& params) = 0;
};

struct EndpointConfig {
  std::string base_url;
  std::string api_key_env = "AUDIT_API_KEY";
  long timeout_sec = 120;
};

/// Chat-completions HTTP backend. POSTs {model, messages, temperature, top_p,
/// max_tokens} to {base_url}/chat/completions and reads
/// choices[0].message.content. 5xx and transport failures surface as
/// TransportError so the gateway can retry them; everything else is fatal.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(EndpointConfig config);
  ModelResponse send(const ChatPrompt& prompt, const GenerationParams& params) override;

 private:
  EndpointConfig config_;
  std::string origin_;
  std::string path_prefix_;
  std::string api_key_;
};

/// Offline stand-in that replays canned outputs. Responses are looked up by
/// exact request digest first, then by the first regex rule matching the
/// serialized prompt, then the default reply.
class ScriptedBackend : public Backend {
 public:
  ModelResponse send(const ChatPrompt& prompt, const GenerationParams& params) override;

  void add_fixture(const std::string& digest, const std::string& reply);
  void add_rule(const std::string& pattern, const std::string& reply);
  void set_default_reply(const std::string& reply);

  /// Test hook: throw TransportError on every send after the first n.
  void fail_after(long n);

  /// Fixture file: {"digests": {hex: reply}, "rules": [{"match","reply"}],
  /// "default": reply}.
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

 private:
  std::map<std::string, std::string> fixtures_;
  std::vector<std::pair<std::regex, std::string>> rules_;
  std::string default_reply_;
  bool has_default_ = false;
  std::atomic<bool> limited_{false};
  std::atomic<long> budget_{0};
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{1000};  // doubles per retry: 1s/2s/4s
};

/// Deterministic completion front-end: persistent response cache keyed by
/// request digest, length guard, bounded retries. Shareable across worker
/// threads; each digest is fetched from the backend at most once.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, std::filesystem::path cache_dir,
          RetryPolicy retry = {});

  /// Returns the cached response when the digest is known; otherwise performs
  /// the request and persists it. Prompts whose estimated length plus
  /// max_new_tokens exceeds context_limit come back as an "over_length" error
  /// without touching the backend, and are not cached.
  ModelResponse complete(const ChatPrompt& prompt, const GenerationParams& params,
                         std::size_t context_limit);

  long backend_calls() const { return backend_calls_.load(); }

 private:
  ModelResponse send_with_retry(const ChatPrompt& prompt, const GenerationParams& params);

  std::shared_ptr<Backend> backend_;
  std::filesystem::path cache_dir_;
  RetryPolicy retry_;
  std::atomic<long> backend_calls_{0};

  std::mutex mutex_;
  std::condition_variable cv_;
  std::unordered_set<std::string> inflight_;
};

}  // namespace demopos
