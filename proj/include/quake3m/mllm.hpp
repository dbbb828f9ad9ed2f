#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "quake3m/errors.hpp"

namespace quake3m::mllm {

class MllmError : public Error {
 public:
  using Error::Error;
};

// Live mode requires QUAKE3M_API_KEY_<NAME> in the environment.
class CredentialError : public MllmError {
 public:
  using MllmError::MllmError;
};

// Transient failures (429/5xx/timeout) exhausted the retry budget.
class RetriesExhaustedError : public MllmError {
 public:
  using MllmError::MllmError;
};

// Replay transcript has no entry for the request tag.
class ReplayKeyMissingError : public MllmError {
 public:
  using MllmError::MllmError;
};

class TranscriptError : public MllmError {
 public:
  using MllmError::MllmError;
};

constexpr std::size_t kMaxImageBytes = 8 * 1024 * 1024;  // encoded size cap per image

struct ImagePayload {
  std::string media_type;   // e.g. image/png (data payloads)
  std::string base64_data;  // set for local images
  std::string url;          // set for remote images, passed through
};

struct Part {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string text;
  ImagePayload image;

  static Part make_text(std::string t);
  static Part make_image(ImagePayload p);
};

struct ChatRequest {
  std::string system_text;  // empty = no system message
  std::vector<Part> user_parts;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::string request_tag;  // content hash; see make_request_tag
};

enum class FinishReason { complete, truncated, refused };

const char* finish_reason_name(FinishReason r);
std::optional<FinishReason> finish_reason_from_name(std::string_view name);

struct ChatResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::complete;
  int latency_ms = 0;
};

enum class BackendMode { live, replay, script };

const char* backend_mode_name(BackendMode m);
std::optional<BackendMode> backend_mode_from_name(std::string_view name);

struct BackendProfile {
  std::string name;
  std::string base_url;
  std::string model_id;
  int requests_per_minute = 60;
  int max_retries = 3;
  BackendMode mode = BackendMode::script;
  std::string transcript_path;  // replay source
  int max_in_flight = 8;
};

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);

// Stable content hash over (model_id, system_text, user_parts, temperature);
// insensitive to field ordering by construction.
std::string make_request_tag(const std::string& model_id, const ChatRequest& request);

// Canonical serialized request (includes max_output_tokens); hashed into the
// transcript's request_sha256 field.
std::string canonical_request_json(const std::string& model_id, const ChatRequest& request);

// Injectable HTTP layer. The live client owns one; tests substitute fakes.
class Transport {
 public:
  struct HttpResult {
    int status = 0;       // 0 with timeout=true means no response
    std::string body;
    bool timeout = false;
  };

  virtual ~Transport() = default;
  virtual HttpResult post_json(const std::string& base_url, const std::string& path,
                               const std::string& bearer_token, const std::string& body) = 0;
};

// cpp-httplib backed transport; 30 s connect / 120 s read timeouts.
std::unique_ptr<Transport> make_http_transport();

using ScriptResponder = std::function<ChatResponse(const ChatRequest&)>;

// Test/clock seams. Defaults use the real clock, real sleep, a seeded RNG for
// retry jitter and getenv for credentials.
struct ClientHooks {
  std::function<std::chrono::steady_clock::time_point()> now;
  std::function<void(std::chrono::milliseconds)> sleep;
  std::function<double()> jitter;  // uniform in [0,1)
  std::function<std::optional<std::string>(const std::string& backend_name)> credential;
};

class ChatClient;

// RAII transcript recorder; recording stops when the handle is destroyed.
class RecordingHandle {
 public:
  RecordingHandle() = default;
  RecordingHandle(RecordingHandle&&) noexcept;
  RecordingHandle& operator=(RecordingHandle&&) noexcept;
  RecordingHandle(const RecordingHandle&) = delete;
  RecordingHandle& operator=(const RecordingHandle&) = delete;
  ~RecordingHandle();

  bool active() const { return client_ != nullptr; }

 private:
  friend class ChatClient;
  explicit RecordingHandle(ChatClient* client) : client_(client) {}
  ChatClient* client_ = nullptr;
};

// Provider-agnostic chat-completion client. Safe for concurrent use; the rate
// limiter, transcript writer and script queue are internally synchronized.
// Replay and script modes never touch the transport.
class ChatClient {
 public:
  explicit ChatClient(BackendProfile profile);
  ChatClient(BackendProfile profile, std::unique_ptr<Transport> transport, ClientHooks hooks = {});
  ~ChatClient();

  const BackendProfile& profile() const { return profile_; }

  // Script mode: either a content-keyed responder (deterministic under
  // concurrency) or a FIFO of canned responses for sequential tests.
  void set_script(ScriptResponder responder);
  void push_scripted(ChatResponse response);

  // Appends one JSONL line per completed call while the handle lives.
  // Requires live mode and a writable sink.
  RecordingHandle record_transcript(const std::filesystem::path& sink);

  ChatResponse complete(const ChatRequest& request);

  // Number of completed calls (all modes); used by orchestration tests.
  int call_count() const;

 private:
  friend class RecordingHandle;

  ChatResponse complete_live(const ChatRequest& request);
  ChatResponse complete_replay(const ChatRequest& request);
  ChatResponse complete_script(const ChatRequest& request);
  void rate_limit_acquire();
  void record_line(const ChatRequest& request, const ChatResponse& response);
  void stop_recording();
  void load_transcript();

  BackendProfile profile_;
  std::unique_ptr<Transport> transport_;
  ClientHooks hooks_;

  mutable std::mutex mutex_;
  std::deque<std::chrono::steady_clock::time_point> issue_times_;
  std::deque<ChatResponse> script_queue_;
  ScriptResponder script_responder_;
  std::unordered_map<std::string, ChatResponse> replay_map_;
  bool replay_loaded_ = false;
  int call_count_ = 0;
  int in_flight_ = 0;

  std::mutex record_mutex_;
  std::unique_ptr<std::ofstream> record_sink_;
};

}  // namespace quake3m::mllm
