#include "quake3m/mllm.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include <openssl/sha.h>

#include <nlohmann/json.hpp>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace quake3m::mllm {

namespace {

using nlohmann::json;

constexpr std::chrono::seconds kRetryBase{1};
constexpr std::chrono::seconds kRetryCap{60};

std::string to_upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

bool transient_status(int status) { return status == 429 || (status >= 500 && status < 600); }

json part_to_json(const Part& p) {
  if (p.kind == Part::Kind::text) {
    return json{{"type", "text"}, {"text", p.text}};
  }
  std::string url = p.image.url.empty()
                        ? "data:" + p.image.media_type + ";base64," + p.image.base64_data
                        : p.image.url;
  return json{{"type", "image_url"}, {"image_url", {{"url", url}}}};
}

// OpenAI-style chat-completions body; the single wire dialect spoken here.
std::string wire_body(const std::string& model_id, const ChatRequest& request) {
  json messages = json::array();
  if (!request.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_text}});
  }
  json content = json::array();
  for (const auto& p : request.user_parts) content.push_back(part_to_json(p));
  messages.push_back({{"role", "user"}, {"content", content}});
  json body{{"model", model_id},
            {"messages", messages},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens}};
  return body.dump();
}

FinishReason finish_from_wire(const std::string& s) {
  if (s == "length") return FinishReason::truncated;
  if (s == "content_filter" || s == "refusal") return FinishReason::refused;
  return FinishReason::complete;
}

ChatResponse parse_wire_response(const std::string& body) {
  json j = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw MllmError("malformed completion response body");
  }
  auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) {
    throw MllmError("completion response has no choices");
  }
  const json& first = (*choices)[0];
  ChatResponse resp;
  if (first.contains("message") && first["message"].contains("content") &&
      first["message"]["content"].is_string()) {
    resp.text = first["message"]["content"].get<std::string>();
  }
  if (first.contains("finish_reason") && first["finish_reason"].is_string()) {
    resp.finish_reason = finish_from_wire(first["finish_reason"].get<std::string>());
  }
  if (resp.text.empty() && resp.finish_reason != FinishReason::refused) {
    resp.finish_reason = FinishReason::refused;
  }
  return resp;
}

class HttpTransport : public Transport {
 public:
  HttpResult post_json(const std::string& base_url, const std::string& path,
                       const std::string& bearer_token, const std::string& body) override {
    // Split any path prefix off the base URL (e.g. https://host/v1).
    std::string origin = base_url;
    std::string prefix;
    if (auto scheme = base_url.find("://"); scheme != std::string::npos) {
      if (auto slash = base_url.find('/', scheme + 3); slash != std::string::npos) {
        origin = base_url.substr(0, slash);
        prefix = base_url.substr(slash);
        while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
      }
    }
    httplib::Client client(origin);
    client.set_connection_timeout(30, 0);
    client.set_read_timeout(120, 0);
    client.set_follow_location(true);
    httplib::Headers headers;
    if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
    auto res = client.Post(prefix + path, headers, body, "application/json");
    HttpResult out;
    if (!res) {
      out.timeout = true;
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }
};

ClientHooks with_defaults(ClientHooks hooks) {
  if (!hooks.now) hooks.now = [] { return std::chrono::steady_clock::now(); };
  if (!hooks.sleep) hooks.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (!hooks.jitter) {
    auto rng = std::make_shared<std::mt19937_64>(std::random_device{}());
    auto mtx = std::make_shared<std::mutex>();
    hooks.jitter = [rng, mtx] {
      std::lock_guard<std::mutex> lock(*mtx);
      return std::uniform_real_distribution<double>(0.0, 1.0)(*rng);
    };
  }
  if (!hooks.credential) {
    hooks.credential = [](const std::string& name) -> std::optional<std::string> {
      std::string var = "QUAKE3M_API_KEY_" + to_upper(name);
      const char* v = std::getenv(var.c_str());
      if (!v || !*v) return std::nullopt;
      return std::string(v);
    };
  }
  return hooks;
}

}  // namespace

Part Part::make_text(std::string t) {
  Part p;
  p.kind = Kind::text;
  p.text = std::move(t);
  return p;
}

Part Part::make_image(ImagePayload payload) {
  Part p;
  p.kind = Kind::image;
  p.image = std::move(payload);
  return p;
}

const char* finish_reason_name(FinishReason r) {
  switch (r) {
    case FinishReason::complete: return "complete";
    case FinishReason::truncated: return "truncated";
    case FinishReason::refused: return "refused";
  }
  return "complete";
}

std::optional<FinishReason> finish_reason_from_name(std::string_view name) {
  if (name == "complete") return FinishReason::complete;
  if (name == "truncated") return FinishReason::truncated;
  if (name == "refused") return FinishReason::refused;
  return std::nullopt;
}

const char* backend_mode_name(BackendMode m) {
  switch (m) {
    case BackendMode::live: return "live";
    case BackendMode::replay: return "replay";
    case BackendMode::script: return "script";
  }
  return "script";
}

std::optional<BackendMode> backend_mode_from_name(std::string_view name) {
  if (name == "live") return BackendMode::live;
  if (name == "replay") return BackendMode::replay;
  if (name == "script") return BackendMode::script;
  return std::nullopt;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0x0F]);
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  static const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                 static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(alphabet[(v >> 18) & 0x3F]);
    out.push_back(alphabet[(v >> 12) & 0x3F]);
    out.push_back(alphabet[(v >> 6) & 0x3F]);
    out.push_back(alphabet[v & 0x3F]);
    i += 3;
  }
  std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(alphabet[(v >> 18) & 0x3F]);
    out.push_back(alphabet[(v >> 12) & 0x3F]);
    out.append("==");
  } else if (rest == 2) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(alphabet[(v >> 18) & 0x3F]);
    out.push_back(alphabet[(v >> 12) & 0x3F]);
    out.push_back(alphabet[(v >> 6) & 0x3F]);
    out.push_back('=');
  }
  return out;
}

std::string canonical_request_json(const std::string& model_id, const ChatRequest& request) {
  json parts = json::array();
  for (const auto& p : request.user_parts) {
    if (p.kind == Part::Kind::text) {
      parts.push_back({{"kind", "text"}, {"text", p.text}});
    } else {
      parts.push_back({{"kind", "image"},
                       {"media_type", p.image.media_type},
                       {"data", p.image.base64_data},
                       {"url", p.image.url}});
    }
  }
  json j{{"model", model_id},
         {"system", request.system_text},
         {"parts", parts},
         {"temperature", request.temperature},
         {"max_output_tokens", request.max_output_tokens}};
  return j.dump();
}

std::string make_request_tag(const std::string& model_id, const ChatRequest& request) {
  // Same canonical form minus max_output_tokens, so the tag tracks content.
  json parts = json::array();
  for (const auto& p : request.user_parts) {
    if (p.kind == Part::Kind::text) {
      parts.push_back({{"kind", "text"}, {"text", p.text}});
    } else {
      parts.push_back({{"kind", "image"},
                       {"media_type", p.image.media_type},
                       {"data", p.image.base64_data},
                       {"url", p.image.url}});
    }
  }
  json j{{"model", model_id},
         {"system", request.system_text},
         {"parts", parts},
         {"temperature", request.temperature}};
  return sha256_hex(j.dump());
}

std::unique_ptr<Transport> make_http_transport() { return std::make_unique<HttpTransport>(); }

RecordingHandle::RecordingHandle(RecordingHandle&& other) noexcept : client_(other.client_) {
  other.client_ = nullptr;
}

RecordingHandle& RecordingHandle::operator=(RecordingHandle&& other) noexcept {
  if (this != &other) {
    if (client_) client_->stop_recording();
    client_ = other.client_;
    other.client_ = nullptr;
  }
  return *this;
}

RecordingHandle::~RecordingHandle() {
  if (client_) client_->stop_recording();
}

ChatClient::ChatClient(BackendProfile profile) : ChatClient(std::move(profile), nullptr) {}

ChatClient::ChatClient(BackendProfile profile, std::unique_ptr<Transport> transport, ClientHooks hooks)
    : profile_(std::move(profile)), transport_(std::move(transport)), hooks_(with_defaults(std::move(hooks))) {
  if (profile_.mode == BackendMode::live && !transport_) transport_ = make_http_transport();
  if (profile_.mode == BackendMode::replay) load_transcript();
}

ChatClient::~ChatClient() = default;

void ChatClient::set_script(ScriptResponder responder) {
  std::lock_guard<std::mutex> lock(mutex_);
  script_responder_ = std::move(responder);
}

void ChatClient::push_scripted(ChatResponse response) {
  std::lock_guard<std::mutex> lock(mutex_);
  script_queue_.push_back(std::move(response));
}

void ChatClient::load_transcript() {
  if (profile_.transcript_path.empty()) {
    throw TranscriptError("replay mode requires a transcript path");
  }
  std::ifstream in(profile_.transcript_path, std::ios::binary);
  if (!in) throw TranscriptError("cannot open transcript: " + profile_.transcript_path);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object() || !j.contains("tag") || !j.contains("response")) {
      throw TranscriptError("bad transcript line " + std::to_string(line_number) + " in " +
                            profile_.transcript_path);
    }
    ChatResponse resp;
    const json& r = j["response"];
    resp.text = r.value("text", std::string{});
    auto reason = finish_reason_from_name(r.value("finish_reason", "complete"));
    resp.finish_reason = reason.value_or(FinishReason::complete);
    replay_map_[j["tag"].get<std::string>()] = std::move(resp);
  }
  replay_loaded_ = true;
}

RecordingHandle ChatClient::record_transcript(const std::filesystem::path& sink) {
  if (profile_.mode != BackendMode::live) {
    throw TranscriptError("record_transcript requires live mode");
  }
  auto out = std::make_unique<std::ofstream>(sink, std::ios::binary | std::ios::app);
  if (!*out) throw TranscriptError("cannot open transcript sink: " + sink.string());
  std::lock_guard<std::mutex> lock(record_mutex_);
  record_sink_ = std::move(out);
  return RecordingHandle(this);
}

void ChatClient::stop_recording() {
  std::lock_guard<std::mutex> lock(record_mutex_);
  record_sink_.reset();
}

void ChatClient::record_line(const ChatRequest& request, const ChatResponse& response) {
  std::lock_guard<std::mutex> lock(record_mutex_);
  if (!record_sink_) return;
  json j{{"tag", request.request_tag},
         {"request_sha256", sha256_hex(canonical_request_json(profile_.model_id, request))},
         {"response",
          {{"text", response.text}, {"finish_reason", finish_reason_name(response.finish_reason)}}}};
  *record_sink_ << j.dump() << "\n";
  record_sink_->flush();
}

int ChatClient::call_count() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return call_count_;
}

void ChatClient::rate_limit_acquire() {
  using namespace std::chrono;
  int rpm = std::max(1, profile_.requests_per_minute);
  for (;;) {
    steady_clock::time_point wake;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto now = hooks_.now();
      while (!issue_times_.empty() && now - issue_times_.front() >= minutes(1)) {
        issue_times_.pop_front();
      }
      if (static_cast<int>(issue_times_.size()) < rpm) {
        issue_times_.push_back(now);
        return;
      }
      wake = issue_times_.front() + minutes(1);
    }
    auto now = hooks_.now();
    if (wake > now) hooks_.sleep(duration_cast<milliseconds>(wake - now) + milliseconds(1));
  }
}

ChatResponse ChatClient::complete(const ChatRequest& request) {
  if (request.user_parts.empty()) throw MllmError("chat request needs at least one user part");
  for (const auto& p : request.user_parts) {
    if (p.kind == Part::Kind::image && p.image.base64_data.size() > kMaxImageBytes) {
      throw MllmError("image payload exceeds 8 MiB after encoding");
    }
  }

  // Bounded in-flight fan-out shared by all callers.
  {
    std::unique_lock<std::mutex> lock(mutex_);
    while (in_flight_ >= std::max(1, profile_.max_in_flight)) {
      lock.unlock();
      hooks_.sleep(std::chrono::milliseconds(1));
      lock.lock();
    }
    ++in_flight_;
  }
  ChatResponse resp;
  try {
    switch (profile_.mode) {
      case BackendMode::live: resp = complete_live(request); break;
      case BackendMode::replay: resp = complete_replay(request); break;
      case BackendMode::script: resp = complete_script(request); break;
    }
  } catch (...) {
    std::lock_guard<std::mutex> lock(mutex_);
    --in_flight_;
    throw;
  }
  {
    std::lock_guard<std::mutex> lock(mutex_);
    --in_flight_;
    ++call_count_;
  }
  if (resp.text.empty()) resp.finish_reason = FinishReason::refused;
  record_line(request, resp);
  return resp;
}

ChatResponse ChatClient::complete_live(const ChatRequest& request) {
  auto credential = hooks_.credential(profile_.name);
  if (!credential) {
    throw CredentialError("no credential for backend '" + profile_.name + "' (set QUAKE3M_API_KEY_" +
                          to_upper(profile_.name) + ")");
  }
  std::string body = wire_body(profile_.model_id, request);

  int attempts_left = std::max(0, profile_.max_retries);
  int attempt = 0;
  for (;;) {
    rate_limit_acquire();
    auto started = hooks_.now();
    Transport::HttpResult http = transport_->post_json(profile_.base_url, "/chat/completions",
                                                       *credential, body);
    auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(hooks_.now() - started).count();

    bool transient = http.timeout || transient_status(http.status);
    if (!transient && http.status >= 200 && http.status < 300) {
      ChatResponse resp = parse_wire_response(http.body);
      resp.latency_ms = static_cast<int>(elapsed);
      return resp;
    }
    if (!transient) {
      throw MllmError("backend '" + profile_.name + "' returned HTTP " + std::to_string(http.status));
    }
    if (attempts_left == 0) {
      throw RetriesExhaustedError("backend '" + profile_.name + "' still failing after " +
                                  std::to_string(profile_.max_retries) + " retries (last status " +
                                  (http.timeout ? std::string("timeout") : std::to_string(http.status)) +
                                  ")");
    }
    --attempts_left;
    // Exponential backoff with full jitter: uniform over [0, min(cap, base*2^attempt)].
    auto ceiling = std::min<std::int64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(kRetryCap).count(),
        std::chrono::duration_cast<std::chrono::milliseconds>(kRetryBase).count() * (1LL << attempt));
    auto wait = std::chrono::milliseconds(static_cast<std::int64_t>(hooks_.jitter() * ceiling));
    hooks_.sleep(wait);
    ++attempt;
  }
}

ChatResponse ChatClient::complete_replay(const ChatRequest& request) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = replay_map_.find(request.request_tag);
  if (it == replay_map_.end()) {
    throw ReplayKeyMissingError("transcript has no entry for tag " + request.request_tag);
  }
  return it->second;
}

ChatResponse ChatClient::complete_script(const ChatRequest& request) {
  ScriptResponder responder;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (!script_queue_.empty()) {
      ChatResponse resp = std::move(script_queue_.front());
      script_queue_.pop_front();
      return resp;
    }
    responder = script_responder_;
  }
  if (!responder) throw MllmError("script mode has no programmed response");
  return responder(request);
}

}  // namespace quake3m::mllm
