#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "quake3m/corpus.hpp"
#include "quake3m/errors.hpp"
#include "quake3m/geo.hpp"
#include "quake3m/mllm.hpp"

#include <nlohmann/json_fwd.hpp>

namespace quake3m::prompts {

// Raised when a prompt cannot be rendered (e.g. image modality without an
// image attachment).
class PromptError : public Error {
 public:
  using Error::Error;
};

// Model output could not be turned into a verdict. Carries the offending raw
// text for diagnostics.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw) : Error(message), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

class NoJsonObjectError : public ParseError {
 public:
  using ParseError::ParseError;
};

class SchemaViolationError : public ParseError {
 public:
  using ParseError::ParseError;
};

enum class Modality { text_only, image_only, fusion };

// CLI tokens: text | image | fusion.
const char* modality_name(Modality m);
std::optional<Modality> modality_from_name(std::string_view name);

enum class DamageType { Interior, Exterior, Both, None };

const char* damage_type_token(DamageType t);
std::optional<DamageType> damage_type_from_token(std::string_view token);

struct DamageVerdict {
  int human_impact = 0;          // 0 or 1
  DamageType damage_type = DamageType::None;
  int damage_level = 0;          // 0..10; 0 = no damage signal, joins as MMI 1
  double confidence = 0.0;       // clamped to [0, 1]
  std::string reasoning;

  bool operator==(const DamageVerdict&) const = default;
};

// MMI level used for aggregation/correlation: damage_level with 0 mapped to 1.
int verdict_mmi(const DamageVerdict& v);

inline constexpr std::string_view kNoLocationSentinel = "No";

struct LocationVerdict {
  std::string location;  // "No" sentinel when the model could not place the post
  std::string reasoning;

  bool is_no() const { return location == kNoLocationSentinel; }
};

struct EventVerdict {
  bool is_event_related = false;
  std::string reasoning;
};

// One damage-assessment prompt version. v1 is the canonical text+image fusion
// template; v2..v7 are its fixed paraphrases. template_text is the full
// fusion-form text with the {tweet} placeholder intact.
struct PromptVersion {
  std::string id;  // "v1".."v7"
  std::string template_text;
};

const std::array<PromptVersion, 7>& prompt_versions();
const PromptVersion& prompt_version(std::string_view id);  // throws ConfigError on unknown id

std::string render_location_prompt(const corpus::TweetRecord& record);
std::string render_event_prompt(const corpus::TweetRecord& record, const geo::EventConfig& event);

// Builds the full chat request for one damage assessment. text_only drops the
// image block and attachments; image_only drops the tweet-text block; fusion
// keeps both. Image media are loaded from local paths (base64, capped at
// 8 MiB encoded) or passed through as URLs. Throws PromptError when the
// modality needs an image and the record has none.
mllm::ChatRequest render_damage_prompt(const corpus::TweetRecord& record, Modality modality,
                                       const PromptVersion& version);

// Extraction pipeline: strip code fences, locate the first balanced {...},
// parse with lightweight repairs (single quotes, unquoted keys, trailing
// commas), coerce numeric strings, clamp confidence, validate ranges and
// tokens. Never throws anything but ParseError subclasses; safe on arbitrary
// bytes.
DamageVerdict parse_damage_response(std::string_view raw);
LocationVerdict parse_location_response(std::string_view raw);
EventVerdict parse_event_response(std::string_view raw);

// Canonical output object with the exact wire keys (human_impact,
// damage_type, damage_level, reasoning, confidence). Round-trips through
// parse_damage_response.
nlohmann::ordered_json verdict_to_json(const DamageVerdict& v);

// Instruction appended for the single re-ask after a parse failure.
inline constexpr std::string_view kReaskSuffix = "Return only the JSON object.";

}  // namespace quake3m::prompts
