#include "quake3m/prompts.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prompt_templates.hpp"
#include "quake3m/text.hpp"

namespace quake3m::prompts {

namespace {

using nlohmann::json;

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

// Shortest round-trip decimal form ("34.05", not "34.050000").
std::string format_coord(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string media_type_for(const std::string& uri) {
  auto dot = uri.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : uri.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == "jpg" || ext == "jpeg") return "image/jpeg";
  if (ext == "gif") return "image/gif";
  if (ext == "webp") return "image/webp";
  if (ext == "bmp") return "image/bmp";
  return "image/png";
}

mllm::ImagePayload load_image(const corpus::MediaRef& ref) {
  mllm::ImagePayload payload;
  if (ref.uri.rfind("http://", 0) == 0 || ref.uri.rfind("https://", 0) == 0) {
    payload.url = ref.uri;
    return payload;
  }
  std::ifstream in(ref.uri, std::ios::binary);
  if (!in) throw PromptError("cannot read image file: " + ref.uri);
  std::ostringstream buf;
  buf << in.rdbuf();
  payload.media_type = media_type_for(ref.uri);
  payload.base64_data = mllm::base64_encode(buf.str());
  if (payload.base64_data.size() > mllm::kMaxImageBytes) {
    throw PromptError("image exceeds 8 MiB after encoding: " + ref.uri);
  }
  return payload;
}

std::vector<corpus::MediaRef> image_refs(const corpus::TweetRecord& record) {
  std::vector<corpus::MediaRef> out;
  for (const auto& m : record.media) {
    if (m.kind == corpus::MediaKind::image) out.push_back(m);
  }
  return out;
}

// ---------------- response extraction & repair ----------------

// Candidate texts to scan for a JSON object: fenced bodies first, then the
// raw text.
std::vector<std::string_view> candidates(std::string_view raw) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t open = raw.find("```", pos);
    if (open == std::string_view::npos) break;
    std::size_t body = raw.find('\n', open + 3);
    if (body == std::string_view::npos) break;
    std::size_t close = raw.find("```", body);
    if (close == std::string_view::npos) break;
    out.push_back(raw.substr(body + 1, close - body - 1));
    pos = close + 3;
  }
  out.push_back(raw);
  return out;
}

// First balanced {...}, tracking strings (both quote styles) and escapes.
std::optional<std::string> first_balanced_object(std::string_view s) {
  for (std::size_t start = s.find('{'); start != std::string_view::npos;
       start = s.find('{', start + 1)) {
    int depth = 0;
    char quote = 0;
    bool escaped = false;
    for (std::size_t i = start; i < s.size(); ++i) {
      char c = s[i];
      if (quote != 0) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == quote) {
          quote = 0;
        }
        continue;
      }
      if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        --depth;
        if (depth == 0) return std::string(s.substr(start, i - start + 1));
      }
    }
  }
  return std::nullopt;
}

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

// Textual repairs for near-JSON: smart quotes to ASCII, single-quoted strings
// re-emitted double-quoted, unquoted keys quoted, trailing commas dropped,
// Python literals mapped.
std::string repair_jsonish(std::string_view s) {
  std::string ascii;
  ascii.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c == 0xE2 && i + 2 < s.size()) {
      unsigned char c1 = static_cast<unsigned char>(s[i + 1]);
      unsigned char c2 = static_cast<unsigned char>(s[i + 2]);
      if (c1 == 0x80 && (c2 == 0x9C || c2 == 0x9D)) {  // curly double quotes
        ascii.push_back('"');
        i += 3;
        continue;
      }
      if (c1 == 0x80 && (c2 == 0x98 || c2 == 0x99)) {  // curly single quotes
        ascii.push_back('\'');
        i += 3;
        continue;
      }
    }
    ascii.push_back(static_cast<char>(c));
    ++i;
  }

  std::string out;
  out.reserve(ascii.size());
  char quote = 0;
  bool escaped = false;
  char last_structural = 0;  // last non-space char outside strings
  for (std::size_t i = 0; i < ascii.size(); ++i) {
    char c = ascii[i];
    if (quote != 0) {
      if (escaped) {
        escaped = false;
        out.push_back(c);
      } else if (c == '\\') {
        if (quote == '\'' && i + 1 < ascii.size() && ascii[i + 1] == '\'') {
          out.push_back('\'');  // \' is not a JSON escape
          ++i;
        } else {
          escaped = true;
          out.push_back(c);
        }
      } else if (c == quote) {
        out.push_back('"');
        quote = 0;
      } else if (quote == '\'' && c == '"') {
        out += "\\\"";
      } else if (c == '\n') {
        out += "\\n";  // bare newline inside a string
      } else {
        out.push_back(c);
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
      out.push_back('"');
      last_structural = '"';
      continue;
    }
    if (c == ',') {
      // Drop if the next structural char closes a container.
      std::size_t j = i + 1;
      while (j < ascii.size() && std::isspace(static_cast<unsigned char>(ascii[j]))) ++j;
      if (j < ascii.size() && (ascii[j] == '}' || ascii[j] == ']')) {
        continue;
      }
      out.push_back(c);
      last_structural = c;
      continue;
    }
    if (is_ident_char(c) && (last_structural == '{' || last_structural == ',')) {
      // Possible unquoted key or Python literal.
      std::size_t j = i;
      while (j < ascii.size() && is_ident_char(ascii[j])) ++j;
      std::string word = ascii.substr(i, j - i);
      std::size_t k = j;
      while (k < ascii.size() && std::isspace(static_cast<unsigned char>(ascii[k]))) ++k;
      if (k < ascii.size() && ascii[k] == ':') {
        out.push_back('"');
        out += word;
        out.push_back('"');
        i = j - 1;
        last_structural = '"';
        continue;
      }
    }
    if (is_ident_char(c) && last_structural == ':') {
      std::size_t j = i;
      while (j < ascii.size() && is_ident_char(ascii[j])) ++j;
      std::string word = ascii.substr(i, j - i);
      if (word == "True") {
        out += "true";
        i = j - 1;
        last_structural = 'e';
        continue;
      }
      if (word == "False") {
        out += "false";
        i = j - 1;
        last_structural = 'e';
        continue;
      }
      if (word == "None") {
        out += "null";
        i = j - 1;
        last_structural = 'l';
        continue;
      }
    }
    out.push_back(c);
    if (!std::isspace(static_cast<unsigned char>(c))) last_structural = c;
  }
  return out;
}

json extract_object(std::string_view raw) {
  for (std::string_view candidate : candidates(raw)) {
    auto object_text = first_balanced_object(candidate);
    if (!object_text) continue;
    json j = json::parse(*object_text, nullptr, /*allow_exceptions=*/false);
    if (!j.is_discarded() && j.is_object()) return j;
    std::string repaired = repair_jsonish(*object_text);
    j = json::parse(repaired, nullptr, /*allow_exceptions=*/false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  throw NoJsonObjectError("no JSON object found in model output", std::string(raw));
}

std::optional<double> as_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  if (v.is_string()) {
    std::string s = text::trim(v.get<std::string>());
    if (s.empty()) return std::nullopt;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec == std::errc{} && ptr == end) return out;
    return std::nullopt;
  }
  return std::nullopt;
}

std::optional<int> as_int(const json& v) {
  auto d = as_number(v);
  if (!d) return std::nullopt;
  double rounded = std::nearbyint(*d);
  if (std::abs(rounded - *d) > 1e-9) return std::nullopt;
  return static_cast<int>(rounded);
}

const json& require_field(const json& j, const char* key, std::string_view raw) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    throw SchemaViolationError(std::string("missing field '") + key + "'", std::string(raw));
  }
  return *it;
}

}  // namespace

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::text_only: return "text";
    case Modality::image_only: return "image";
    case Modality::fusion: return "fusion";
  }
  return "fusion";
}

std::optional<Modality> modality_from_name(std::string_view name) {
  if (name == "text" || name == "text_only") return Modality::text_only;
  if (name == "image" || name == "image_only") return Modality::image_only;
  if (name == "fusion") return Modality::fusion;
  return std::nullopt;
}

const char* damage_type_token(DamageType t) {
  switch (t) {
    case DamageType::Interior: return "Interior";
    case DamageType::Exterior: return "Exterior";
    case DamageType::Both: return "Both";
    case DamageType::None: return "None";
  }
  return "None";
}

std::optional<DamageType> damage_type_from_token(std::string_view token) {
  std::string folded = text::fold_key(token);
  if (folded == "interior") return DamageType::Interior;
  if (folded == "exterior") return DamageType::Exterior;
  if (folded == "both") return DamageType::Both;
  if (folded == "none") return DamageType::None;
  return std::nullopt;
}

int verdict_mmi(const DamageVerdict& v) { return std::max(v.damage_level, 1); }

const std::array<PromptVersion, 7>& prompt_versions() {
  static const std::array<PromptVersion, 7> versions = [] {
    std::array<PromptVersion, 7> out;
    const char* ids[] = {"v1", "v2", "v3", "v4", "v5", "v6", "v7"};
    for (std::size_t i = 0; i < 7; ++i) {
      std::string full;
      for (const auto& seg : templates::damage_segments(ids[i])) full += seg.text;
      out[i] = PromptVersion{ids[i], std::move(full)};
    }
    return out;
  }();
  return versions;
}

const PromptVersion& prompt_version(std::string_view id) {
  for (const auto& v : prompt_versions()) {
    if (v.id == id) return v;
  }
  throw ConfigError("unknown prompt version: " + std::string(id));
}

std::string render_location_prompt(const corpus::TweetRecord& record) {
  std::string prompt(templates::location_prompt());
  prompt = replace_all(std::move(prompt), "{longitude}",
                       record.geotag ? format_coord(record.geotag->lon) : "None");
  prompt = replace_all(std::move(prompt), "{latitude}",
                       record.geotag ? format_coord(record.geotag->lat) : "None");
  prompt = replace_all(std::move(prompt), "{tweet}", record.text);
  prompt = replace_all(std::move(prompt), "{location}",
                       record.profile_location ? *record.profile_location : "None");
  return prompt;
}

std::string render_event_prompt(const corpus::TweetRecord& record, const geo::EventConfig& event) {
  std::string prompt(templates::event_prompt());
  prompt = replace_all(std::move(prompt), "{event}", event.event_name);
  prompt = replace_all(std::move(prompt), "{tweet}", record.text);
  return prompt;
}

mllm::ChatRequest render_damage_prompt(const corpus::TweetRecord& record, Modality modality,
                                       const PromptVersion& version) {
  std::vector<corpus::MediaRef> images = image_refs(record);
  if (modality != Modality::text_only && images.empty()) {
    throw PromptError("modality '" + std::string(modality_name(modality)) +
                      "' requires an image but record " + record.id + " has none");
  }

  std::string body;
  if (modality == Modality::image_only && version.id == "v1") {
    // The canonical prompt has a dedicated image-only form.
    body = std::string(templates::image_only_v1());
  } else {
    for (const auto& seg : templates::damage_segments(version.id)) {
      if (seg.kind == templates::Seg::text_block && modality == Modality::image_only) continue;
      if (seg.kind == templates::Seg::image_block && modality == Modality::text_only) continue;
      body += seg.text;
    }
  }
  if (modality != Modality::image_only) {
    body = replace_all(std::move(body), "{tweet}", record.text);
  }

  mllm::ChatRequest request;
  request.user_parts.push_back(mllm::Part::make_text(std::move(body)));
  if (modality != Modality::text_only) {
    for (const auto& ref : images) {
      request.user_parts.push_back(mllm::Part::make_image(load_image(ref)));
    }
  }
  return request;
}

DamageVerdict parse_damage_response(std::string_view raw) {
  json j = extract_object(raw);
  DamageVerdict v;

  auto impact = as_int(require_field(j, "human_impact", raw));
  if (!impact || (*impact != 0 && *impact != 1)) {
    throw SchemaViolationError("human_impact must be 0 or 1", std::string(raw));
  }
  v.human_impact = *impact;

  const json& type_field = require_field(j, "damage_type", raw);
  if (!type_field.is_string()) {
    throw SchemaViolationError("damage_type must be a string", std::string(raw));
  }
  auto type = damage_type_from_token(text::trim(type_field.get<std::string>()));
  if (!type) {
    throw SchemaViolationError("damage_type must be one of Interior/Exterior/Both/None, got '" +
                                   type_field.get<std::string>() + "'",
                               std::string(raw));
  }
  v.damage_type = *type;

  auto level = as_int(require_field(j, "damage_level", raw));
  if (!level) throw SchemaViolationError("damage_level must be an integer", std::string(raw));
  if (*level < 0 || *level > 10) {
    throw SchemaViolationError("damage_level out of range 0-10: " + std::to_string(*level),
                               std::string(raw));
  }
  v.damage_level = *level;

  auto confidence = as_number(require_field(j, "confidence", raw));
  if (!confidence) throw SchemaViolationError("confidence must be numeric", std::string(raw));
  v.confidence = std::clamp(*confidence, 0.0, 1.0);

  const json& reasoning = require_field(j, "reasoning", raw);
  if (!reasoning.is_string()) {
    throw SchemaViolationError("reasoning must be a string", std::string(raw));
  }
  v.reasoning = reasoning.get<std::string>();
  return v;
}

LocationVerdict parse_location_response(std::string_view raw) {
  json j = extract_object(raw);
  LocationVerdict v;
  const json& location = require_field(j, "location", raw);
  if (!location.is_string()) {
    throw SchemaViolationError("location must be a string", std::string(raw));
  }
  std::string value = text::trim(location.get<std::string>());
  if (value.empty()) throw SchemaViolationError("location must not be empty", std::string(raw));
  if (text::fold_key(value) == "no") value = std::string(kNoLocationSentinel);
  v.location = std::move(value);
  if (auto it = j.find("reasoning"); it != j.end() && it->is_string()) {
    v.reasoning = it->get<std::string>();
  }
  return v;
}

EventVerdict parse_event_response(std::string_view raw) {
  json j = extract_object(raw);
  EventVerdict v;
  const json& related = require_field(j, "is_event_related", raw);
  if (related.is_boolean()) {
    v.is_event_related = related.get<bool>();
  } else if (related.is_string()) {
    std::string folded = text::fold_key(related.get<std::string>());
    if (folded == "yes") {
      v.is_event_related = true;
    } else if (folded == "no") {
      v.is_event_related = false;
    } else {
      throw SchemaViolationError("is_event_related must be Yes or No, got '" +
                                     related.get<std::string>() + "'",
                                 std::string(raw));
    }
  } else {
    throw SchemaViolationError("is_event_related must be Yes or No", std::string(raw));
  }
  if (auto it = j.find("reasoning"); it != j.end() && it->is_string()) {
    v.reasoning = it->get<std::string>();
  }
  return v;
}

nlohmann::ordered_json verdict_to_json(const DamageVerdict& v) {
  nlohmann::ordered_json j;
  j["human_impact"] = v.human_impact;
  j["damage_type"] = damage_type_token(v.damage_type);
  j["damage_level"] = v.damage_level;
  j["reasoning"] = v.reasoning;
  j["confidence"] = v.confidence;
  return j;
}

}  // namespace quake3m::prompts
