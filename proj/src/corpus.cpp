#include "quake3m/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "quake3m/text.hpp"

namespace quake3m::corpus {

namespace {

using nlohmann::json;

bool looks_like_image(std::string_view uri) {
  auto dot = uri.find_last_of('.');
  if (dot == std::string_view::npos) return false;
  std::string ext(uri.substr(dot + 1));
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == "jpg" || ext == "jpeg" || ext == "png" || ext == "gif" || ext == "webp" ||
         ext == "bmp";
}

MediaRef media_from_uri(std::string uri) {
  MediaRef ref;
  ref.kind = looks_like_image(uri) ? MediaKind::image : MediaKind::other;
  ref.uri = std::move(uri);
  return ref;
}

// Parses one JSONL object into a record; returns a reason string on failure.
std::optional<std::string> record_from_json(const json& j, TweetRecord& out) {
  if (!j.is_object()) return "not a JSON object";
  auto id_it = j.find("id");
  if (id_it == j.end()) return "missing id";
  if (id_it->is_string()) {
    out.id = id_it->get<std::string>();
  } else if (id_it->is_number_integer()) {
    out.id = std::to_string(id_it->get<std::int64_t>());
  } else {
    return "id is not a string";
  }
  if (out.id.empty()) return "empty id";
  auto text_it = j.find("text");
  if (text_it == j.end() || !text_it->is_string()) return "missing text";
  out.text = text_it->get<std::string>();

  if (auto it = j.find("created_at"); it != j.end() && it->is_string()) {
    out.created_at = it->get<std::string>();
  }
  auto lat_it = j.find("lat");
  auto lon_it = j.find("lon");
  bool has_lat = lat_it != j.end() && lat_it->is_number();
  bool has_lon = lon_it != j.end() && lon_it->is_number();
  if (has_lat != has_lon) return "lat/lon must both be present";
  if (has_lat) {
    GeoPoint p{lat_it->get<double>(), lon_it->get<double>()};
    if (!p.valid()) return "geotag out of range";
    out.geotag = p;
  }
  if (auto it = j.find("user_location"); it != j.end() && it->is_string()) {
    std::string loc = text::trim(it->get<std::string>());
    if (!loc.empty()) out.profile_location = loc;
  }
  if (auto it = j.find("media"); it != j.end()) {
    if (!it->is_array()) return "media is not an array";
    for (const auto& m : *it) {
      if (!m.is_string()) return "media entry is not a string";
      std::string uri = m.get<std::string>();
      if (uri.empty()) return "empty media uri";
      out.media.push_back(media_from_uri(std::move(uri)));
    }
  }
  out.script_hint = detect_script(out.text);
  return std::nullopt;
}

// RFC4180-ish CSV: quoted fields may contain commas, quotes ("" escapes) and
// newlines.
std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (any && (!field.empty() || !row.empty())) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string mapped_column(const CsvMapping* mapping, const std::string& canonical) {
  if (mapping) {
    auto it = mapping->columns.find(canonical);
    if (it != mapping->columns.end()) return it->second;
  }
  return canonical;
}

LoadResult load_csv(const std::filesystem::path& path, const CsvMapping* mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file: " + path.string());
  auto rows = read_csv(in);
  LoadResult result;
  if (rows.empty()) return result;

  std::map<std::string, std::size_t> header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) header[text::trim(rows[0][i])] = i;
  auto col = [&](const std::vector<std::string>& row, const std::string& canonical)
      -> std::optional<std::string> {
    auto it = header.find(mapped_column(mapping, canonical));
    if (it == header.end() || it->second >= row.size()) return std::nullopt;
    return row[it->second];
  };

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    json j = json::object();
    if (auto v = col(row, "id"); v && !v->empty()) j["id"] = *v;
    if (auto v = col(row, "text"); v) j["text"] = *v;
    if (auto v = col(row, "created_at"); v && !v->empty()) j["created_at"] = *v;
    auto lat = col(row, "lat");
    auto lon = col(row, "lon");
    if (lat && lon && !lat->empty() && !lon->empty()) {
      try {
        j["lat"] = std::stod(*lat);
        j["lon"] = std::stod(*lon);
      } catch (const std::exception&) {
        result.malformed.push_back({r + 1, "bad lat/lon"});
        continue;
      }
    }
    if (auto v = col(row, "user_location"); v && !v->empty()) j["user_location"] = *v;
    if (auto v = col(row, "media"); v && !v->empty()) {
      json arr = json::array();
      std::stringstream ss(*v);
      std::string uri;
      while (std::getline(ss, uri, '|')) {
        if (!uri.empty()) arr.push_back(uri);
      }
      j["media"] = arr;
    }
    TweetRecord rec;
    if (auto reason = record_from_json(j, rec)) {
      result.malformed.push_back({r + 1, *reason});
    } else {
      result.records.push_back(std::move(rec));
    }
  }
  return result;
}

LoadResult load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file: " + path.string());
  LoadResult result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      result.malformed.push_back({line_number, "invalid JSON"});
      continue;
    }
    TweetRecord rec;
    if (auto reason = record_from_json(j, rec)) {
      result.malformed.push_back({line_number, *reason});
    } else {
      result.records.push_back(std::move(rec));
    }
  }
  return result;
}

// Matching rule per term: CJK terms match as raw substrings (no delimiters to
// anchor on), anything else matches case-insensitively at word boundaries.
bool term_matches(std::string_view text_bytes, const std::string& term) {
  if (text::contains_cjk(term)) return text::contains_substring(text_bytes, term);
  return text::contains_word(text_bytes, term);
}

}  // namespace

const char* script_hint_name(ScriptHint h) {
  switch (h) {
    case ScriptHint::latin: return "latin";
    case ScriptHint::cjk: return "cjk";
    case ScriptHint::mixed: return "mixed";
    case ScriptHint::unknown: return "unknown";
  }
  return "unknown";
}

TermLibrary load_term_library(const std::filesystem::path& path) {
  // terms.<lang>.txt
  std::string stem = path.stem().string();  // "terms.en"
  std::string lang;
  if (auto dot = stem.find_last_of('.'); dot != std::string::npos) lang = stem.substr(dot + 1);
  if (lang.empty()) {
    throw CorpusError("cannot infer language tag from filename: " + path.string() +
                      " (expected terms.<lang>.txt)");
  }
  return load_term_library(path, lang);
}

TermLibrary load_term_library(const std::filesystem::path& path, std::string language_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open term library: " + path.string());
  TermLibrary lib;
  lib.language_tag = std::move(language_tag);
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string term = text::trim(line);
    if (term.empty() || term[0] == '#') continue;
    if (seen.insert(term).second) lib.terms.push_back(std::move(term));
  }
  if (lib.terms.empty()) throw CorpusError("term library is empty: " + path.string());
  return lib;
}

LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format,
                       const CsvMapping* mapping) {
  LoadResult result = format == CorpusFormat::jsonl ? load_jsonl(path) : load_csv(path, mapping);

  std::unordered_set<std::string> ids;
  std::vector<std::string> duplicates;
  for (const auto& rec : result.records) {
    if (!ids.insert(rec.id).second) duplicates.push_back(rec.id);
  }
  if (!duplicates.empty()) {
    std::string msg = "duplicate ids in " + path.string() + ":";
    for (const auto& id : duplicates) msg += " " + id;
    throw CorpusError(msg);
  }

  // The >10% sanity abort is a bulk-corpus guard; tiny fixtures with a bad
  // line or two must still load with the lines reported.
  std::size_t parsed_lines = result.records.size() + result.malformed.size();
  if (parsed_lines >= 10 && result.malformed.size() * 10 > parsed_lines) {
    std::string msg = "too many malformed lines in " + path.string() + ": " +
                      std::to_string(result.malformed.size()) + " of " +
                      std::to_string(parsed_lines) + "; first errors:";
    std::size_t shown = 0;
    for (const auto& m : result.malformed) {
      msg += " [line " + std::to_string(m.line_number) + ": " + m.reason + "]";
      if (++shown == 5) break;
    }
    throw CorpusError(msg);
  }
  return result;
}

bool matches_any_term(const TweetRecord& record, const std::vector<TermLibrary>& libraries) {
  for (const auto& lib : libraries) {
    for (const auto& term : lib.terms) {
      if (term_matches(record.text, term)) return true;
    }
  }
  return false;
}

std::vector<TweetRecord> filter_damage_related(const std::vector<TweetRecord>& records,
                                               const std::vector<TermLibrary>& libraries,
                                               const FilterOptions& options) {
  if (libraries.empty()) throw CorpusError("at least one term library is required");
  std::vector<TweetRecord> kept;
  for (const auto& rec : records) {
    if (options.require_keyword && !term_matches(rec.text, *options.require_keyword)) continue;
    if (matches_any_term(rec, libraries)) kept.push_back(rec);
  }
  return kept;
}

ScriptHint detect_script(std::string_view text_bytes) {
  bool has_cjk = false;
  bool has_latin = false;
  for (char32_t cp : text::decode_utf8(text_bytes)) {
    if (text::is_cjk(cp)) has_cjk = true;
    else if (text::is_latin_letter(cp)) has_latin = true;
    if (has_cjk && has_latin) break;
  }
  if (has_cjk && has_latin) return ScriptHint::mixed;
  if (has_cjk) return ScriptHint::cjk;
  if (has_latin) return ScriptHint::latin;
  return ScriptHint::unknown;
}

}  // namespace quake3m::corpus
