#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "quake3m/errors.hpp"
#include "quake3m/geopoint.hpp"

namespace quake3m::corpus {

class CorpusError : public Error {
 public:
  using Error::Error;
};

enum class ScriptHint { latin, cjk, mixed, unknown };

const char* script_hint_name(ScriptHint h);

enum class MediaKind { image, other };

struct MediaRef {
  std::string uri;
  MediaKind kind = MediaKind::other;
};

struct TweetRecord {
  std::string id;
  std::optional<std::string> created_at;   // ISO-8601, as ingested
  std::string text;
  std::optional<GeoPoint> geotag;
  std::optional<std::string> profile_location;
  std::vector<MediaRef> media;
  ScriptHint script_hint = ScriptHint::unknown;
};

// One term library per language. Terms are stored deduplicated; matching rule
// is chosen per term (CJK terms match as substrings, everything else matches
// case-insensitively at word boundaries).
struct TermLibrary {
  std::string language_tag;
  std::vector<std::string> terms;
};

// Loads `terms.<lang>.txt`: UTF-8, one term per line, '#' starts a comment.
// The language tag comes from the filename unless given explicitly.
TermLibrary load_term_library(const std::filesystem::path& path);
TermLibrary load_term_library(const std::filesystem::path& path, std::string language_tag);

enum class CorpusFormat { jsonl, csv };

// Maps canonical field names (id, created_at, text, lat, lon, user_location,
// media) to CSV header names. Unmapped fields use the canonical name.
struct CsvMapping {
  std::map<std::string, std::string> columns;
};

struct MalformedLine {
  std::size_t line_number = 0;  // 1-based
  std::string reason;
};

struct LoadResult {
  std::vector<TweetRecord> records;  // kept in file order
  std::vector<MalformedLine> malformed;
};

// Reads a corpus file. Malformed lines are counted and reported, never
// silently dropped. Throws CorpusError when the file is unreadable, when more
// than 10% of non-empty lines are malformed, or when duplicate ids occur.
LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format,
                       const CsvMapping* mapping = nullptr);

struct FilterOptions {
  // When set, a record must also contain this collection keyword (matched
  // under the same per-term rule) to be retained. Off by default.
  std::optional<std::string> require_keyword;
};

// True when the record's text contains at least one term of any library.
bool matches_any_term(const TweetRecord& record, const std::vector<TermLibrary>& libraries);

// Keeps records whose text contains >=1 library term; preserves input order;
// idempotent. Requires at least one library.
std::vector<TweetRecord> filter_damage_related(const std::vector<TweetRecord>& records,
                                               const std::vector<TermLibrary>& libraries,
                                               const FilterOptions& options = {});

// latin: >=1 Latin letter, no CJK; cjk: >=1 CJK codepoint, no Latin letters;
// mixed: both present; unknown: neither.
ScriptHint detect_script(std::string_view text);

}  // namespace quake3m::corpus
