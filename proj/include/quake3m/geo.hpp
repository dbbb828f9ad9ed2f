#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "quake3m/corpus.hpp"
#include "quake3m/errors.hpp"
#include "quake3m/geopoint.hpp"

namespace quake3m::geo {

class GeoError : public Error {
 public:
  using Error::Error;
};

// Great-circle distance in kilometers, mean Earth radius 6371.0 km.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

enum class Granularity { poi, neighborhood, city, county, state, country };

const char* granularity_name(Granularity g);
std::optional<Granularity> granularity_from_name(std::string_view name);

enum class Tier { geotag, content, profile, unresolved };

const char* tier_name(Tier t);
std::optional<Tier> tier_from_name(std::string_view name);

struct ResolvedLocation {
  std::string name;                         // empty when unknown
  std::optional<GeoPoint> point;
  Tier tier = Tier::unresolved;
  std::optional<Granularity> granularity;
};

struct GazetteerEntry {
  std::string name;
  std::vector<std::string> aliases;
  GeoPoint point;
  Granularity granularity = Granularity::city;
  std::string country;  // ISO-3166 alpha-2
};

// Immutable after load; all lookups are read-only and thread-safe.
class Gazetteer {
 public:
  // TSV columns: name, aliases (|-separated), lat, lon, granularity, country.
  // UTF-8, '#' starts a comment line.
  static Gazetteer load(const std::filesystem::path& path);
  static Gazetteer from_entries(std::vector<GazetteerEntry> entries);

  struct Match {
    std::string name;
    GeoPoint point;
    Granularity granularity = Granularity::city;
    std::string country;
  };

  // Case-insensitive exact match on name or alias. Among multiple matches:
  // finer granularity first, then entries in preferred_country, then the
  // lexicographically smallest name.
  std::optional<Match> geocode(std::string_view name, std::string_view preferred_country = "") const;

  // Nearest entry by haversine within max_km; ties broken by name.
  std::optional<Match> nearest(const GeoPoint& p, double max_km) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<GazetteerEntry>& entries() const { return entries_; }

 private:
  std::vector<GazetteerEntry> entries_;
  std::unordered_map<std::string, std::vector<std::size_t>> index_;

  void build_index();
};

struct EventConfig {
  std::string event_name;   // substituted into the event-verification prompt
  GeoPoint epicenter;
  std::string country;      // ISO-3166 alpha-2; empty disables the in-country rule
  std::string start_utc;    // ISO-8601
  std::string end_utc;

  // Throws ConfigError unless start < end and the epicenter is valid.
  void validate() const;
};

// Parses "YYYY-MM-DDTHH:MM:SS[Z]" as UTC seconds since epoch.
std::optional<std::int64_t> parse_iso8601_utc(std::string_view s);

// Tiered resolution: (1) geotag -> reverse lookup of the nearest gazetteer
// entry within 100 km (name left empty beyond that, point kept); (2)
// content_name from the location-extraction step, unless it is the "No"
// sentinel; (3) profile location. Content/profile matches outside
// event_country (when set) are rejected and fall through.
ResolvedLocation resolve_tiered(const corpus::TweetRecord& record,
                                const std::optional<std::string>& content_name,
                                const Gazetteer& gazetteer,
                                std::string_view event_country = "");

}  // namespace quake3m::geo
