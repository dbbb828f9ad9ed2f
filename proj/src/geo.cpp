#include "quake3m/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "quake3m/text.hpp"

namespace quake3m::geo {

namespace {

constexpr double kEarthRadiusKm = 6371.0;
constexpr double kReverseLookupCapKm = 100.0;

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

int granularity_rank(Granularity g) { return static_cast<int>(g); }  // poi finest

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  double phi1 = deg2rad(a.lat);
  double phi2 = deg2rad(b.lat);
  double dphi = deg2rad(b.lat - a.lat);
  double dlambda = deg2rad(b.lon - a.lon);
  double s = std::sin(dphi / 2.0) * std::sin(dphi / 2.0) +
             std::cos(phi1) * std::cos(phi2) * std::sin(dlambda / 2.0) * std::sin(dlambda / 2.0);
  s = std::clamp(s, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(s));
}

const char* granularity_name(Granularity g) {
  switch (g) {
    case Granularity::poi: return "poi";
    case Granularity::neighborhood: return "neighborhood";
    case Granularity::city: return "city";
    case Granularity::county: return "county";
    case Granularity::state: return "state";
    case Granularity::country: return "country";
  }
  return "city";
}

std::optional<Granularity> granularity_from_name(std::string_view name) {
  if (name == "poi") return Granularity::poi;
  if (name == "neighborhood") return Granularity::neighborhood;
  if (name == "city") return Granularity::city;
  if (name == "county") return Granularity::county;
  if (name == "state") return Granularity::state;
  if (name == "country") return Granularity::country;
  return std::nullopt;
}

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::geotag: return "geotag";
    case Tier::content: return "content";
    case Tier::profile: return "profile";
    case Tier::unresolved: return "unresolved";
  }
  return "unresolved";
}

std::optional<Tier> tier_from_name(std::string_view name) {
  if (name == "geotag") return Tier::geotag;
  if (name == "content") return Tier::content;
  if (name == "profile") return Tier::profile;
  if (name == "unresolved") return Tier::unresolved;
  return std::nullopt;
}

void Gazetteer::build_index() {
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    index_[text::fold_key(entries_[i].name)].push_back(i);
    for (const auto& alias : entries_[i].aliases) {
      index_[text::fold_key(alias)].push_back(i);
    }
  }
}

Gazetteer Gazetteer::from_entries(std::vector<GazetteerEntry> entries) {
  Gazetteer g;
  g.entries_ = std::move(entries);
  g.build_index();
  return g;
}

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GeoError("cannot open gazetteer: " + path.string());
  std::vector<GazetteerEntry> entries;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = text::trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    auto cols = split(line, '\t');
    if (cols.size() < 6) {
      throw GeoError("gazetteer line " + std::to_string(line_number) + ": expected 6 columns");
    }
    GazetteerEntry e;
    e.name = text::trim(cols[0]);
    if (e.name.empty()) throw GeoError("gazetteer line " + std::to_string(line_number) + ": empty name");
    for (const auto& alias : split(cols[1], '|')) {
      std::string a = text::trim(alias);
      if (!a.empty()) e.aliases.push_back(a);
    }
    try {
      e.point.lat = std::stod(cols[2]);
      e.point.lon = std::stod(cols[3]);
    } catch (const std::exception&) {
      throw GeoError("gazetteer line " + std::to_string(line_number) + ": bad coordinates");
    }
    if (!e.point.valid()) {
      throw GeoError("gazetteer line " + std::to_string(line_number) + ": coordinates out of range");
    }
    auto g = granularity_from_name(text::trim(cols[4]));
    if (!g) throw GeoError("gazetteer line " + std::to_string(line_number) + ": bad granularity");
    e.granularity = *g;
    e.country = text::trim(cols[5]);
    entries.push_back(std::move(e));
  }
  return from_entries(std::move(entries));
}

std::optional<Gazetteer::Match> Gazetteer::geocode(std::string_view name,
                                                   std::string_view preferred_country) const {
  std::string key = text::fold_key(name);
  if (key.empty()) return std::nullopt;
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;

  const std::size_t* best = nullptr;
  auto better = [&](std::size_t a, std::size_t b) {
    const auto& ea = entries_[a];
    const auto& eb = entries_[b];
    int ra = granularity_rank(ea.granularity);
    int rb = granularity_rank(eb.granularity);
    if (ra != rb) return ra < rb;
    bool ca = !preferred_country.empty() && ea.country == preferred_country;
    bool cb = !preferred_country.empty() && eb.country == preferred_country;
    if (ca != cb) return ca;
    return ea.name < eb.name;
  };
  for (const auto& idx : it->second) {
    if (!best || better(idx, *best)) best = &idx;
  }
  const auto& e = entries_[*best];
  return Match{e.name, e.point, e.granularity, e.country};
}

std::optional<Gazetteer::Match> Gazetteer::nearest(const GeoPoint& p, double max_km) const {
  const GazetteerEntry* best = nullptr;
  double best_d = 0.0;
  for (const auto& e : entries_) {
    double d = haversine_km(p, e.point);
    if (d > max_km) continue;
    if (!best || d < best_d || (d == best_d && e.name < best->name)) {
      best = &e;
      best_d = d;
    }
  }
  if (!best) return std::nullopt;
  return Match{best->name, best->point, best->granularity, best->country};
}

void EventConfig::validate() const {
  if (event_name.empty()) throw ConfigError("event.name must not be empty");
  if (!epicenter.valid()) throw ConfigError("event.epicenter out of range");
  auto s = parse_iso8601_utc(start_utc);
  auto e = parse_iso8601_utc(end_utc);
  if (!s) throw ConfigError("event.start is not an ISO-8601 UTC timestamp: " + start_utc);
  if (!e) throw ConfigError("event.end is not an ISO-8601 UTC timestamp: " + end_utc);
  if (*s >= *e) throw ConfigError("event.start must be before event.end");
}

std::optional<std::int64_t> parse_iso8601_utc(std::string_view s) {
  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
  std::string buf(s);
  int n = std::sscanf(buf.c_str(), "%d-%d-%dT%d:%d:%d", &year, &month, &day, &hour, &minute, &second);
  if (n < 3) return std::nullopt;
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60) {
    return std::nullopt;
  }
  // days since epoch, civil-from-days style
  std::int64_t y = year;
  y -= month <= 2;
  std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  std::int64_t yoe = y - era * 400;
  std::int64_t doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
  std::int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  std::int64_t days = era * 146097 + doe - 719468;
  return days * 86400 + hour * 3600 + minute * 60 + second;
}

ResolvedLocation resolve_tiered(const corpus::TweetRecord& record,
                                const std::optional<std::string>& content_name,
                                const Gazetteer& gazetteer, std::string_view event_country) {
  // Tier 1: geotag metadata wins outright.
  if (record.geotag) {
    ResolvedLocation loc;
    loc.tier = Tier::geotag;
    loc.point = *record.geotag;
    if (auto m = gazetteer.nearest(*record.geotag, kReverseLookupCapKm)) {
      loc.name = m->name;
      loc.granularity = m->granularity;
    }
    return loc;
  }

  auto try_geocode = [&](const std::string& name) -> std::optional<ResolvedLocation> {
    std::string trimmed = text::trim(name);
    if (trimmed.empty()) return std::nullopt;
    auto m = gazetteer.geocode(trimmed, event_country);
    if (!m) return std::nullopt;
    if (!event_country.empty() && m->country != event_country) return std::nullopt;
    ResolvedLocation loc;
    loc.name = m->name;
    loc.point = m->point;
    loc.granularity = m->granularity;
    return loc;
  };

  // Tier 2: model-extracted location from the post content.
  if (content_name && *content_name != "No") {
    if (auto loc = try_geocode(*content_name)) {
      loc->tier = Tier::content;
      return *loc;
    }
  }

  // Tier 3: profile registration.
  if (record.profile_location) {
    if (auto loc = try_geocode(*record.profile_location)) {
      loc->tier = Tier::profile;
      return *loc;
    }
  }

  return ResolvedLocation{};
}

}  // namespace quake3m::geo
