#pragma once

namespace quake3m {

// Latitude/longitude in decimal degrees. lat in [-90, 90], lon in [-180, 180].
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  bool valid() const { return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0; }
  bool operator==(const GeoPoint&) const = default;
};

}  // namespace quake3m
