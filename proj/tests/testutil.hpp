#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "quake3m/assess.hpp"
#include "quake3m/corpus.hpp"
#include "quake3m/geo.hpp"
#include "quake3m/mllm.hpp"
#include "quake3m/prompts.hpp"

namespace testutil {

inline std::filesystem::path data_dir() {
#ifdef QUAKE3M_DATA_DIR
  return QUAKE3M_DATA_DIR;
#else
  return "data";
#endif
}

// Unique scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    static std::atomic<unsigned> counter{0};
    path = base / ("quake3m-test-" + std::to_string(::getpid()) + "-" +
                   std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

inline quake3m::corpus::TweetRecord tweet(std::string id, std::string text) {
  quake3m::corpus::TweetRecord r;
  r.id = std::move(id);
  r.text = std::move(text);
  r.script_hint = quake3m::corpus::detect_script(r.text);
  return r;
}

inline quake3m::corpus::TweetRecord geotagged_tweet(std::string id, std::string text, double lat,
                                                    double lon) {
  auto r = tweet(std::move(id), std::move(text));
  r.geotag = quake3m::GeoPoint{lat, lon};
  return r;
}

// Smallest valid PNG (1x1, grey); enough for image-attachment plumbing.
inline std::string tiny_png_bytes() {
  static const unsigned char bytes[] = {
      0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48,
      0x44, 0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00,
      0x00, 0x3A, 0x7E, 0x9B, 0x55, 0x00, 0x00, 0x00, 0x0A, 0x49, 0x44, 0x41, 0x54, 0x78,
      0x9C, 0x63, 0x6A, 0x00, 0x00, 0x00, 0x82, 0x00, 0x81, 0xCB, 0x1B, 0x11, 0x9F, 0x00,
      0x00, 0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82};
  return std::string(reinterpret_cast<const char*>(bytes), sizeof(bytes));
}

inline quake3m::geo::Gazetteer mini_gazetteer() {
  using quake3m::GeoPoint;
  using quake3m::geo::GazetteerEntry;
  using quake3m::geo::Granularity;
  std::vector<GazetteerEntry> entries;
  entries.push_back({"Ridgecrest", {"Ridgecrest, CA"}, GeoPoint{35.6225, -117.6709}, Granularity::city, "US"});
  entries.push_back({"El Monte", {"El Monte, CA"}, GeoPoint{34.0686, -118.0276}, Granularity::city, "US"});
  entries.push_back({"Los Angeles", {"Los Angeles, CA", "LA"}, GeoPoint{34.0522, -118.2437}, Granularity::city, "US"});
  entries.push_back({"Las Vegas", {"Las Vegas, NV"}, GeoPoint{36.1699, -115.1398}, Granularity::city, "US"});
  entries.push_back({"Sendai", {"仙台"}, GeoPoint{38.2682, 140.8694}, Granularity::city, "JP"});
  return quake3m::geo::Gazetteer::from_entries(std::move(entries));
}

inline quake3m::geo::EventConfig ridgecrest_event() {
  quake3m::geo::EventConfig e;
  e.event_name = "2019 Ridgecrest";
  e.epicenter = quake3m::GeoPoint{35.766, -117.605};
  e.country = "US";
  e.start_utc = "2019-07-04T00:00:00Z";
  e.end_utc = "2019-07-10T23:59:59Z";
  return e;
}

inline quake3m::mllm::BackendProfile script_backend() {
  quake3m::mllm::BackendProfile b;
  b.name = "mock";
  b.model_id = "mock-model";
  b.mode = quake3m::mllm::BackendMode::script;
  b.requests_per_minute = 1000000;
  return b;
}

inline std::string damage_json(int human_impact, const std::string& type, int level,
                               double confidence, const std::string& reasoning = "scripted") {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                R"({"human_impact":%d,"damage_type":"%s","damage_level":%d,"reasoning":"%s","confidence":%.3f})",
                human_impact, type.c_str(), level, reasoning.c_str(), confidence);
  return buf;
}

inline std::string location_json(const std::string& location) {
  return std::string(R"({"reasoning":"scripted","location":")") + location + "\"}";
}

inline std::string event_json(const std::string& yes_no) {
  return std::string(R"({"reasoning":"scripted","is_event_related":")") + yes_no + "\"}";
}

// Content-keyed responder covering the three pipeline stages; deterministic
// under concurrency. Stage detection keys on schema markers in the prompt.
inline quake3m::mllm::ScriptResponder stage_responder(std::string location_response,
                                                      std::string event_response,
                                                      std::string damage_response) {
  return [location_response, event_response,
          damage_response](const quake3m::mllm::ChatRequest& req) -> quake3m::mllm::ChatResponse {
    const std::string& text = req.user_parts.front().text;
    quake3m::mllm::ChatResponse resp;
    if (text.find("\"location\"") != std::string::npos) {
      resp.text = location_response;
    } else if (text.find("\"is_event_related\"") != std::string::npos) {
      resp.text = event_response;
    } else {
      resp.text = damage_response;
    }
    return resp;
  };
}

}  // namespace testutil
