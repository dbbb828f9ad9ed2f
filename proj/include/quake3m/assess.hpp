#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "quake3m/corpus.hpp"
#include "quake3m/geo.hpp"
#include "quake3m/mllm.hpp"
#include "quake3m/prompts.hpp"

#include <nlohmann/json_fwd.hpp>

namespace quake3m::assess {

enum class Outcome { assessed, not_event, unresolved_location, filtered_out, parse_failed };

const char* outcome_name(Outcome o);
std::optional<Outcome> outcome_from_name(std::string_view name);

struct AssessmentRecord {
  std::string tweet_id;
  geo::ResolvedLocation resolved;
  std::optional<bool> event_related;             // set once the event stage ran
  std::optional<prompts::DamageVerdict> verdict; // present iff outcome == assessed
  std::optional<double> distance_km;             // present iff resolved has a point
  std::string model_name;
  std::string modality;
  std::string prompt_version;
  Outcome outcome = Outcome::parse_failed;
  std::string diagnostic;  // failure detail; logged, not part of the wire schema
};

struct PipelineConfig {
  geo::EventConfig event;
  mllm::BackendProfile backend;
  prompts::Modality modality = prompts::Modality::fusion;
  std::string prompt_version = "v1";
  int parallelism = 1;
  std::filesystem::path gazetteer_path;
  std::vector<std::filesystem::path> term_library_paths;
  bool recheck_filter = false;  // re-run the damage-term filter inside assess_tweet
  int flush_every = 50;
};

struct BatchCounts {
  std::size_t total = 0;
  std::size_t assessed = 0;
  std::size_t not_event = 0;
  std::size_t unresolved_location = 0;
  std::size_t filtered_out = 0;
  std::size_t parse_failed = 0;

  void add(Outcome o);
  nlohmann::ordered_json to_json() const;
};

// Receives completed records in input order. Called with consecutive slices;
// never sees a record twice.
using BatchSink = std::function<void(const AssessmentRecord* records, std::size_t count)>;
using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

// Orchestrates filter-recheck -> location -> event verification -> damage
// assessment per tweet, sharing one rate-limited client. Stage failures are
// data (recorded in outcome), never batch aborts.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, std::shared_ptr<mllm::ChatClient> client, geo::Gazetteer gazetteer,
           std::vector<corpus::TermLibrary> libraries = {});

  const PipelineConfig& config() const { return config_; }
  mllm::ChatClient& client() { return *client_; }

  AssessmentRecord assess_tweet(const corpus::TweetRecord& record) const;

  // Fans out up to config.parallelism workers; results are merged in input
  // order and flushed to the sink every config.flush_every records.
  std::vector<AssessmentRecord> assess_batch(const std::vector<corpus::TweetRecord>& records,
                                             const BatchSink& sink = {},
                                             const ProgressFn& progress = {}) const;

  // Shared location/event gating, then one damage call per version. Used by
  // the prompt-sensitivity harness.
  std::map<std::string, std::vector<AssessmentRecord>> assess_versions(
      const std::vector<corpus::TweetRecord>& records, const std::vector<std::string>& versions) const;

 private:
  struct Gate;
  Gate run_gates(const corpus::TweetRecord& record, AssessmentRecord& out) const;
  AssessmentRecord assess_with_version(const corpus::TweetRecord& record,
                                       const prompts::PromptVersion& version) const;
  mllm::ChatResponse ask(const std::string& prompt_text) const;
  mllm::ChatResponse ask(mllm::ChatRequest request) const;

  PipelineConfig config_;
  std::shared_ptr<mllm::ChatClient> client_;
  geo::Gazetteer gazetteer_;
  std::vector<corpus::TermLibrary> libraries_;
};

struct CityAggregate {
  std::string city_name;
  GeoPoint point;          // mean of member points
  int n = 0;
  double mean_mmi = 0.0;   // damage_level with 0 mapped to 1
  double mean_confidence = 0.0;
};

struct NormalizedCity {
  std::string city;       // title-cased, whitespace-collapsed
  std::string qualifier;  // trailing state/country part, if any
};

// "  el monte,  CA " -> { "El Monte", "CA" }.
NormalizedCity normalize_city_name(std::string_view name);

// Groups assessed records with a resolved point by normalized city name.
// Member order is canonicalized by tweet_id, so the result is permutation
// invariant; output is sorted by city name.
std::vector<CityAggregate> aggregate_by_city(const std::vector<AssessmentRecord>& records);

// Wire schema, exact key order: tweet_id, location, lat, lon, tier,
// distance_km, event_related, human_impact, damage_type, damage_level,
// confidence, reasoning, model, modality, prompt_version, outcome.
nlohmann::ordered_json record_to_json(const AssessmentRecord& record);
AssessmentRecord record_from_json(const nlohmann::json& j);

std::string records_to_jsonl(const std::vector<AssessmentRecord>& records);
std::vector<AssessmentRecord> records_from_jsonl_file(const std::filesystem::path& path);

// FeatureCollection of assessed points with mmi/damage_type/confidence
// properties, for external map rendering.
nlohmann::ordered_json to_geojson(const std::vector<AssessmentRecord>& records);

}  // namespace quake3m::assess
