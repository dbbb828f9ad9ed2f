#include "quake3m/assess.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "quake3m/text.hpp"

namespace quake3m::assess {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

}  // namespace

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::assessed: return "assessed";
    case Outcome::not_event: return "not_event";
    case Outcome::unresolved_location: return "unresolved_location";
    case Outcome::filtered_out: return "filtered_out";
    case Outcome::parse_failed: return "parse_failed";
  }
  return "parse_failed";
}

std::optional<Outcome> outcome_from_name(std::string_view name) {
  if (name == "assessed") return Outcome::assessed;
  if (name == "not_event") return Outcome::not_event;
  if (name == "unresolved_location") return Outcome::unresolved_location;
  if (name == "filtered_out") return Outcome::filtered_out;
  if (name == "parse_failed") return Outcome::parse_failed;
  return std::nullopt;
}

void BatchCounts::add(Outcome o) {
  ++total;
  switch (o) {
    case Outcome::assessed: ++assessed; break;
    case Outcome::not_event: ++not_event; break;
    case Outcome::unresolved_location: ++unresolved_location; break;
    case Outcome::filtered_out: ++filtered_out; break;
    case Outcome::parse_failed: ++parse_failed; break;
  }
}

ordered_json BatchCounts::to_json() const {
  ordered_json j;
  j["total"] = total;
  j["assessed"] = assessed;
  j["not_event"] = not_event;
  j["unresolved_location"] = unresolved_location;
  j["filtered_out"] = filtered_out;
  j["parse_failed"] = parse_failed;
  return j;
}

Pipeline::Pipeline(PipelineConfig config, std::shared_ptr<mllm::ChatClient> client,
                   geo::Gazetteer gazetteer, std::vector<corpus::TermLibrary> libraries)
    : config_(std::move(config)),
      client_(std::move(client)),
      gazetteer_(std::move(gazetteer)),
      libraries_(std::move(libraries)) {
  if (config_.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (config_.recheck_filter && libraries_.empty()) {
    throw ConfigError("recheck_filter requires term libraries");
  }
  prompts::prompt_version(config_.prompt_version);  // validate the id early
}

mllm::ChatResponse Pipeline::ask(const std::string& prompt_text) const {
  mllm::ChatRequest request;
  request.user_parts.push_back(mllm::Part::make_text(prompt_text));
  return ask(std::move(request));
}

mllm::ChatResponse Pipeline::ask(mllm::ChatRequest request) const {
  request.request_tag = mllm::make_request_tag(config_.backend.model_id, request);
  return client_->complete(request);
}

// Runs a completion and parses it, with one re-ask appending the
// return-only-JSON instruction before giving up.
template <typename Parser, typename Send>
static auto call_and_parse(mllm::ChatRequest request, Parser parse, Send&& send) {
  mllm::ChatResponse response = send(request);
  try {
    return parse(response.text);
  } catch (const prompts::ParseError&) {
    for (auto& part : request.user_parts) {
      if (part.kind == mllm::Part::Kind::text) {
        part.text += "\n";
        part.text += prompts::kReaskSuffix;
        break;
      }
    }
    response = send(request);
    return parse(response.text);  // second failure propagates
  }
}

struct Pipeline::Gate {
  bool proceed = false;
};

Pipeline::Gate Pipeline::run_gates(const corpus::TweetRecord& record, AssessmentRecord& out) const {
  Gate gate;
  out.tweet_id = record.id;
  out.model_name = config_.backend.model_id;
  out.modality = prompts::modality_name(config_.modality);
  out.prompt_version = config_.prompt_version;

  auto send = [this](mllm::ChatRequest req) { return ask(std::move(req)); };

  if (config_.recheck_filter && !corpus::matches_any_term(record, libraries_)) {
    out.outcome = Outcome::filtered_out;
    return gate;
  }

  // Location resolution. The content tier asks the model only when no geotag
  // is attached.
  std::optional<std::string> content_name;
  if (!record.geotag) {
    try {
      mllm::ChatRequest req;
      req.user_parts.push_back(mllm::Part::make_text(prompts::render_location_prompt(record)));
      prompts::LocationVerdict verdict =
          call_and_parse(std::move(req), prompts::parse_location_response, send);
      content_name = verdict.location;
    } catch (const Error& e) {
      out.outcome = Outcome::parse_failed;
      out.diagnostic = std::string("location stage: ") + e.what();
      return gate;
    }
  }
  out.resolved = geo::resolve_tiered(record, content_name, gazetteer_, config_.event.country);
  if (out.resolved.point) {
    out.distance_km = geo::haversine_km(*out.resolved.point, config_.event.epicenter);
  }
  if (out.resolved.tier == geo::Tier::unresolved) {
    out.outcome = Outcome::unresolved_location;
    return gate;
  }

  // Event verification.
  try {
    mllm::ChatRequest req;
    req.user_parts.push_back(
        mllm::Part::make_text(prompts::render_event_prompt(record, config_.event)));
    prompts::EventVerdict verdict =
        call_and_parse(std::move(req), prompts::parse_event_response, send);
    out.event_related = verdict.is_event_related;
  } catch (const Error& e) {
    out.outcome = Outcome::parse_failed;
    out.diagnostic = std::string("event stage: ") + e.what();
    return gate;
  }
  if (!*out.event_related) {
    out.outcome = Outcome::not_event;
    return gate;
  }

  gate.proceed = true;
  return gate;
}

AssessmentRecord Pipeline::assess_with_version(const corpus::TweetRecord& record,
                                               const prompts::PromptVersion& version) const {
  AssessmentRecord out;
  Gate gate = run_gates(record, out);
  out.prompt_version = version.id;
  if (!gate.proceed) return out;

  auto send = [this](mllm::ChatRequest req) { return ask(std::move(req)); };
  try {
    mllm::ChatRequest req = prompts::render_damage_prompt(record, config_.modality, version);
    prompts::DamageVerdict verdict =
        call_and_parse(std::move(req), prompts::parse_damage_response, send);
    out.verdict = std::move(verdict);
    out.outcome = Outcome::assessed;
  } catch (const Error& e) {
    out.outcome = Outcome::parse_failed;
    out.diagnostic = std::string("damage stage: ") + e.what();
  }
  return out;
}

AssessmentRecord Pipeline::assess_tweet(const corpus::TweetRecord& record) const {
  return assess_with_version(record, prompts::prompt_version(config_.prompt_version));
}

std::vector<AssessmentRecord> Pipeline::assess_batch(const std::vector<corpus::TweetRecord>& records,
                                                     const BatchSink& sink,
                                                     const ProgressFn& progress) const {
  const std::size_t n = records.size();
  std::vector<AssessmentRecord> results(n);
  std::vector<char> done(n, 0);
  std::atomic<std::size_t> next{0};
  std::mutex merge_mutex;
  std::size_t completed = 0;
  std::size_t contiguous = 0;  // filled prefix length
  std::size_t flushed = 0;
  const std::size_t flush_every = config_.flush_every > 0 ? config_.flush_every : 50;

  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      AssessmentRecord rec;
      try {
        rec = assess_tweet(records[i]);
      } catch (const std::exception& e) {
        rec.tweet_id = records[i].id;
        rec.model_name = config_.backend.model_id;
        rec.modality = prompts::modality_name(config_.modality);
        rec.prompt_version = config_.prompt_version;
        rec.outcome = Outcome::parse_failed;
        rec.diagnostic = std::string("internal: ") + e.what();
      }
      std::lock_guard<std::mutex> lock(merge_mutex);
      results[i] = std::move(rec);
      done[i] = 1;
      ++completed;
      while (contiguous < n && done[contiguous]) ++contiguous;
      if (sink && contiguous - flushed >= flush_every) {
        sink(results.data() + flushed, contiguous - flushed);
        flushed = contiguous;
      }
      if (progress) progress(completed, n);
    }
  };

  int workers = static_cast<int>(std::min<std::size_t>(config_.parallelism, std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (sink && flushed < n) sink(results.data() + flushed, n - flushed);
  return results;
}

std::map<std::string, std::vector<AssessmentRecord>> Pipeline::assess_versions(
    const std::vector<corpus::TweetRecord>& records, const std::vector<std::string>& versions) const {
  std::map<std::string, std::vector<AssessmentRecord>> out;
  for (const auto& id : versions) prompts::prompt_version(id);  // validate all ids first
  for (const auto& record : records) {
    AssessmentRecord base;
    Gate gate = run_gates(record, base);
    for (const auto& id : versions) {
      if (!gate.proceed) {
        AssessmentRecord copy = base;
        copy.prompt_version = id;
        out[id].push_back(std::move(copy));
        continue;
      }
      const prompts::PromptVersion& version = prompts::prompt_version(id);
      AssessmentRecord rec = base;
      rec.prompt_version = id;
      auto send = [this](mllm::ChatRequest req) { return ask(std::move(req)); };
      try {
        mllm::ChatRequest req = prompts::render_damage_prompt(record, config_.modality, version);
        rec.verdict = call_and_parse(std::move(req), prompts::parse_damage_response, send);
        rec.outcome = Outcome::assessed;
      } catch (const Error& e) {
        rec.outcome = Outcome::parse_failed;
        rec.diagnostic = std::string("damage stage: ") + e.what();
      }
      out[id].push_back(std::move(rec));
    }
  }
  return out;
}

NormalizedCity normalize_city_name(std::string_view name) {
  NormalizedCity out;
  std::string collapsed = text::collapse_whitespace(name);
  if (auto comma = collapsed.find_last_of(','); comma != std::string::npos) {
    out.qualifier = text::trim(collapsed.substr(comma + 1));
    collapsed = text::trim(collapsed.substr(0, comma));
  }
  out.city = text::title_case_latin(collapsed);
  return out;
}

std::vector<CityAggregate> aggregate_by_city(const std::vector<AssessmentRecord>& records) {
  std::map<std::string, std::vector<const AssessmentRecord*>> groups;
  for (const auto& rec : records) {
    if (rec.outcome != Outcome::assessed || !rec.verdict || !rec.resolved.point) continue;
    std::string city = normalize_city_name(rec.resolved.name).city;
    if (city.empty()) continue;  // no usable city identity
    groups[city].push_back(&rec);
  }

  std::vector<CityAggregate> out;
  out.reserve(groups.size());
  for (auto& [city, members] : groups) {
    // Canonical member order makes the aggregate independent of input order.
    std::sort(members.begin(), members.end(),
              [](const AssessmentRecord* a, const AssessmentRecord* b) {
                return a->tweet_id < b->tweet_id;
              });
    CityAggregate agg;
    agg.city_name = city;
    agg.n = static_cast<int>(members.size());
    double sum_mmi = 0.0;
    double sum_conf = 0.0;
    double sum_lat = 0.0;
    double sum_lon = 0.0;
    for (const AssessmentRecord* rec : members) {
      sum_mmi += prompts::verdict_mmi(*rec->verdict);
      sum_conf += rec->verdict->confidence;
      sum_lat += rec->resolved.point->lat;
      sum_lon += rec->resolved.point->lon;
    }
    agg.mean_mmi = sum_mmi / agg.n;
    agg.mean_confidence = sum_conf / agg.n;
    agg.point = GeoPoint{sum_lat / agg.n, sum_lon / agg.n};
    out.push_back(std::move(agg));
  }
  return out;  // map iteration is already name-sorted
}

ordered_json record_to_json(const AssessmentRecord& record) {
  ordered_json j;
  j["tweet_id"] = record.tweet_id;
  j["location"] = record.resolved.name;
  if (record.resolved.point) {
    j["lat"] = record.resolved.point->lat;
    j["lon"] = record.resolved.point->lon;
  } else {
    j["lat"] = nullptr;
    j["lon"] = nullptr;
  }
  j["tier"] = geo::tier_name(record.resolved.tier);
  if (record.distance_km) {
    j["distance_km"] = *record.distance_km;
  } else {
    j["distance_km"] = nullptr;
  }
  if (record.event_related) {
    j["event_related"] = *record.event_related ? "Yes" : "No";
  } else {
    j["event_related"] = nullptr;
  }
  if (record.verdict) {
    j["human_impact"] = record.verdict->human_impact;
    j["damage_type"] = prompts::damage_type_token(record.verdict->damage_type);
    j["damage_level"] = record.verdict->damage_level;
    j["confidence"] = record.verdict->confidence;
    j["reasoning"] = record.verdict->reasoning;
  } else {
    j["human_impact"] = nullptr;
    j["damage_type"] = nullptr;
    j["damage_level"] = nullptr;
    j["confidence"] = nullptr;
    j["reasoning"] = nullptr;
  }
  j["model"] = record.model_name;
  j["modality"] = record.modality;
  j["prompt_version"] = record.prompt_version;
  j["outcome"] = outcome_name(record.outcome);
  return j;
}

AssessmentRecord record_from_json(const json& j) {
  AssessmentRecord rec;
  rec.tweet_id = j.value("tweet_id", std::string{});
  rec.resolved.name = j.value("location", std::string{});
  if (j.contains("lat") && j["lat"].is_number() && j.contains("lon") && j["lon"].is_number()) {
    rec.resolved.point = GeoPoint{j["lat"].get<double>(), j["lon"].get<double>()};
  }
  rec.resolved.tier = geo::tier_from_name(j.value("tier", "unresolved")).value_or(geo::Tier::unresolved);
  if (j.contains("distance_km") && j["distance_km"].is_number()) {
    rec.distance_km = j["distance_km"].get<double>();
  }
  if (j.contains("event_related") && j["event_related"].is_string()) {
    rec.event_related = j["event_related"].get<std::string>() == "Yes";
  }
  rec.model_name = j.value("model", std::string{});
  rec.modality = j.value("modality", std::string{});
  rec.prompt_version = j.value("prompt_version", std::string{});
  rec.outcome = outcome_from_name(j.value("outcome", "parse_failed")).value_or(Outcome::parse_failed);
  if (rec.outcome == Outcome::assessed) {
    prompts::DamageVerdict v;
    v.human_impact = j.value("human_impact", 0);
    v.damage_type =
        prompts::damage_type_from_token(j.value("damage_type", "None")).value_or(prompts::DamageType::None);
    v.damage_level = j.value("damage_level", 0);
    v.confidence = j.value("confidence", 0.0);
    v.reasoning = j.value("reasoning", std::string{});
    rec.verdict = std::move(v);
  }
  return rec;
}

std::string records_to_jsonl(const std::vector<AssessmentRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += record_to_json(rec).dump();
    out += "\n";
  }
  return out;
}

std::vector<AssessmentRecord> records_from_jsonl_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open assessment file: " + path.string());
  std::vector<AssessmentRecord> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error("bad assessment line " + std::to_string(line_number) + " in " + path.string());
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

ordered_json to_geojson(const std::vector<AssessmentRecord>& records) {
  ordered_json features = ordered_json::array();
  for (const auto& rec : records) {
    if (rec.outcome != Outcome::assessed || !rec.verdict || !rec.resolved.point) continue;
    ordered_json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"},
                     {"coordinates", {rec.resolved.point->lon, rec.resolved.point->lat}}};
    ordered_json props;
    props["tweet_id"] = rec.tweet_id;
    props["location"] = rec.resolved.name;
    props["mmi"] = prompts::verdict_mmi(*rec.verdict);
    props["damage_type"] = prompts::damage_type_token(rec.verdict->damage_type);
    props["confidence"] = rec.verdict->confidence;
    f["properties"] = std::move(props);
    features.push_back(std::move(f));
  }
  ordered_json out;
  out["type"] = "FeatureCollection";
  out["features"] = std::move(features);
  return out;
}

}  // namespace quake3m::assess
