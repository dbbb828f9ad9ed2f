#include <doctest.h>

#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "quake3m/assess.hpp"
#include "testutil.hpp"

using namespace quake3m;
using namespace quake3m::assess;

namespace {

std::shared_ptr<mllm::ChatClient> scripted_client(mllm::ScriptResponder responder) {
  auto client = std::make_shared<mllm::ChatClient>(testutil::script_backend());
  client->set_script(std::move(responder));
  return client;
}

PipelineConfig mock_config(prompts::Modality modality = prompts::Modality::text_only) {
  PipelineConfig cfg;
  cfg.event = testutil::ridgecrest_event();
  cfg.backend = testutil::script_backend();
  cfg.modality = modality;
  cfg.prompt_version = "v1";
  cfg.parallelism = 1;
  return cfg;
}

}  // namespace

TEST_CASE("assess_tweet: El Monte fusion example") {
  testutil::TempDir tmp;
  auto image = tmp.file("window.png");
  testutil::write_file(image, testutil::tiny_png_bytes());

  auto rec = testutil::tweet("em1", "6.4 earthquake damaged my friend's window in El Monte");
  rec.media.push_back({image.string(), corpus::MediaKind::image});

  auto client = scripted_client(testutil::stage_responder(
      testutil::location_json("El Monte, CA"), testutil::event_json("Yes"),
      testutil::damage_json(1, "Interior", 4, 0.9, "broken window implies interior damage")));
  Pipeline pipeline(mock_config(prompts::Modality::fusion), client, testutil::mini_gazetteer());

  auto out = pipeline.assess_tweet(rec);
  CHECK(out.outcome == Outcome::assessed);
  CHECK(out.resolved.tier == geo::Tier::content);
  CHECK(out.resolved.name == "El Monte");
  CHECK(out.event_related == true);
  REQUIRE(out.verdict.has_value());
  CHECK(out.verdict->damage_type == prompts::DamageType::Interior);
  CHECK(out.verdict->damage_level == 4);
  CHECK(out.verdict->confidence == doctest::Approx(0.9));
  REQUIRE(out.distance_km.has_value());
  CHECK(*out.distance_km > 150.0);  // El Monte is far from the epicenter
  CHECK(*out.distance_km < 250.0);
  CHECK(client->call_count() == 3);  // location + event + damage
}

TEST_CASE("assess_tweet: event No short-circuits before the damage call") {
  SUBCASE("geotagged record needs only the event call") {
    auto rec = testutil::geotagged_tweet("g1", "damage talk", 35.7, -117.6);
    auto client = scripted_client(testutil::stage_responder(
        testutil::location_json("unused"), testutil::event_json("No"),
        testutil::damage_json(0, "None", 1, 0.1)));
    Pipeline pipeline(mock_config(), client, testutil::mini_gazetteer());
    auto out = pipeline.assess_tweet(rec);
    CHECK(out.outcome == Outcome::not_event);
    CHECK(out.event_related == false);
    CHECK_FALSE(out.verdict.has_value());
    CHECK(client->call_count() == 1);
  }
  SUBCASE("non-geotagged record needs location + event") {
    auto rec = testutil::tweet("g2", "damage talk in Ridgecrest");
    auto client = scripted_client(testutil::stage_responder(
        testutil::location_json("Ridgecrest"), testutil::event_json("No"),
        testutil::damage_json(0, "None", 1, 0.1)));
    Pipeline pipeline(mock_config(), client, testutil::mini_gazetteer());
    auto out = pipeline.assess_tweet(rec);
    CHECK(out.outcome == Outcome::not_event);
    CHECK(client->call_count() == 2);
  }
}

TEST_CASE("assess_tweet: unresolved location short-circuits") {
  auto rec = testutil::tweet("u1", "shaking somewhere");
  auto client = scripted_client(testutil::stage_responder(
      testutil::location_json("No"), testutil::event_json("Yes"),
      testutil::damage_json(0, "None", 1, 0.1)));
  Pipeline pipeline(mock_config(), client, testutil::mini_gazetteer());
  auto out = pipeline.assess_tweet(rec);
  CHECK(out.outcome == Outcome::unresolved_location);
  CHECK_FALSE(out.distance_km.has_value());
  CHECK(client->call_count() == 1);  // only the location call
}

TEST_CASE("assess_tweet: geotagged record skips the location call entirely") {
  auto rec = testutil::geotagged_tweet("g3", "strong shaking", 35.63, -117.67);
  int location_calls = 0;
  auto client = scripted_client([&](const mllm::ChatRequest& req) {
    if (req.user_parts.front().text.find("\"location\"") != std::string::npos) ++location_calls;
    if (req.user_parts.front().text.find("\"is_event_related\"") != std::string::npos) {
      return mllm::ChatResponse{testutil::event_json("Yes"), mllm::FinishReason::complete, 0};
    }
    return mllm::ChatResponse{testutil::damage_json(1, "Exterior", 6, 0.8), mllm::FinishReason::complete, 0};
  });
  Pipeline pipeline(mock_config(), client, testutil::mini_gazetteer());
  auto out = pipeline.assess_tweet(rec);
  CHECK(out.outcome == Outcome::assessed);
  CHECK(out.resolved.tier == geo::Tier::geotag);
  CHECK(out.resolved.name == "Ridgecrest");
  CHECK(location_calls == 0);
}

TEST_CASE("assess_tweet: one re-ask repairs a malformed first answer") {
  auto rec = testutil::geotagged_tweet("r1", "cracked walls", 35.63, -117.67);
  int damage_calls = 0;
  auto client = scripted_client([&](const mllm::ChatRequest& req) {
    const std::string& text = req.user_parts.front().text;
    if (text.find("\"is_event_related\"") != std::string::npos) {
      return mllm::ChatResponse{testutil::event_json("Yes"), mllm::FinishReason::complete, 0};
    }
    ++damage_calls;
    bool reasked = text.find(prompts::kReaskSuffix) != std::string::npos;
    std::string body = reasked ? testutil::damage_json(1, "Interior", 5, 0.7)
                               : "sorry, here is some prose without json";
    return mllm::ChatResponse{body, mllm::FinishReason::complete, 0};
  });
  Pipeline pipeline(mock_config(), client, testutil::mini_gazetteer());
  auto out = pipeline.assess_tweet(rec);
  CHECK(out.outcome == Outcome::assessed);
  CHECK(damage_calls == 2);
  REQUIRE(out.verdict.has_value());
  CHECK(out.verdict->damage_level == 5);
}

TEST_CASE("assess_tweet: persistent garbage becomes parse_failed, not an abort") {
  auto rec = testutil::geotagged_tweet("p1", "cracked walls", 35.63, -117.67);
  auto client = scripted_client(testutil::stage_responder(
      testutil::location_json("x"), testutil::event_json("Yes"), "completely unusable output"));
  Pipeline pipeline(mock_config(), client, testutil::mini_gazetteer());
  auto out = pipeline.assess_tweet(rec);
  CHECK(out.outcome == Outcome::parse_failed);
  CHECK_FALSE(out.diagnostic.empty());
  CHECK(out.event_related == true);  // failure happened at the damage stage
}

TEST_CASE("assess_tweet: image modality on a text-only record fails cleanly") {
  auto rec = testutil::geotagged_tweet("i1", "no pictures here", 35.63, -117.67);
  auto client = scripted_client(testutil::stage_responder(
      testutil::location_json("x"), testutil::event_json("Yes"),
      testutil::damage_json(0, "None", 1, 0.5)));
  Pipeline pipeline(mock_config(prompts::Modality::image_only), client, testutil::mini_gazetteer());
  auto out = pipeline.assess_tweet(rec);
  CHECK(out.outcome == Outcome::parse_failed);
  CHECK(out.diagnostic.find("image") != std::string::npos);
}

TEST_CASE("assess_tweet: filter recheck flag") {
  corpus::TermLibrary lib{"en", {"damage"}};
  auto cfg = mock_config();
  cfg.recheck_filter = true;
  auto client = scripted_client(testutil::stage_responder(
      testutil::location_json("Ridgecrest"), testutil::event_json("Yes"),
      testutil::damage_json(0, "None", 2, 0.5)));
  Pipeline pipeline(cfg, client, testutil::mini_gazetteer(), {lib});

  auto kept = pipeline.assess_tweet(testutil::geotagged_tweet("k", "damage here", 35.63, -117.67));
  CHECK(kept.outcome == Outcome::assessed);
  auto dropped = pipeline.assess_tweet(testutil::geotagged_tweet("d", "all quiet", 35.63, -117.67));
  CHECK(dropped.outcome == Outcome::filtered_out);
}

TEST_CASE("assess_batch: empty input, ordering, determinism across parallelism") {
  auto responder = testutil::stage_responder(testutil::location_json("Ridgecrest"),
                                             testutil::event_json("Yes"),
                                             testutil::damage_json(1, "Exterior", 5, 0.8));

  auto make_pipeline = [&](int parallelism) {
    auto cfg = mock_config();
    cfg.parallelism = parallelism;
    return Pipeline(cfg, scripted_client(responder), testutil::mini_gazetteer());
  };

  SUBCASE("empty corpus") {
    auto out = make_pipeline(1).assess_batch({});
    CHECK(out.empty());
  }

  SUBCASE("100-record mock, parallelism 1 vs 8, byte-identical output") {
    std::vector<corpus::TweetRecord> corpus;
    std::mt19937 rng(5);
    for (int i = 0; i < 100; ++i) {
      // a mix of geotagged and text-located records
      if (rng() % 2 == 0) {
        corpus.push_back(testutil::geotagged_tweet("t" + std::to_string(i),
                                                   "damage report " + std::to_string(i),
                                                   35.0 + (i % 20) * 0.05, -118.0 + (i % 10) * 0.1));
      } else {
        corpus.push_back(
            testutil::tweet("t" + std::to_string(i), "damage report " + std::to_string(i)));
      }
    }
    auto seq = make_pipeline(1).assess_batch(corpus);
    auto par = make_pipeline(8).assess_batch(corpus);
    REQUIRE(seq.size() == corpus.size());
    CHECK(records_to_jsonl(seq) == records_to_jsonl(par));
    for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(seq[i].tweet_id == corpus[i].id);
  }
}

TEST_CASE("assess_batch: per-outcome counts sum to corpus size") {
  // Route records to different outcomes by id embedded in the tweet text.
  auto responder = [](const mllm::ChatRequest& req) -> mllm::ChatResponse {
    const std::string& text = req.user_parts.front().text;
    mllm::ChatResponse resp;
    if (text.find("\"location\"") != std::string::npos) {
      resp.text = text.find("LOSTCASE") != std::string::npos ? testutil::location_json("No")
                                                             : testutil::location_json("Ridgecrest");
    } else if (text.find("\"is_event_related\"") != std::string::npos) {
      resp.text = text.find("OFFTOPIC") != std::string::npos ? testutil::event_json("No")
                                                             : testutil::event_json("Yes");
    } else {
      resp.text = text.find("GARBLED") != std::string::npos
                      ? "no json here"
                      : testutil::damage_json(0, "Exterior", 4, 0.6);
    }
    return resp;
  };

  std::vector<corpus::TweetRecord> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back(testutil::tweet("a" + std::to_string(i), "fine damage"));
  for (int i = 0; i < 4; ++i) corpus.push_back(testutil::tweet("b" + std::to_string(i), "LOSTCASE damage"));
  for (int i = 0; i < 5; ++i) corpus.push_back(testutil::tweet("c" + std::to_string(i), "OFFTOPIC damage"));
  for (int i = 0; i < 3; ++i) corpus.push_back(testutil::tweet("d" + std::to_string(i), "GARBLED damage"));

  auto cfg = mock_config();
  cfg.parallelism = 4;
  Pipeline pipeline(cfg, scripted_client(responder), testutil::mini_gazetteer());
  auto out = pipeline.assess_batch(corpus);

  BatchCounts counts;
  for (const auto& rec : out) counts.add(rec.outcome);
  CHECK(counts.total == corpus.size());
  CHECK(counts.assessed == 20);
  CHECK(counts.unresolved_location == 4);
  CHECK(counts.not_event == 5);
  CHECK(counts.parse_failed == 3);
  CHECK(counts.assessed + counts.not_event + counts.unresolved_location + counts.filtered_out +
            counts.parse_failed ==
        counts.total);
}

TEST_CASE("assess_batch: sink receives consecutive slices in input order") {
  auto responder = testutil::stage_responder(testutil::location_json("Ridgecrest"),
                                             testutil::event_json("Yes"),
                                             testutil::damage_json(0, "None", 2, 0.5));
  auto cfg = mock_config();
  cfg.parallelism = 4;
  cfg.flush_every = 10;
  Pipeline pipeline(cfg, scripted_client(responder), testutil::mini_gazetteer());

  std::vector<corpus::TweetRecord> corpus;
  for (int i = 0; i < 35; ++i) {
    corpus.push_back(testutil::geotagged_tweet("t" + std::to_string(i), "x", 35.63, -117.67));
  }
  std::vector<std::string> flushed_ids;
  std::size_t flush_calls = 0;
  auto out = pipeline.assess_batch(corpus, [&](const AssessmentRecord* recs, std::size_t n) {
    ++flush_calls;
    for (std::size_t i = 0; i < n; ++i) flushed_ids.push_back(recs[i].tweet_id);
  });
  REQUIRE(flushed_ids.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(flushed_ids[i] == corpus[i].id);
  CHECK(flush_calls >= 3);  // 10+10+10+5 or coarser
}

TEST_CASE("aggregate_by_city: examples") {
  auto make = [](const std::string& id, const std::string& city, double lat, double lon, int level) {
    AssessmentRecord rec;
    rec.tweet_id = id;
    rec.resolved.name = city;
    rec.resolved.point = GeoPoint{lat, lon};
    rec.resolved.tier = geo::Tier::content;
    rec.outcome = Outcome::assessed;
    prompts::DamageVerdict v;
    v.damage_level = level;
    v.confidence = 0.5;
    v.damage_type = prompts::DamageType::Exterior;
    rec.verdict = v;
    return rec;
  };

  SUBCASE("one city, mean of [3,4,5]") {
    std::vector<AssessmentRecord> recs = {make("1", "Ridgecrest", 35.62, -117.67, 3),
                                          make("2", "Ridgecrest", 35.62, -117.67, 4),
                                          make("3", "Ridgecrest", 35.62, -117.67, 5)};
    auto agg = aggregate_by_city(recs);
    REQUIRE(agg.size() == 1);
    CHECK(agg[0].city_name == "Ridgecrest");
    CHECK(agg[0].n == 3);
    CHECK(agg[0].mean_mmi == doctest::Approx(4.0));
  }
  SUBCASE("two cities") {
    std::vector<AssessmentRecord> recs = {make("1", "Trona", 35.76, -117.37, 2),
                                          make("2", "Ridgecrest", 35.62, -117.67, 6),
                                          make("3", "Ridgecrest", 35.62, -117.67, 8)};
    auto agg = aggregate_by_city(recs);
    REQUIRE(agg.size() == 2);
    CHECK(agg[0].city_name == "Ridgecrest");
    CHECK(agg[0].mean_mmi == doctest::Approx(7.0));
    CHECK(agg[0].n == 2);
    CHECK(agg[1].city_name == "Trona");
    CHECK(agg[1].mean_mmi == doctest::Approx(2.0));
    CHECK(agg[1].n == 1);
  }
  SUBCASE("unresolved and failed records are ignored") {
    auto bad = make("1", "Ridgecrest", 35.62, -117.67, 3);
    bad.outcome = Outcome::parse_failed;
    bad.verdict.reset();
    auto pointless = make("2", "", 0, 0, 3);
    pointless.resolved.point.reset();
    CHECK(aggregate_by_city({bad, pointless}).empty());
  }
  SUBCASE("level 0 joins as MMI 1") {
    auto agg = aggregate_by_city({make("1", "Trona", 35.76, -117.37, 0)});
    REQUIRE(agg.size() == 1);
    CHECK(agg[0].mean_mmi == doctest::Approx(1.0));
  }
  SUBCASE("invariant: min level <= mean <= max level") {
    std::mt19937 rng(21);
    std::vector<AssessmentRecord> recs;
    for (int i = 0; i < 50; ++i) {
      recs.push_back(make("t" + std::to_string(i), "Ridgecrest", 35.62, -117.67,
                          1 + static_cast<int>(rng() % 9)));
    }
    auto agg = aggregate_by_city(recs);
    REQUIRE(agg.size() == 1);
    int lo = 10, hi = 1;
    for (const auto& r : recs) {
      lo = std::min(lo, r.verdict->damage_level);
      hi = std::max(hi, r.verdict->damage_level);
    }
    CHECK(agg[0].mean_mmi >= lo);
    CHECK(agg[0].mean_mmi <= hi);
  }
  SUBCASE("permutation invariance") {
    std::vector<AssessmentRecord> recs;
    std::mt19937 rng(22);
    for (int i = 0; i < 40; ++i) {
      recs.push_back(make("t" + std::to_string(i), i % 2 ? "Trona" : "Ridgecrest",
                          35.0 + (i % 7) * 0.01, -117.5, 1 + static_cast<int>(rng() % 9)));
    }
    auto base = aggregate_by_city(recs);
    for (int trial = 0; trial < 5; ++trial) {
      std::shuffle(recs.begin(), recs.end(), rng);
      auto shuffled = aggregate_by_city(recs);
      REQUIRE(shuffled.size() == base.size());
      for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(shuffled[i].city_name == base[i].city_name);
        CHECK(shuffled[i].mean_mmi == base[i].mean_mmi);  // bitwise equal by construction
        CHECK(shuffled[i].point.lat == base[i].point.lat);
      }
    }
  }
  SUBCASE("name normalization merges qualifier variants") {
    std::vector<AssessmentRecord> recs = {make("1", "el monte", 34.07, -118.03, 3),
                                          make("2", "El Monte, CA", 34.07, -118.03, 5),
                                          make("3", " EL  MONTE ", 34.07, -118.03, 4)};
    auto agg = aggregate_by_city(recs);
    REQUIRE(agg.size() == 1);
    CHECK(agg[0].city_name == "El Monte");
    CHECK(agg[0].n == 3);
  }
}

TEST_CASE("normalize_city_name") {
  auto n = normalize_city_name("  el   monte , CA ");
  CHECK(n.city == "El Monte");
  CHECK(n.qualifier == "CA");
  CHECK(normalize_city_name("las vegas, nv").city == "Las Vegas");
  CHECK(normalize_city_name("Sendai").qualifier.empty());
  CHECK(normalize_city_name("仙台").city == "仙台");
}

TEST_CASE("assessment record wire schema") {
  AssessmentRecord rec;
  rec.tweet_id = "t1";
  rec.resolved.name = "Ridgecrest";
  rec.resolved.point = GeoPoint{35.6225, -117.6709};
  rec.resolved.tier = geo::Tier::geotag;
  rec.event_related = true;
  rec.distance_km = 17.25;
  prompts::DamageVerdict v;
  v.human_impact = 1;
  v.damage_type = prompts::DamageType::Both;
  v.damage_level = 6;
  v.confidence = 0.85;
  v.reasoning = "walls and rubble";
  rec.verdict = v;
  rec.model_name = "mock-model";
  rec.modality = "fusion";
  rec.prompt_version = "v1";
  rec.outcome = Outcome::assessed;

  auto j = record_to_json(rec);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  const std::vector<std::string> expected = {"tweet_id",     "location",     "lat",
                                             "lon",          "tier",         "distance_km",
                                             "event_related", "human_impact", "damage_type",
                                             "damage_level", "confidence",   "reasoning",
                                             "model",        "modality",     "prompt_version",
                                             "outcome"};
  CHECK(keys == expected);
  CHECK(j["event_related"] == "Yes");
  CHECK(j["tier"] == "geotag");

  auto round = record_from_json(nlohmann::json::parse(j.dump()));
  CHECK(round.tweet_id == rec.tweet_id);
  CHECK(round.resolved.name == rec.resolved.name);
  CHECK(round.resolved.tier == rec.resolved.tier);
  CHECK(round.verdict == rec.verdict);
  CHECK(round.distance_km == rec.distance_km);
  CHECK(round.outcome == rec.outcome);

  SUBCASE("nulls for short-circuited records") {
    AssessmentRecord bare;
    bare.tweet_id = "t2";
    bare.outcome = Outcome::unresolved_location;
    auto jj = record_to_json(bare);
    CHECK(jj["lat"].is_null());
    CHECK(jj["event_related"].is_null());
    CHECK(jj["damage_level"].is_null());
    auto back = record_from_json(nlohmann::json::parse(jj.dump()));
    CHECK_FALSE(back.verdict.has_value());
    CHECK_FALSE(back.distance_km.has_value());
    CHECK(back.outcome == Outcome::unresolved_location);
  }
}

TEST_CASE("geojson export") {
  AssessmentRecord rec;
  rec.tweet_id = "t1";
  rec.resolved.name = "Trona";
  rec.resolved.point = GeoPoint{35.7624, -117.3723};
  rec.resolved.tier = geo::Tier::geotag;
  rec.outcome = Outcome::assessed;
  prompts::DamageVerdict v;
  v.damage_level = 0;
  v.damage_type = prompts::DamageType::None;
  v.confidence = 0.4;
  rec.verdict = v;

  AssessmentRecord skipped;
  skipped.tweet_id = "t2";
  skipped.outcome = Outcome::not_event;

  auto geo = to_geojson({rec, skipped});
  CHECK(geo["type"] == "FeatureCollection");
  REQUIRE(geo["features"].size() == 1);
  const auto& f = geo["features"][0];
  CHECK(f["geometry"]["coordinates"][0] == doctest::Approx(-117.3723));
  CHECK(f["geometry"]["coordinates"][1] == doctest::Approx(35.7624));
  CHECK(f["properties"]["mmi"] == 1);  // level 0 maps to 1
}

TEST_CASE("assess_versions: shared gates, per-version damage calls") {
  auto responder = [](const mllm::ChatRequest& req) -> mllm::ChatResponse {
    const std::string& text = req.user_parts.front().text;
    mllm::ChatResponse resp;
    if (text.find("\"is_event_related\"") != std::string::npos) {
      resp.text = testutil::event_json("Yes");
    } else if (text.find("follow these three steps") != std::string::npos) {
      resp.text = testutil::damage_json(1, "Exterior", 6, 0.9);  // v2 answers differently
    } else {
      resp.text = testutil::damage_json(1, "Interior", 4, 0.8);
    }
    return resp;
  };
  Pipeline pipeline(mock_config(), scripted_client(responder), testutil::mini_gazetteer());

  std::vector<corpus::TweetRecord> sample = {
      testutil::geotagged_tweet("s1", "cracked plaster", 35.63, -117.67),
      testutil::geotagged_tweet("s2", "fallen chimney", 35.63, -117.67)};
  auto runs = pipeline.assess_versions(sample, {"v1", "v2"});
  REQUIRE(runs.size() == 2);
  REQUIRE(runs["v1"].size() == 2);
  REQUIRE(runs["v2"].size() == 2);
  CHECK(runs["v1"][0].verdict->damage_level == 4);
  CHECK(runs["v2"][0].verdict->damage_level == 6);
  CHECK(runs["v1"][0].prompt_version == "v1");
  CHECK(runs["v2"][0].prompt_version == "v2");
}
