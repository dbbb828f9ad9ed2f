#include <doctest.h>

#include <cstdio>
#include <random>

#include <nlohmann/json.hpp>

#include "quake3m/assess.hpp"
#include "testutil.hpp"

// End-to-end runs of the installed binary (path injected by the build).

using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  std::string cmd = std::string(QUAKE3M_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult result;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) result.output.append(buf, n);
  int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string data_path(const std::string& name) { return (testutil::data_dir() / name).string(); }

// Config with a scripted backend; gazetteer/terms point at the bundled data.
void write_mock_config(const std::filesystem::path& path, const std::string& extra_script_rules = "") {
  std::string script_rules = extra_script_rules.empty() ? "[]" : extra_script_rules;
  std::string config = R"({
  "event": {"name": "2019 Ridgecrest", "epicenter": {"lat": 35.766, "lon": -117.605},
            "country": "US", "start": "2019-07-04T00:00:00Z", "end": "2019-07-10T23:59:59Z"},
  "backend": {"name": "mock", "model_id": "mock-model", "mode": "script"},
  "modality": "text",
  "prompt_version": "v1",
  "parallelism": 2,
  "gazetteer": ")" + data_path("gazetteer.tsv") + R"(",
  "term_libraries": [")" + data_path("terms.en.txt") + R"(", ")" + data_path("terms.ja.txt") + R"("],
  "script": {
    "location": "{\"reasoning\":\"geo\",\"location\":\"Ridgecrest, CA\"}",
    "event": "{\"reasoning\":\"quake\",\"is_event_related\":\"Yes\"}",
    "damage": "{\"human_impact\":1,\"damage_type\":\"Exterior\",\"damage_level\":5,\"reasoning\":\"debris on the road\",\"confidence\":0.8}",
    "rules": )" + script_rules + R"(
  }
})";
  testutil::write_file(path, config);
}

}  // namespace

TEST_CASE("cli filter: planted-truth fixture") {
  testutil::TempDir tmp;
  // 200 records, 120 with a planted EN or JA damage term.
  std::string corpus;
  int planted = 0;
  for (int i = 0; i < 200; ++i) {
    bool plant = i % 5 != 2 && planted < 120;  // 120 planted, deterministic
    std::string text;
    if (plant) {
      text = (i % 3 == 0) ? "building damage on main street " + std::to_string(i)
                          : (i % 3 == 1) ? "夜中に停電があった " + std::to_string(i)
                                         : "the old wall collapsed " + std::to_string(i);
      ++planted;
    } else {
      text = "calm evening walk number " + std::to_string(i);
    }
    corpus += json{{"id", "t" + std::to_string(i)}, {"text", text}}.dump() + "\n";
  }
  REQUIRE(planted == 120);
  testutil::write_file(tmp.file("corpus.jsonl"), corpus);

  auto result = run_cli("filter --corpus " + tmp.file("corpus.jsonl").string() + " --terms " +
                        data_path("terms.en.txt") + " --terms " + data_path("terms.ja.txt") +
                        " --out " + tmp.file("filtered.jsonl").string());
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("retained 120") != std::string::npos);

  std::string filtered = testutil::read_file(tmp.file("filtered.jsonl"));
  CHECK(std::count(filtered.begin(), filtered.end(), '\n') == 120);

  // Idempotence: filtering the filtered output keeps all 120.
  auto again = run_cli("filter --corpus " + tmp.file("filtered.jsonl").string() + " --terms " +
                       data_path("terms.en.txt") + " --terms " + data_path("terms.ja.txt") +
                       " --out " + tmp.file("filtered2.jsonl").string());
  CHECK(again.exit_code == 0);
  CHECK(testutil::read_file(tmp.file("filtered2.jsonl")) == filtered);
}

TEST_CASE("cli filter: empty corpus exits 0 with 0 retained") {
  testutil::TempDir tmp;
  testutil::write_file(tmp.file("empty.jsonl"), "");
  auto result = run_cli("filter --corpus " + tmp.file("empty.jsonl").string() + " --terms " +
                        data_path("terms.en.txt") + " --out " + tmp.file("out.jsonl").string());
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("retained 0") != std::string::npos);
}

TEST_CASE("cli assess: mock end-to-end on a 100-record fixture") {
  testutil::TempDir tmp;
  write_mock_config(tmp.file("config.json"));
  std::string corpus;
  for (int i = 0; i < 100; ++i) {
    json j{{"id", "t" + std::to_string(i)}, {"text", "road damage report " + std::to_string(i)}};
    if (i % 2 == 0) {
      j["lat"] = 35.0 + (i % 25) * 0.05;
      j["lon"] = -118.2 + (i % 10) * 0.1;
    }
    corpus += j.dump() + "\n";
  }
  testutil::write_file(tmp.file("corpus.jsonl"), corpus);

  auto result = run_cli("assess --corpus " + tmp.file("corpus.jsonl").string() + " --config " +
                        tmp.file("config.json").string() + " --out " + tmp.file("run1").string());
  REQUIRE(result.exit_code == 0);

  std::string lines = testutil::read_file(tmp.file("run1") / "assessments.jsonl");
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 100);

  json manifest = json::parse(testutil::read_file(tmp.file("run1") / "manifest.json"));
  CHECK(manifest["counts"]["total"] == 100);
  CHECK(manifest["counts"]["assessed"].get<int>() +
            manifest["counts"]["not_event"].get<int>() +
            manifest["counts"]["unresolved_location"].get<int>() +
            manifest["counts"]["filtered_out"].get<int>() +
            manifest["counts"]["parse_failed"].get<int>() ==
        100);

  // Determinism: a rerun produces byte-identical assessment output.
  auto rerun = run_cli("assess --corpus " + tmp.file("corpus.jsonl").string() + " --config " +
                       tmp.file("config.json").string() + " --parallelism 8 --out " +
                       tmp.file("run2").string());
  REQUIRE(rerun.exit_code == 0);
  CHECK(testutil::read_file(tmp.file("run2") / "assessments.jsonl") == lines);
  json manifest2 = json::parse(testutil::read_file(tmp.file("run2") / "manifest.json"));
  CHECK(manifest2["outputs"]["assessments"]["sha256"] == manifest["outputs"]["assessments"]["sha256"]);

  // GeoJSON present and well-formed.
  json geo = json::parse(testutil::read_file(tmp.file("run1") / "assessments.geojson"));
  CHECK(geo["type"] == "FeatureCollection");
  CHECK(geo["features"].size() == 100);
}

TEST_CASE("cli assess: image modality on a text-only fixture reports the missing-image path") {
  testutil::TempDir tmp;
  write_mock_config(tmp.file("config.json"));
  std::string corpus;
  for (int i = 0; i < 5; ++i) {
    corpus += json{{"id", "t" + std::to_string(i)},
                   {"text", "damage " + std::to_string(i)},
                   {"lat", 35.6},
                   {"lon", -117.6}}
                  .dump() +
              "\n";
  }
  testutil::write_file(tmp.file("corpus.jsonl"), corpus);
  auto result = run_cli("assess --corpus " + tmp.file("corpus.jsonl").string() + " --config " +
                        tmp.file("config.json").string() + " --modality image --out " +
                        tmp.file("run").string());
  REQUIRE(result.exit_code == 0);
  auto records = quake3m::assess::records_from_jsonl_file(tmp.file("run") / "assessments.jsonl");
  REQUIRE(records.size() == 5);
  for (const auto& rec : records) {
    CHECK(rec.outcome == quake3m::assess::Outcome::parse_failed);
  }
}

TEST_CASE("cli validate: planted city field recovers a strong correlation") {
  testutil::TempDir tmp;
  // Planted: three cities, model mean level tracks DYFI cdi exactly.
  write_mock_config(tmp.file("config.json"), R"([
    {"stage":"location","contains":"alpha","response":"{\"reasoning\":\"x\",\"location\":\"Ridgecrest\"}"},
    {"stage":"location","contains":"beta","response":"{\"reasoning\":\"x\",\"location\":\"Trona\"}"},
    {"stage":"location","contains":"gamma","response":"{\"reasoning\":\"x\",\"location\":\"Barstow\"}"},
    {"stage":"damage","contains":"alpha","response":"{\"human_impact\":1,\"damage_type\":\"Exterior\",\"damage_level\":7,\"reasoning\":\"r\",\"confidence\":0.9}"},
    {"stage":"damage","contains":"beta","response":"{\"human_impact\":1,\"damage_type\":\"Exterior\",\"damage_level\":5,\"reasoning\":\"r\",\"confidence\":0.8}"},
    {"stage":"damage","contains":"gamma","response":"{\"human_impact\":0,\"damage_type\":\"Exterior\",\"damage_level\":3,\"reasoning\":\"r\",\"confidence\":0.7}"}
  ])");
  std::string corpus;
  int id = 0;
  for (const char* marker : {"alpha", "beta", "gamma"}) {
    for (int i = 0; i < 4; ++i) {
      corpus += json{{"id", "t" + std::to_string(id++)},
                     {"text", std::string("damage ") + marker + " " + std::to_string(i)}}
                    .dump() +
                "\n";
    }
  }
  testutil::write_file(tmp.file("corpus.jsonl"), corpus);
  testutil::write_file(tmp.file("dyfi.csv"),
                       "location_id,cdi,nresp,lat,lon\n"
                       "Ridgecrest,7.1,100,35.6225,-117.6709\n"
                       "Trona,5.2,40,35.7624,-117.3723\n"
                       "Barstow,3.1,25,34.8958,-117.0173\n");

  auto assess = run_cli("assess --corpus " + tmp.file("corpus.jsonl").string() + " --config " +
                        tmp.file("config.json").string() + " --out " + tmp.file("run").string());
  REQUIRE(assess.exit_code == 0);

  auto validate = run_cli("validate --assessments " + (tmp.file("run") / "assessments.jsonl").string() +
                          " --dyfi " + tmp.file("dyfi.csv").string() + " --config " +
                          tmp.file("config.json").string() + " --weight-nresp --out " +
                          tmp.file("val").string());
  REQUIRE(validate.exit_code == 0);
  json report = json::parse(testutil::read_file(tmp.file("val") / "report.json"));
  CHECK(report["city_r"].get<double>() >= 0.9);
  CHECK(report["n_matched"] == 3);
  CHECK(report.contains("exterior"));
  CHECK(report["exterior"]["n_tweets"] == 12);
  std::string scatter = testutil::read_file(tmp.file("val") / "scatter.csv");
  CHECK(scatter.rfind("distance_km,mmi", 0) == 0);
}

TEST_CASE("cli validate: too few matched cities exits 2") {
  testutil::TempDir tmp;
  write_mock_config(tmp.file("config.json"));
  testutil::write_file(tmp.file("corpus.jsonl"),
                       json{{"id", "a"}, {"text", "damage"}, {"lat", 35.6225}, {"lon", -117.6709}}.dump() +
                           "\n");
  testutil::write_file(tmp.file("dyfi.csv"), "location_id,cdi,nresp,lat,lon\nNowhere,3.0,5,10.0,10.0\n");
  auto assess = run_cli("assess --corpus " + tmp.file("corpus.jsonl").string() + " --config " +
                        tmp.file("config.json").string() + " --out " + tmp.file("run").string());
  REQUIRE(assess.exit_code == 0);
  auto validate = run_cli("validate --assessments " + (tmp.file("run") / "assessments.jsonl").string() +
                          " --dyfi " + tmp.file("dyfi.csv").string() + " --config " +
                          tmp.file("config.json").string() + " --out " + tmp.file("val").string());
  CHECK(validate.exit_code == 2);
}

TEST_CASE("cli sensitivity: constant scripted backend gives zero stds") {
  testutil::TempDir tmp;
  write_mock_config(tmp.file("config.json"));
  std::string corpus;
  for (int i = 0; i < 8; ++i) {
    corpus += json{{"id", "t" + std::to_string(i)},
                   {"text", "damage " + std::to_string(i)},
                   {"lat", 35.6},
                   {"lon", -117.6}}
                  .dump() +
              "\n";
  }
  testutil::write_file(tmp.file("corpus.jsonl"), corpus);
  auto result = run_cli("sensitivity --corpus " + tmp.file("corpus.jsonl").string() + " --config " +
                        tmp.file("config.json").string() + " --sample 5 --seed 42 --out " +
                        tmp.file("sens").string());
  REQUIRE(result.exit_code == 0);
  json report = json::parse(testutil::read_file(tmp.file("sens") / "sensitivity.json"));
  REQUIRE(report["versions"].size() == 7);
  for (const auto& row : report["versions"]) {
    CHECK(row["DL_std"].get<double>() == 0.0);
    CHECK(row["Conf_std"].get<double>() == 0.0);
    CHECK(row["n"] == 5);
  }
  CHECK(report["sample_size"] == 5);

  // Same seed, same sample: byte-identical report.
  auto rerun = run_cli("sensitivity --corpus " + tmp.file("corpus.jsonl").string() + " --config " +
                       tmp.file("config.json").string() + " --sample 5 --seed 42 --out " +
                       tmp.file("sens2").string());
  REQUIRE(rerun.exit_code == 0);
  CHECK(testutil::read_file(tmp.file("sens2") / "sensitivity.json") ==
        testutil::read_file(tmp.file("sens") / "sensitivity.json"));
}

TEST_CASE("cli exit codes: config and data errors") {
  testutil::TempDir tmp;
  SUBCASE("bad config exits 1 and lists every problem") {
    testutil::write_file(tmp.file("bad.json"), R"({"modality": "nope", "parallelism": 0})");
    testutil::write_file(tmp.file("c.jsonl"), "");
    auto result = run_cli("assess --corpus " + tmp.file("c.jsonl").string() + " --config " +
                          tmp.file("bad.json").string() + " --out " + tmp.file("out").string());
    CHECK(result.exit_code == 1);
    CHECK(result.output.find("event object is required") != std::string::npos);
    CHECK(result.output.find("modality") != std::string::npos);
    CHECK(result.output.find("parallelism") != std::string::npos);
    CHECK(result.output.find("gazetteer") != std::string::npos);
  }
  SUBCASE("missing corpus exits 2") {
    write_mock_config(tmp.file("config.json"));
    auto result = run_cli("assess --corpus /nonexistent.jsonl --config " +
                          tmp.file("config.json").string() + " --out " + tmp.file("out").string());
    CHECK(result.exit_code == 2);
  }
  SUBCASE("usage error exits nonzero") {
    auto result = run_cli("assess");
    CHECK(result.exit_code != 0);
  }
}
