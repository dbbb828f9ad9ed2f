// quake3m: multilingual multimodal earthquake damage assessment pipeline.
//
// Subcommands: filter (damage-term filter), assess (full per-tweet pipeline),
// validate (DYFI comparison + statistics), sensitivity (prompt paraphrase
// robustness). Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 backend error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "quake3m/assess.hpp"
#include "quake3m/corpus.hpp"
#include "quake3m/geo.hpp"
#include "quake3m/mllm.hpp"
#include "quake3m/prompts.hpp"
#include "quake3m/validate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace quake3m;

namespace {

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

std::string now_utc_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// ---------------- config ----------------

struct ScriptRule {
  std::string contains;
  std::string stage;  // location | event | damage | empty = any
  std::string response;
};

struct ScriptSpec {
  std::string location_response;
  std::string event_response;
  std::string damage_response;
  std::vector<ScriptRule> rules;
};

struct CliConfig {
  geo::EventConfig event;
  std::map<std::string, mllm::BackendProfile> backends;
  std::string default_backend;
  prompts::Modality modality = prompts::Modality::fusion;
  std::string prompt_version = "v1";
  int parallelism = 1;
  bool recheck_filter = false;
  fs::path gazetteer_path;
  std::vector<fs::path> term_library_paths;
  std::optional<ScriptSpec> script;
  std::optional<corpus::CsvMapping> csv_columns;
  std::optional<validate::DyfiColumnMapping> dyfi_columns;
  std::vector<fs::path> stopword_paths;
  fs::path config_path;
};

mllm::BackendProfile backend_from_json(const json& j, const fs::path& base_dir,
                                       std::vector<std::string>& problems, const std::string& where) {
  mllm::BackendProfile b;
  b.name = j.value("name", std::string{});
  if (b.name.empty()) problems.push_back(where + ": backend.name is required");
  b.base_url = j.value("base_url", std::string{});
  b.model_id = j.value("model_id", std::string{});
  if (b.model_id.empty()) problems.push_back(where + ": backend.model_id is required");
  b.requests_per_minute = j.value("requests_per_minute", 60);
  if (b.requests_per_minute < 1) problems.push_back(where + ": requests_per_minute must be >= 1");
  b.max_retries = j.value("max_retries", 3);
  if (b.max_retries < 0) problems.push_back(where + ": max_retries must be >= 0");
  b.max_in_flight = j.value("max_in_flight", 8);
  std::string mode = j.value("mode", "script");
  auto parsed_mode = mllm::backend_mode_from_name(mode);
  if (!parsed_mode) {
    problems.push_back(where + ": unknown backend mode '" + mode + "'");
  } else {
    b.mode = *parsed_mode;
  }
  if (j.contains("transcript") && j["transcript"].is_string()) {
    b.transcript_path = (base_dir / j["transcript"].get<std::string>()).string();
  }
  if (b.mode == mllm::BackendMode::live && b.base_url.empty()) {
    problems.push_back(where + ": live backend needs base_url");
  }
  if (b.mode == mllm::BackendMode::replay && b.transcript_path.empty()) {
    problems.push_back(where + ": replay backend needs transcript");
  }
  return b;
}

// Loads and validates the run config, collecting every problem before failing.
CliConfig load_config(const fs::path& path) {
  json j = json::parse(read_file_bytes(path), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("config is not a JSON object: " + path.string());
  }

  std::vector<std::string> problems;
  CliConfig cfg;
  cfg.config_path = path;
  fs::path base_dir = path.parent_path();

  if (!j.contains("event") || !j["event"].is_object()) {
    problems.push_back("event object is required");
  } else {
    const json& e = j["event"];
    cfg.event.event_name = e.value("name", std::string{});
    if (e.contains("epicenter") && e["epicenter"].is_object()) {
      cfg.event.epicenter.lat = e["epicenter"].value("lat", 0.0);
      cfg.event.epicenter.lon = e["epicenter"].value("lon", 0.0);
    } else {
      problems.push_back("event.epicenter {lat, lon} is required");
    }
    cfg.event.country = e.value("country", std::string{});
    cfg.event.start_utc = e.value("start", std::string{});
    cfg.event.end_utc = e.value("end", std::string{});
    try {
      cfg.event.validate();
    } catch (const ConfigError& err) {
      problems.push_back(err.what());
    }
  }

  if (j.contains("backends") && j["backends"].is_object()) {
    for (auto it = j["backends"].begin(); it != j["backends"].end(); ++it) {
      json entry = it.value();
      if (!entry.contains("name")) entry["name"] = it.key();
      cfg.backends[it.key()] = backend_from_json(entry, base_dir, problems, "backends." + it.key());
    }
    cfg.default_backend = j.value("default_backend", std::string{});
    if (cfg.default_backend.empty() && !cfg.backends.empty()) {
      cfg.default_backend = cfg.backends.begin()->first;
    }
  } else if (j.contains("backend") && j["backend"].is_object()) {
    auto b = backend_from_json(j["backend"], base_dir, problems, "backend");
    cfg.default_backend = b.name.empty() ? "default" : b.name;
    cfg.backends[cfg.default_backend] = std::move(b);
  } else {
    problems.push_back("backend (or backends) object is required");
  }

  std::string modality = j.value("modality", "fusion");
  if (auto m = prompts::modality_from_name(modality)) {
    cfg.modality = *m;
  } else {
    problems.push_back("unknown modality '" + modality + "' (use text|image|fusion)");
  }
  cfg.prompt_version = j.value("prompt_version", "v1");
  try {
    prompts::prompt_version(cfg.prompt_version);
  } catch (const ConfigError& err) {
    problems.push_back(err.what());
  }
  cfg.parallelism = j.value("parallelism", 1);
  if (cfg.parallelism < 1) problems.push_back("parallelism must be >= 1");
  cfg.recheck_filter = j.value("recheck_filter", false);

  if (j.contains("gazetteer") && j["gazetteer"].is_string()) {
    cfg.gazetteer_path = base_dir / j["gazetteer"].get<std::string>();
  } else {
    problems.push_back("gazetteer path is required");
  }
  if (j.contains("term_libraries") && j["term_libraries"].is_array()) {
    for (const auto& t : j["term_libraries"]) {
      if (t.is_string()) cfg.term_library_paths.push_back(base_dir / t.get<std::string>());
    }
  }
  if (j.contains("stopwords") && j["stopwords"].is_array()) {
    for (const auto& t : j["stopwords"]) {
      if (t.is_string()) cfg.stopword_paths.push_back(base_dir / t.get<std::string>());
    }
  }

  if (j.contains("script") && j["script"].is_object()) {
    ScriptSpec spec;
    const json& s = j["script"];
    spec.location_response = s.value("location", std::string{});
    spec.event_response = s.value("event", std::string{});
    spec.damage_response = s.value("damage", std::string{});
    if (s.contains("rules") && s["rules"].is_array()) {
      for (const auto& r : s["rules"]) {
        ScriptRule rule;
        rule.contains = r.value("contains", std::string{});
        rule.stage = r.value("stage", std::string{});
        rule.response = r.value("response", std::string{});
        spec.rules.push_back(std::move(rule));
      }
    }
    cfg.script = std::move(spec);
  }

  if (j.contains("csv_columns") && j["csv_columns"].is_object()) {
    corpus::CsvMapping mapping;
    for (auto it = j["csv_columns"].begin(); it != j["csv_columns"].end(); ++it) {
      mapping.columns[it.key()] = it.value().get<std::string>();
    }
    cfg.csv_columns = std::move(mapping);
  }
  if (j.contains("dyfi_columns") && j["dyfi_columns"].is_object()) {
    validate::DyfiColumnMapping mapping;
    for (auto it = j["dyfi_columns"].begin(); it != j["dyfi_columns"].end(); ++it) {
      mapping.columns[it.key()] = it.value().get<std::string>();
    }
    cfg.dyfi_columns = std::move(mapping);
  }

  if (!problems.empty()) {
    std::string msg = "config " + path.string() + " has " + std::to_string(problems.size()) +
                      " problem(s):";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
  return cfg;
}

// Stage classification keys on the JSON schema markers each prompt carries.
std::string stage_of_request(const mllm::ChatRequest& req) {
  const std::string& text = req.user_parts.empty() ? std::string{} : req.user_parts.front().text;
  if (text.find("\"location\"") != std::string::npos) return "location";
  if (text.find("\"is_event_related\"") != std::string::npos) return "event";
  return "damage";
}

mllm::ScriptResponder make_script_responder(const ScriptSpec& spec) {
  return [spec](const mllm::ChatRequest& req) -> mllm::ChatResponse {
    std::string stage = stage_of_request(req);
    const std::string& text = req.user_parts.front().text;
    for (const auto& rule : spec.rules) {
      if (!rule.stage.empty() && rule.stage != stage) continue;
      if (!rule.contains.empty() && text.find(rule.contains) == std::string::npos) continue;
      return mllm::ChatResponse{rule.response, mllm::FinishReason::complete, 0};
    }
    const std::string* body = &spec.damage_response;
    if (stage == "location") body = &spec.location_response;
    if (stage == "event") body = &spec.event_response;
    return mllm::ChatResponse{*body, mllm::FinishReason::complete, 0};
  };
}

struct PipelineBundle {
  assess::PipelineConfig config;
  std::shared_ptr<mllm::ChatClient> client;
  std::unique_ptr<assess::Pipeline> pipeline;
};

struct Overrides {
  std::string backend;
  std::string modality;
  std::string prompt_version;
  int parallelism = 0;
};

PipelineBundle build_pipeline(const CliConfig& cli, const Overrides& overrides) {
  PipelineBundle bundle;
  assess::PipelineConfig cfg;
  cfg.event = cli.event;

  std::string backend_name = overrides.backend.empty() ? cli.default_backend : overrides.backend;
  auto it = cli.backends.find(backend_name);
  if (it == cli.backends.end()) {
    std::string names;
    for (const auto& [k, v] : cli.backends) names += k + " ";
    throw ConfigError("unknown backend '" + backend_name + "' (configured: " + names + ")");
  }
  cfg.backend = it->second;
  if (!overrides.modality.empty()) {
    auto m = prompts::modality_from_name(overrides.modality);
    if (!m) throw ConfigError("unknown modality '" + overrides.modality + "'");
    cfg.modality = *m;
  } else {
    cfg.modality = cli.modality;
  }
  cfg.prompt_version = overrides.prompt_version.empty() ? cli.prompt_version : overrides.prompt_version;
  cfg.parallelism = overrides.parallelism > 0 ? overrides.parallelism : cli.parallelism;
  cfg.recheck_filter = cli.recheck_filter;
  cfg.gazetteer_path = cli.gazetteer_path;
  cfg.term_library_paths = cli.term_library_paths;

  if (cfg.backend.mode == mllm::BackendMode::live) {
    std::string var = "QUAKE3M_API_KEY_" + cfg.backend.name;
    for (auto& c : var) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (!std::getenv(var.c_str())) {
      throw ConfigError("live backend '" + cfg.backend.name + "' needs " + var + " in the environment");
    }
  }
  if (cfg.backend.mode == mllm::BackendMode::script && !cli.script) {
    throw ConfigError("backend mode 'script' needs a script object in the config");
  }

  bundle.client = std::make_shared<mllm::ChatClient>(cfg.backend);
  if (cli.script && cfg.backend.mode == mllm::BackendMode::script) {
    bundle.client->set_script(make_script_responder(*cli.script));
  }

  geo::Gazetteer gazetteer = geo::Gazetteer::load(cfg.gazetteer_path);
  std::vector<corpus::TermLibrary> libraries;
  for (const auto& p : cfg.term_library_paths) libraries.push_back(corpus::load_term_library(p));

  bundle.config = cfg;
  bundle.pipeline = std::make_unique<assess::Pipeline>(cfg, bundle.client, std::move(gazetteer),
                                                       std::move(libraries));
  return bundle;
}

corpus::LoadResult load_corpus_any(const fs::path& path, const std::string& format,
                                   const corpus::CsvMapping* mapping) {
  corpus::CorpusFormat fmt;
  if (format == "jsonl") {
    fmt = corpus::CorpusFormat::jsonl;
  } else if (format == "csv") {
    fmt = corpus::CorpusFormat::csv;
  } else {
    throw ConfigError("unknown corpus format '" + format + "' (use jsonl|csv)");
  }
  auto result = corpus::load_corpus(path, fmt, mapping);
  for (const auto& m : result.malformed) {
    std::cerr << "warning: " << path.string() << " line " << m.line_number << ": " << m.reason
              << "\n";
  }
  return result;
}

// ---------------- subcommands ----------------

int run_filter(const fs::path& corpus_path, const std::string& format,
               std::vector<fs::path> term_paths, const std::optional<fs::path>& config_path,
               const std::optional<std::string>& require_keyword, const fs::path& out_path) {
  std::optional<corpus::CsvMapping> mapping;
  if (config_path) {
    auto cli = load_config(*config_path);
    if (term_paths.empty()) term_paths = cli.term_library_paths;
    mapping = cli.csv_columns;
  }
  if (term_paths.empty()) {
    throw ConfigError("no term libraries given (--terms or config term_libraries)");
  }

  auto loaded = load_corpus_any(corpus_path, format, mapping ? &*mapping : nullptr);
  std::vector<corpus::TermLibrary> libraries;
  for (const auto& p : term_paths) libraries.push_back(corpus::load_term_library(p));

  corpus::FilterOptions options;
  options.require_keyword = require_keyword;
  auto kept = corpus::filter_damage_related(loaded.records, libraries, options);

  std::string out;
  for (const auto& rec : kept) {
    ordered_json j;
    j["id"] = rec.id;
    if (rec.created_at) j["created_at"] = *rec.created_at;
    j["text"] = rec.text;
    if (rec.geotag) {
      j["lat"] = rec.geotag->lat;
      j["lon"] = rec.geotag->lon;
    }
    if (rec.profile_location) j["user_location"] = *rec.profile_location;
    if (!rec.media.empty()) {
      json media = json::array();
      for (const auto& m : rec.media) media.push_back(m.uri);
      j["media"] = media;
    }
    out += j.dump();
    out += "\n";
  }
  write_file_atomic(out_path, out);

  std::cout << "loaded " << loaded.records.size() << " records (" << loaded.malformed.size()
            << " malformed lines)\n"
            << "retained " << kept.size() << ", dropped " << loaded.records.size() - kept.size()
            << "\n"
            << "wrote " << out_path.string() << "\n";
  return 0;
}

int run_assess(const fs::path& corpus_path, const std::string& format, const fs::path& config_path,
               const Overrides& overrides, const fs::path& out_dir) {
  std::string started = now_utc_iso8601();
  auto cli = load_config(config_path);
  auto bundle = build_pipeline(cli, overrides);

  auto loaded = load_corpus_any(corpus_path, format, cli.csv_columns ? &*cli.csv_columns : nullptr);
  fs::create_directories(out_dir);

  fs::path assessments_path = out_dir / "assessments.jsonl";
  std::ofstream sink_file(assessments_path, std::ios::binary | std::ios::trunc);
  if (!sink_file) throw Error("cannot write " + assessments_path.string());

  std::size_t total = loaded.records.size();
  auto results = bundle.pipeline->assess_batch(
      loaded.records,
      [&](const assess::AssessmentRecord* records, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
          sink_file << assess::record_to_json(records[i]).dump() << "\n";
        }
        sink_file.flush();
      },
      [&](std::size_t done, std::size_t n) {
        if (done % 50 == 0 || done == n) {
          std::cerr << "assessed " << done << "/" << n << "\r";
        }
      });
  sink_file.close();
  if (total > 0) std::cerr << "\n";

  assess::BatchCounts counts;
  for (const auto& rec : results) {
    counts.add(rec.outcome);
    if (rec.outcome == assess::Outcome::parse_failed && !rec.diagnostic.empty()) {
      std::cerr << "note: " << rec.tweet_id << ": " << rec.diagnostic << "\n";
    }
  }

  fs::path geojson_path = out_dir / "assessments.geojson";
  std::string geojson = assess::to_geojson(results).dump(2);
  geojson += "\n";
  write_file_atomic(geojson_path, geojson);

  std::string assessments_bytes = read_file_bytes(assessments_path);
  ordered_json manifest;
  manifest["command"] = "assess";
  manifest["started_utc"] = started;
  manifest["finished_utc"] = now_utc_iso8601();
  manifest["config_sha256"] = mllm::sha256_hex(read_file_bytes(config_path));
  manifest["corpus_sha256"] = mllm::sha256_hex(read_file_bytes(corpus_path));
  manifest["backend"] = ordered_json{{"name", bundle.config.backend.name},
                                     {"model", bundle.config.backend.model_id},
                                     {"mode", mllm::backend_mode_name(bundle.config.backend.mode)}};
  manifest["modality"] = prompts::modality_name(bundle.config.modality);
  manifest["prompt_version"] = bundle.config.prompt_version;
  manifest["parallelism"] = bundle.config.parallelism;
  manifest["counts"] = counts.to_json();
  manifest["outputs"] = ordered_json{
      {"assessments",
       {{"path", assessments_path.string()}, {"sha256", mllm::sha256_hex(assessments_bytes)}}},
      {"geojson", {{"path", geojson_path.string()}, {"sha256", mllm::sha256_hex(geojson)}}}};
  write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");

  std::cout << counts.to_json().dump() << "\n"
            << "wrote " << assessments_path.string() << "\n";
  return 0;
}

int run_validate(const fs::path& assessments_path, const fs::path& dyfi_path,
                 const fs::path& config_path, double max_join_km, bool weight_nresp,
                 const std::optional<fs::path>& annotations_path, const fs::path& out_dir) {
  auto cli = load_config(config_path);
  auto records = assess::records_from_jsonl_file(assessments_path);
  auto dyfi = validate::load_dyfi_csv(dyfi_path, cli.dyfi_columns ? &*cli.dyfi_columns : nullptr);

  validate::ValidationOptions options;
  options.max_join_km = max_join_km;
  options.weight_nresp = weight_nresp;
  for (const auto& p : cli.stopword_paths) {
    auto words = validate::load_stopwords(p);
    options.stopwords.insert(words.begin(), words.end());
  }
  auto report = validate::build_validation_report(records, dyfi, cli.event.epicenter, options);

  if (annotations_path) {
    validate::AnnotationPair pairs;
    std::ifstream in(*annotations_path);
    if (!in) throw Error("cannot open annotations: " + annotations_path->string());
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        header = false;
        continue;
      }
      auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      pairs.items.emplace_back(line.substr(0, comma), line.substr(comma + 1));
    }
    report.annotation_alpha = validate::krippendorff_alpha(pairs);
  }

  if (report.join.matched.size() < 2) {
    std::cerr << "error: only " << report.join.matched.size()
              << " city aggregates matched a DYFI box; need >= 2 for correlation\n";
    return 2;
  }

  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "report.json", report.to_json().dump(2) + "\n");
  write_file_atomic(out_dir / "report.txt", report.to_text());
  write_file_atomic(out_dir / "scatter.csv", report.scatter_csv());
  std::cout << report.to_text();
  return 0;
}

int run_sensitivity(const fs::path& corpus_path, const std::string& format,
                    const fs::path& config_path, const Overrides& overrides, int sample_size,
                    unsigned seed, std::vector<std::string> versions, const fs::path& out_dir) {
  auto cli = load_config(config_path);
  auto bundle = build_pipeline(cli, overrides);
  auto loaded = load_corpus_any(corpus_path, format, cli.csv_columns ? &*cli.csv_columns : nullptr);

  if (versions.empty()) {
    for (const auto& v : prompts::prompt_versions()) versions.push_back(v.id);
  }
  if (versions.size() < 2) throw ConfigError("sensitivity needs at least 2 prompt versions");

  // Seeded sample of the corpus, preserving input order.
  std::vector<corpus::TweetRecord> sample = loaded.records;
  if (static_cast<int>(sample.size()) > sample_size) {
    std::mt19937 rng(seed);
    std::vector<std::size_t> indices(loaded.records.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(sample_size);
    std::sort(indices.begin(), indices.end());
    sample.clear();
    for (std::size_t i : indices) sample.push_back(loaded.records[i]);
  }

  auto runs = bundle.pipeline->assess_versions(sample, versions);
  auto report = validate::prompt_sensitivity(runs);

  fs::create_directories(out_dir);
  ordered_json out = report.to_json();
  out["sample_size"] = sample.size();
  out["seed"] = seed;
  write_file_atomic(out_dir / "sensitivity.json", out.dump(2) + "\n");
  write_file_atomic(out_dir / "sensitivity.txt", report.to_table());
  std::cout << report.to_table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quake3m: social-media earthquake damage assessment pipeline"};
  app.require_subcommand(1);

  // filter
  auto* filter = app.add_subcommand("filter", "apply the damage-term filter to a corpus");
  fs::path filter_corpus, filter_out;
  std::string filter_format = "jsonl";
  std::vector<fs::path> filter_terms;
  std::optional<fs::path> filter_config;
  std::optional<std::string> filter_keyword;
  filter->add_option("--corpus", filter_corpus, "corpus file (JSONL or CSV)")->required();
  filter->add_option("--format", filter_format, "corpus format: jsonl|csv");
  filter->add_option("--terms", filter_terms, "term library files (terms.<lang>.txt)");
  filter->add_option("--config", filter_config, "run config (for term libraries / csv mapping)");
  filter->add_option("--require-keyword", filter_keyword,
                     "also require this collection keyword in every retained record");
  filter->add_option("--out", filter_out, "output JSONL path")->required();

  // assess
  auto* assess_cmd = app.add_subcommand("assess", "run the full assessment pipeline");
  fs::path assess_corpus, assess_config, assess_out;
  std::string assess_format = "jsonl";
  Overrides assess_overrides;
  assess_cmd->add_option("--corpus", assess_corpus, "corpus file")->required();
  assess_cmd->add_option("--format", assess_format, "corpus format: jsonl|csv");
  assess_cmd->add_option("--config", assess_config, "run config JSON")->required();
  assess_cmd->add_option("--backend", assess_overrides.backend, "backend name from the config");
  assess_cmd->add_option("--modality", assess_overrides.modality, "text|image|fusion");
  assess_cmd->add_option("--prompt-version", assess_overrides.prompt_version, "v1..v7");
  assess_cmd->add_option("--parallelism", assess_overrides.parallelism, "worker count");
  assess_cmd->add_option("--out", assess_out, "output directory")->required();

  // validate
  auto* validate_cmd =
      app.add_subcommand("validate", "compare assessments against DYFI ground truth");
  fs::path val_assessments, val_dyfi, val_config, val_out;
  double val_max_km = 30.0;
  bool val_weight = false;
  std::optional<fs::path> val_annotations;
  validate_cmd->add_option("--assessments", val_assessments, "assessments.jsonl from assess")
      ->required();
  validate_cmd->add_option("--dyfi", val_dyfi, "DYFI CSV")->required();
  validate_cmd->add_option("--config", val_config, "run config JSON")->required();
  validate_cmd->add_option("--max-join-km", val_max_km, "max city-to-box join distance (default 30)");
  validate_cmd->add_flag("--weight-nresp", val_weight, "also report the nresp-weighted correlation");
  validate_cmd->add_option("--annotations", val_annotations,
                           "two-column CSV of coder labels for agreement");
  validate_cmd->add_option("--out", val_out, "output directory")->required();

  // sensitivity
  auto* sens = app.add_subcommand("sensitivity", "prompt paraphrase sensitivity analysis");
  fs::path sens_corpus, sens_config, sens_out;
  std::string sens_format = "jsonl";
  Overrides sens_overrides;
  int sens_sample = 50;
  unsigned sens_seed = 0;
  std::vector<std::string> sens_versions;
  sens->add_option("--corpus", sens_corpus, "corpus file")->required();
  sens->add_option("--format", sens_format, "corpus format: jsonl|csv");
  sens->add_option("--config", sens_config, "run config JSON")->required();
  sens->add_option("--backend", sens_overrides.backend, "backend name from the config");
  sens->add_option("--modality", sens_overrides.modality, "text|image|fusion");
  sens->add_option("--sample", sens_sample, "sample size (default 50)");
  sens->add_option("--seed", sens_seed, "sampling seed");
  sens->add_option("--versions", sens_versions, "prompt versions (default v1..v7)");
  sens->add_option("--out", sens_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*filter) {
      return run_filter(filter_corpus, filter_format, filter_terms, filter_config, filter_keyword,
                        filter_out);
    }
    if (*assess_cmd) {
      return run_assess(assess_corpus, assess_format, assess_config, assess_overrides, assess_out);
    }
    if (*validate_cmd) {
      return run_validate(val_assessments, val_dyfi, val_config, val_max_km, val_weight,
                          val_annotations, val_out);
    }
    if (*sens) {
      return run_sensitivity(sens_corpus, sens_format, sens_config, sens_overrides, sens_sample,
                             sens_seed, sens_versions, sens_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const mllm::MllmError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
