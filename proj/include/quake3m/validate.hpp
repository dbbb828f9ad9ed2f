#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "quake3m/assess.hpp"
#include "quake3m/errors.hpp"
#include "quake3m/geopoint.hpp"

#include <nlohmann/json_fwd.hpp>

namespace quake3m::validate {

class StatsError : public Error {
 public:
  using Error::Error;
};

// Pearson r is undefined for a constant series.
class ConstantSeriesError : public StatsError {
 public:
  using StatsError::StatsError;
};

// A contingency-table margin is zero (expected cell count 0), or all
// annotations fall into one category (expected disagreement 0).
class DegenerateInputError : public StatsError {
 public:
  using StatsError::StatsError;
};

// Not enough matched points to correlate.
class TooFewPointsError : public StatsError {
 public:
  using StatsError::StatsError;
};

class EmptyBucketError : public StatsError {
 public:
  using StatsError::StatsError;
};

// Sample Pearson correlation; requires equal lengths >= 2 and non-constant
// series.
double pearson_r(std::span<const double> x, std::span<const double> y);

// Pearson r with non-negative observation weights (used by --weight-nresp).
double weighted_pearson_r(std::span<const double> x, std::span<const double> y,
                          std::span<const double> w);

struct ContingencyTable {
  std::vector<std::vector<double>> cells;  // rows x cols, non-negative counts

  double n() const;
  std::size_t rows() const { return cells.size(); }
  std::size_t cols() const { return cells.empty() ? 0 : cells.front().size(); }
  std::size_t k() const;  // min(rows, cols)
};

// Pearson chi-squared statistic, no continuity correction. Throws
// DegenerateInputError when any margin is zero.
double chi_squared(const ContingencyTable& t);

// V = sqrt(chi2 / (n * (k - 1))), k = min(rows, cols) >= 2.
double cramers_v(const ContingencyTable& t);

// Two-coder nominal annotations; labels are opaque category names.
struct AnnotationPair {
  std::vector<std::pair<std::string, std::string>> items;
};

// alpha = 1 - Do/De with Do the per-item disagreement rate and De the chance
// disagreement from pooled label frequencies p(c) = n_c / 2N. Throws
// DegenerateInputError when De = 0.
double krippendorff_alpha(const AnnotationPair& pairs);

struct DyfiRecord {
  std::string location_id;
  double cdi = 0.0;   // MMI-scale intensity, [1, 10]
  int nresp = 0;
  GeoPoint point;
};

// Maps canonical columns (location_id, cdi, nresp, lat, lon) to CSV headers,
// e.g. to adapt USGS cdi_geo exports.
struct DyfiColumnMapping {
  std::map<std::string, std::string> columns;
};

std::vector<DyfiRecord> load_dyfi_csv(const std::filesystem::path& path,
                                      const DyfiColumnMapping* mapping = nullptr);

struct CityJoin {
  std::string city;
  double mean_mmi = 0.0;
  double cdi = 0.0;
  int nresp = 0;
  int n_tweets = 0;
  double distance_km = 0.0;
  std::string dyfi_id;
};

struct JoinResult {
  std::vector<CityJoin> matched;
  std::vector<std::string> unmatched_cities;
};

// Nearest DYFI box within max_km per city aggregate; exact name match as a
// fallback. One box may serve several cities.
JoinResult join_with_dyfi(const std::vector<assess::CityAggregate>& aggregates,
                          const std::vector<DyfiRecord>& dyfi, double max_km = 30.0);

struct AttenuationResult {
  double r = 0.0;
  std::vector<std::pair<double, double>> pairs;  // (distance_km, mmi)
};

// Tweet-level Pearson r between epicentral distance and assessed MMI;
// physically consistent data trends negative.
AttenuationResult distance_attenuation(const std::vector<assess::AssessmentRecord>& records,
                                       const GeoPoint& epicenter);

struct VersionStats {
  std::string version;
  int n = 0;
  double dl_mean = 0.0;
  double dl_std = 0.0;    // population std
  double conf_mean = 0.0;
  double conf_std = 0.0;
};

struct CategoricalSensitivity {
  double v = 0.0;
  bool degenerate = false;  // fewer than 2 observed categories; V reported as 0
};

struct SensitivityReport {
  std::vector<VersionStats> versions;  // ordered v1..v7 as supplied
  CategoricalSensitivity human_impact;
  CategoricalSensitivity damage_type;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;  // aligned text, DL_mean / DL_std / Conf_mean / Conf_std per version
};

// Per-version mean/std of damage level and confidence plus Cramer's V of the
// version x category tables for human_impact and damage_type. Each supplied
// version needs >= 1 assessed record.
SensitivityReport prompt_sensitivity(
    const std::map<std::string, std::vector<assess::AssessmentRecord>>& runs);

struct MmiBucket {
  int lo = 0;
  int hi = 0;  // inclusive
  std::string label;
};

std::vector<MmiBucket> per_level_buckets();              // 0..10, one per level
std::vector<MmiBucket> grouped_buckets();                // {0-3, 4-5, 6-9}

struct RankedTerm {
  std::string term;
  double score = 0.0;
  int tf = 0;
};

// Documents are the concatenated reasoning texts per bucket; tf is the raw
// in-bucket count, idf = ln(B / df). Terms scoring 0 are excluded; ranking is
// by score descending then term ascending. Throws EmptyBucketError when a
// bucket has no assessed records.
std::vector<std::vector<RankedTerm>> tfidf_by_mmi(const std::vector<assess::AssessmentRecord>& records,
                                                  const std::vector<MmiBucket>& buckets, int top_k,
                                                  const std::set<std::string>& stopwords = {});

std::set<std::string> load_stopwords(const std::filesystem::path& path);
const std::set<std::string>& builtin_stopwords_en();
const std::set<std::string>& builtin_stopwords_ja();

struct ExteriorCorrelation {
  double r = 0.0;
  int n_tweets = 0;   // records with damage_type in {Exterior, Both}
  int n_cities = 0;   // matched city aggregates behind r
};

// City-level correlation restricted to exterior-damage records. Throws
// TooFewPointsError with < 2 matched cities.
ExteriorCorrelation exterior_subset_correlation(const std::vector<assess::AssessmentRecord>& records,
                                                const std::vector<DyfiRecord>& dyfi, double max_km = 30.0);

struct BucketTerms {
  std::string label;
  std::vector<RankedTerm> terms;
};

struct ValidationReport {
  int n_assessed = 0;
  int n_cities = 0;
  JoinResult join;
  std::optional<double> city_r;           // unset when < 2 matched cities or degenerate
  std::string city_r_note;                // why city_r is unset
  std::optional<double> city_r_weighted;  // by DYFI response counts, on request
  std::optional<AttenuationResult> attenuation;
  std::optional<ExteriorCorrelation> exterior;
  std::string exterior_note;              // set when the subset was too small
  std::optional<double> annotation_alpha;
  std::vector<BucketTerms> reasoning_terms;  // TF-IDF over non-empty MMI buckets

  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
  std::string scatter_csv() const;  // distance_km,mmi rows
};

struct ValidationOptions {
  double max_join_km = 30.0;
  bool weight_nresp = false;
  std::vector<MmiBucket> tfidf_buckets;  // defaults to the grouped preset
  int tfidf_top_k = 10;
  std::set<std::string> stopwords;       // defaults to the bundled EN+JA lists
};

ValidationReport build_validation_report(const std::vector<assess::AssessmentRecord>& records,
                                         const std::vector<DyfiRecord>& dyfi, const GeoPoint& epicenter,
                                         const ValidationOptions& options = {});

}  // namespace quake3m::validate
