#include "quake3m/validate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "quake3m/geo.hpp"
#include "quake3m/text.hpp"

namespace quake3m::validate {

namespace {

using nlohmann::ordered_json;

bool all_equal(std::span<const double> xs) {
  for (double x : xs) {
    if (x != xs.front()) return false;
  }
  return true;
}

double mean_of(std::span<const double> xs) {
  if (all_equal(xs)) return xs.front();  // keep constant series exact
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(std::span<const double> xs) {
  if (all_equal(xs)) return 0.0;
  double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

// RFC4180-ish reader shared with nothing else; DYFI exports are plain CSV.
std::vector<std::vector<std::string>> read_csv_rows(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (any && (!field.empty() || !row.empty())) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError("pearson_r: series lengths differ");
  if (x.size() < 2) throw StatsError("pearson_r: need at least 2 points");
  if (all_equal(x) || all_equal(y)) {
    throw ConstantSeriesError("pearson_r: undefined for a constant series");
  }
  double mx = mean_of(x);
  double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx;
    double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw ConstantSeriesError("pearson_r: undefined for a constant series");
  }
  return sxy / std::sqrt(sxx * syy);
}

double weighted_pearson_r(std::span<const double> x, std::span<const double> y,
                          std::span<const double> w) {
  if (x.size() != y.size() || x.size() != w.size()) {
    throw StatsError("weighted_pearson_r: series lengths differ");
  }
  if (x.size() < 2) throw StatsError("weighted_pearson_r: need at least 2 points");
  double wsum = 0.0;
  for (double wi : w) {
    if (wi < 0.0) throw StatsError("weighted_pearson_r: negative weight");
    wsum += wi;
  }
  if (wsum <= 0.0) throw StatsError("weighted_pearson_r: weights sum to zero");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += w[i] * x[i];
    my += w[i] * y[i];
  }
  mx /= wsum;
  my /= wsum;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += w[i] * (x[i] - mx) * (y[i] - my);
    sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    syy += w[i] * (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw ConstantSeriesError("weighted_pearson_r: undefined for a constant series");
  }
  return sxy / std::sqrt(sxx * syy);
}

double ContingencyTable::n() const {
  double total = 0.0;
  for (const auto& row : cells) {
    for (double v : row) total += v;
  }
  return total;
}

std::size_t ContingencyTable::k() const { return std::min(rows(), cols()); }

double chi_squared(const ContingencyTable& t) {
  if (t.rows() == 0 || t.cols() == 0) throw StatsError("chi_squared: empty table");
  for (const auto& row : t.cells) {
    if (row.size() != t.cols()) throw StatsError("chi_squared: ragged table");
    for (double v : row) {
      if (v < 0.0) throw StatsError("chi_squared: negative count");
    }
  }
  double total = t.n();
  if (total <= 0.0) throw StatsError("chi_squared: empty table");

  std::vector<double> row_sum(t.rows(), 0.0);
  std::vector<double> col_sum(t.cols(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      row_sum[i] += t.cells[i][j];
      col_sum[j] += t.cells[i][j];
    }
  }
  for (double r : row_sum) {
    if (r == 0.0) throw DegenerateInputError("chi_squared: zero row margin");
  }
  for (double c : col_sum) {
    if (c == 0.0) throw DegenerateInputError("chi_squared: zero column margin");
  }

  double chi2 = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      double expected = row_sum[i] * col_sum[j] / total;
      double d = t.cells[i][j] - expected;
      chi2 += d * d / expected;
    }
  }
  return chi2;
}

double cramers_v(const ContingencyTable& t) {
  if (t.k() < 2) throw StatsError("cramers_v: need at least a 2x2 table");
  double chi2 = chi_squared(t);
  double v = std::sqrt(chi2 / (t.n() * (static_cast<double>(t.k()) - 1.0)));
  return std::min(v, 1.0);  // guard rounding just above 1
}

double krippendorff_alpha(const AnnotationPair& pairs) {
  const std::size_t n_items = pairs.items.size();
  if (n_items == 0) throw StatsError("krippendorff_alpha: no items");

  double disagreements = 0.0;
  std::unordered_map<std::string, double> counts;
  for (const auto& [a, b] : pairs.items) {
    if (a != b) disagreements += 1.0;
    counts[a] += 1.0;
    counts[b] += 1.0;
  }
  double observed = disagreements / static_cast<double>(n_items);

  // De = sum_{c1 != c2} p(c1) p(c2) = 1 - sum_c p(c)^2 with p(c) = n_c / 2N.
  double total = 2.0 * static_cast<double>(n_items);
  double sum_sq = 0.0;
  for (const auto& [label, count] : counts) {
    double p = count / total;
    sum_sq += p * p;
  }
  double expected = 1.0 - sum_sq;
  if (expected == 0.0) {
    throw DegenerateInputError("krippendorff_alpha: all annotations in one category");
  }
  return 1.0 - observed / expected;
}

std::vector<DyfiRecord> load_dyfi_csv(const std::filesystem::path& path,
                                      const DyfiColumnMapping* mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StatsError("cannot open DYFI file: " + path.string());
  auto rows = read_csv_rows(in);
  if (rows.empty()) return {};

  auto column_name = [&](const std::string& canonical) {
    if (mapping) {
      auto it = mapping->columns.find(canonical);
      if (it != mapping->columns.end()) return it->second;
    }
    return canonical;
  };
  std::map<std::string, std::size_t> header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) header[text::trim(rows[0][i])] = i;
  auto index_of = [&](const std::string& canonical) {
    auto it = header.find(column_name(canonical));
    if (it == header.end()) {
      throw StatsError("DYFI file " + path.string() + " is missing column '" +
                       column_name(canonical) + "'");
    }
    return it->second;
  };
  std::size_t id_col = index_of("location_id");
  std::size_t cdi_col = index_of("cdi");
  std::size_t nresp_col = index_of("nresp");
  std::size_t lat_col = index_of("lat");
  std::size_t lon_col = index_of("lon");

  std::vector<DyfiRecord> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && text::trim(row[0]).empty()) continue;
    std::size_t needed = std::max({id_col, cdi_col, nresp_col, lat_col, lon_col});
    if (row.size() <= needed) {
      throw StatsError("DYFI file " + path.string() + ": short row " + std::to_string(r + 1));
    }
    DyfiRecord rec;
    rec.location_id = text::trim(row[id_col]);
    try {
      rec.cdi = std::stod(row[cdi_col]);
      rec.nresp = std::stoi(row[nresp_col]);
      rec.point.lat = std::stod(row[lat_col]);
      rec.point.lon = std::stod(row[lon_col]);
    } catch (const std::exception&) {
      throw StatsError("DYFI file " + path.string() + ": bad numeric value in row " +
                       std::to_string(r + 1));
    }
    if (rec.cdi < 1.0 || rec.cdi > 10.0) {
      throw StatsError("DYFI file " + path.string() + ": cdi out of [1,10] in row " +
                       std::to_string(r + 1));
    }
    if (rec.nresp < 1) {
      throw StatsError("DYFI file " + path.string() + ": nresp < 1 in row " + std::to_string(r + 1));
    }
    if (!rec.point.valid()) {
      throw StatsError("DYFI file " + path.string() + ": coordinates out of range in row " +
                       std::to_string(r + 1));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

JoinResult join_with_dyfi(const std::vector<assess::CityAggregate>& aggregates,
                          const std::vector<DyfiRecord>& dyfi, double max_km) {
  if (max_km <= 0.0) throw StatsError("join_with_dyfi: max_km must be positive");
  JoinResult out;
  for (const auto& agg : aggregates) {
    const DyfiRecord* best = nullptr;
    double best_d = 0.0;
    for (const auto& rec : dyfi) {
      double d = geo::haversine_km(agg.point, rec.point);
      if (d > max_km) continue;
      if (!best || d < best_d || (d == best_d && rec.location_id < best->location_id)) {
        best = &rec;
        best_d = d;
      }
    }
    if (!best) {
      // Fallback: exact name match against the DYFI location id.
      std::string key = text::fold_key(agg.city_name);
      for (const auto& rec : dyfi) {
        if (text::fold_key(rec.location_id) == key) {
          best = &rec;
          best_d = geo::haversine_km(agg.point, rec.point);
          break;
        }
      }
    }
    if (best) {
      out.matched.push_back(CityJoin{agg.city_name, agg.mean_mmi, best->cdi, best->nresp, agg.n,
                                     best_d, best->location_id});
    } else {
      out.unmatched_cities.push_back(agg.city_name);
    }
  }
  return out;
}

AttenuationResult distance_attenuation(const std::vector<assess::AssessmentRecord>& records,
                                       const GeoPoint& epicenter) {
  AttenuationResult out;
  for (const auto& rec : records) {
    if (rec.outcome != assess::Outcome::assessed || !rec.verdict || !rec.resolved.point) continue;
    double d = geo::haversine_km(*rec.resolved.point, epicenter);
    out.pairs.emplace_back(d, static_cast<double>(prompts::verdict_mmi(*rec.verdict)));
  }
  if (out.pairs.size() < 2) {
    throw TooFewPointsError("distance_attenuation: need at least 2 assessed records with points");
  }
  std::vector<double> xs;
  std::vector<double> ys;
  xs.reserve(out.pairs.size());
  ys.reserve(out.pairs.size());
  for (const auto& [d, mmi] : out.pairs) {
    xs.push_back(d);
    ys.push_back(mmi);
  }
  out.r = pearson_r(xs, ys);
  return out;
}

namespace {

// version x category table over observed categories; degenerate when fewer
// than two categories (or versions) remain.
CategoricalSensitivity categorical_v(
    const std::map<std::string, std::vector<assess::AssessmentRecord>>& runs,
    const std::function<std::string(const prompts::DamageVerdict&)>& category_of) {
  std::vector<std::string> categories;
  std::map<std::string, std::size_t> category_index;
  std::vector<std::vector<double>> cells;
  for (const auto& [version, records] : runs) {
    std::vector<double> row;
    row.resize(categories.size(), 0.0);
    for (const auto& rec : records) {
      if (rec.outcome != assess::Outcome::assessed || !rec.verdict) continue;
      std::string cat = category_of(*rec.verdict);
      auto [it, inserted] = category_index.emplace(cat, categories.size());
      if (inserted) {
        categories.push_back(cat);
        for (auto& r : cells) r.push_back(0.0);
        row.push_back(0.0);
      }
      row[it->second] += 1.0;
    }
    cells.push_back(std::move(row));
  }
  CategoricalSensitivity out;
  if (categories.size() < 2 || cells.size() < 2) {
    out.degenerate = true;
    out.v = 0.0;
    return out;
  }
  ContingencyTable table{std::move(cells)};
  try {
    out.v = cramers_v(table);
  } catch (const DegenerateInputError&) {
    out.degenerate = true;
    out.v = 0.0;
  }
  return out;
}

}  // namespace

SensitivityReport prompt_sensitivity(
    const std::map<std::string, std::vector<assess::AssessmentRecord>>& runs) {
  if (runs.size() < 2) throw StatsError("prompt_sensitivity: need at least 2 versions");
  SensitivityReport report;
  for (const auto& [version, records] : runs) {
    std::vector<double> levels;
    std::vector<double> confidences;
    for (const auto& rec : records) {
      if (rec.outcome != assess::Outcome::assessed || !rec.verdict) continue;
      levels.push_back(static_cast<double>(rec.verdict->damage_level));
      confidences.push_back(rec.verdict->confidence);
    }
    if (levels.empty()) {
      throw StatsError("prompt_sensitivity: version " + version + " has no assessed records");
    }
    VersionStats stats;
    stats.version = version;
    stats.n = static_cast<int>(levels.size());
    stats.dl_mean = mean_of(levels);
    stats.dl_std = population_std(levels);
    stats.conf_mean = mean_of(confidences);
    stats.conf_std = population_std(confidences);
    report.versions.push_back(std::move(stats));
  }
  report.human_impact = categorical_v(runs, [](const prompts::DamageVerdict& v) {
    return std::to_string(v.human_impact);
  });
  report.damage_type = categorical_v(runs, [](const prompts::DamageVerdict& v) {
    return std::string(prompts::damage_type_token(v.damage_type));
  });
  return report;
}

ordered_json SensitivityReport::to_json() const {
  ordered_json j;
  ordered_json versions_json = ordered_json::array();
  for (const auto& v : versions) {
    ordered_json row;
    row["version"] = v.version;
    row["n"] = v.n;
    row["DL_mean"] = v.dl_mean;
    row["DL_std"] = v.dl_std;
    row["Conf_mean"] = v.conf_mean;
    row["Conf_std"] = v.conf_std;
    versions_json.push_back(std::move(row));
  }
  j["versions"] = std::move(versions_json);
  j["cramers_v"] = ordered_json{
      {"human_impact", {{"v", human_impact.v}, {"degenerate", human_impact.degenerate}}},
      {"damage_type", {{"v", damage_type.v}, {"degenerate", damage_type.degenerate}}}};
  return j;
}

std::string SensitivityReport::to_table() const {
  std::ostringstream out;
  out << "Prompt   DL_mean   DL_std   Conf_mean   Conf_std\n";
  for (const auto& v : versions) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-8s %7.3f  %7.3f  %9.3f  %9.3f\n", v.version.c_str(),
                  v.dl_mean, v.dl_std, v.conf_mean, v.conf_std);
    out << line;
  }
  out << "\nCramer's V  human_impact=" << fmt(human_impact.v, 3)
      << (human_impact.degenerate ? " (degenerate)" : "") << "  damage_type="
      << fmt(damage_type.v, 3) << (damage_type.degenerate ? " (degenerate)" : "") << "\n";
  return out.str();
}

std::vector<MmiBucket> per_level_buckets() {
  std::vector<MmiBucket> out;
  for (int level = 0; level <= 10; ++level) {
    out.push_back(MmiBucket{level, level, "mmi-" + std::to_string(level)});
  }
  return out;
}

std::vector<MmiBucket> grouped_buckets() {
  return {MmiBucket{0, 3, "mmi-0-3"}, MmiBucket{4, 5, "mmi-4-5"}, MmiBucket{6, 9, "mmi-6-9"}};
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StatsError("cannot open stopword list: " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string word = text::trim(line);
    if (word.empty() || word[0] == '#') continue;
    out.insert(text::fold_key(word));
  }
  return out;
}

std::vector<std::vector<RankedTerm>> tfidf_by_mmi(const std::vector<assess::AssessmentRecord>& records,
                                                  const std::vector<MmiBucket>& buckets, int top_k,
                                                  const std::set<std::string>& stopwords) {
  if (buckets.empty()) throw StatsError("tfidf_by_mmi: no buckets");
  if (top_k < 1) throw StatsError("tfidf_by_mmi: top_k must be >= 1");

  std::vector<std::map<std::string, int>> term_counts(buckets.size());
  std::vector<int> doc_sizes(buckets.size(), 0);
  for (const auto& rec : records) {
    if (rec.outcome != assess::Outcome::assessed || !rec.verdict) continue;
    int level = rec.verdict->damage_level;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      if (level < buckets[b].lo || level > buckets[b].hi) continue;
      for (const auto& token : text::tokenize(rec.verdict->reasoning)) {
        if (stopwords.count(token)) continue;
        ++term_counts[b][token];
        ++doc_sizes[b];
      }
      break;  // first matching bucket wins
    }
  }
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (doc_sizes[b] == 0) {
      throw EmptyBucketError("tfidf_by_mmi: bucket '" + buckets[b].label + "' is empty");
    }
  }

  std::map<std::string, int> doc_freq;
  for (const auto& counts : term_counts) {
    for (const auto& [term, count] : counts) ++doc_freq[term];
  }

  const double bucket_count = static_cast<double>(buckets.size());
  std::vector<std::vector<RankedTerm>> out(buckets.size());
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    std::vector<RankedTerm> ranked;
    for (const auto& [term, tf] : term_counts[b]) {
      double idf = std::log(bucket_count / static_cast<double>(doc_freq[term]));
      double score = static_cast<double>(tf) * idf;
      if (score <= 0.0) continue;  // terms present in every bucket score exactly 0
      ranked.push_back(RankedTerm{term, score, tf});
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedTerm& a, const RankedTerm& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.term < b.term;
    });
    if (static_cast<int>(ranked.size()) > top_k) ranked.resize(top_k);
    out[b] = std::move(ranked);
  }
  return out;
}

ExteriorCorrelation exterior_subset_correlation(const std::vector<assess::AssessmentRecord>& records,
                                                const std::vector<DyfiRecord>& dyfi, double max_km) {
  std::vector<assess::AssessmentRecord> subset;
  for (const auto& rec : records) {
    if (rec.outcome != assess::Outcome::assessed || !rec.verdict) continue;
    if (rec.verdict->damage_type == prompts::DamageType::Exterior ||
        rec.verdict->damage_type == prompts::DamageType::Both) {
      subset.push_back(rec);
    }
  }
  ExteriorCorrelation out;
  out.n_tweets = static_cast<int>(subset.size());

  auto aggregates = assess::aggregate_by_city(subset);
  JoinResult join = join_with_dyfi(aggregates, dyfi, max_km);
  out.n_cities = static_cast<int>(join.matched.size());
  if (join.matched.size() < 2) {
    throw TooFewPointsError("exterior_subset_correlation: fewer than 2 matched cities (" +
                            std::to_string(join.matched.size()) + ")");
  }
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& m : join.matched) {
    xs.push_back(m.mean_mmi);
    ys.push_back(m.cdi);
  }
  out.r = pearson_r(xs, ys);
  return out;
}

ordered_json ValidationReport::to_json() const {
  ordered_json j;
  j["n_assessed"] = n_assessed;
  j["n_cities"] = n_cities;
  j["n_matched"] = join.matched.size();
  j["n_unmatched"] = join.unmatched_cities.size();
  j["city_r"] = city_r ? ordered_json(*city_r) : ordered_json(nullptr);
  if (!city_r_note.empty()) j["city_r_note"] = city_r_note;
  j["city_r_weighted"] = city_r_weighted ? ordered_json(*city_r_weighted) : ordered_json(nullptr);
  if (attenuation) {
    j["attenuation"] = ordered_json{{"r", attenuation->r}, {"n", attenuation->pairs.size()}};
  } else {
    j["attenuation"] = nullptr;
  }
  if (exterior) {
    j["exterior"] = ordered_json{
        {"r", exterior->r}, {"n_tweets", exterior->n_tweets}, {"n_cities", exterior->n_cities}};
  } else {
    j["exterior"] = ordered_json{{"note", exterior_note}};
  }
  j["annotation_alpha"] = annotation_alpha ? ordered_json(*annotation_alpha) : ordered_json(nullptr);
  ordered_json cities = ordered_json::array();
  for (const auto& m : join.matched) {
    ordered_json row;
    row["city"] = m.city;
    row["mean_mmi"] = m.mean_mmi;
    row["cdi"] = m.cdi;
    row["nresp"] = m.nresp;
    row["n_tweets"] = m.n_tweets;
    row["distance_km"] = m.distance_km;
    row["dyfi_id"] = m.dyfi_id;
    cities.push_back(std::move(row));
  }
  j["cities"] = std::move(cities);
  j["unmatched_cities"] = join.unmatched_cities;
  ordered_json terms = ordered_json::array();
  for (const auto& bucket : reasoning_terms) {
    ordered_json row;
    row["bucket"] = bucket.label;
    ordered_json list = ordered_json::array();
    for (const auto& t : bucket.terms) {
      list.push_back(ordered_json{{"term", t.term}, {"score", t.score}, {"tf", t.tf}});
    }
    row["terms"] = std::move(list);
    terms.push_back(std::move(row));
  }
  j["reasoning_terms"] = std::move(terms);
  return j;
}

std::string ValidationReport::to_text() const {
  std::ostringstream out;
  out << "Validation report\n";
  out << "  assessed tweets: " << n_assessed << "\n";
  out << "  city aggregates: " << n_cities << " (matched " << join.matched.size() << ", unmatched "
      << join.unmatched_cities.size() << ")\n";
  if (city_r) {
    out << "  city-level Pearson r: " << fmt(*city_r) << "\n";
  } else if (!city_r_note.empty()) {
    out << "  city-level Pearson r: undefined (" << city_r_note << ")\n";
  }
  if (city_r_weighted) out << "  city-level Pearson r (nresp-weighted): " << fmt(*city_r_weighted) << "\n";
  if (attenuation) {
    out << "  distance attenuation r: " << fmt(attenuation->r) << " over " << attenuation->pairs.size()
        << " tweets\n";
  }
  if (exterior) {
    out << "  exterior subset r: " << fmt(exterior->r) << " (n=" << exterior->n_tweets << " tweets, "
        << exterior->n_cities << " cities)\n";
  } else if (!exterior_note.empty()) {
    out << "  exterior subset: " << exterior_note << "\n";
  }
  if (annotation_alpha) out << "  annotation alpha: " << fmt(*annotation_alpha) << "\n";
  out << "\n  City                      mean_mmi   cdi    n   dist_km  dyfi\n";
  for (const auto& m : join.matched) {
    char line[256];
    std::snprintf(line, sizeof(line), "  %-24s %8.3f  %5.2f  %4d  %7.2f  %s\n", m.city.c_str(),
                  m.mean_mmi, m.cdi, m.n_tweets, m.distance_km, m.dyfi_id.c_str());
    out << line;
  }
  for (const auto& city : join.unmatched_cities) {
    out << "  " << city << " (unmatched)\n";
  }
  bool any_terms = false;
  for (const auto& bucket : reasoning_terms) any_terms |= !bucket.terms.empty();
  if (any_terms) {
    out << "\n  Reasoning terms by MMI bucket (tf-idf)\n";
    for (const auto& bucket : reasoning_terms) {
      if (bucket.terms.empty()) continue;
      out << "  " << bucket.label << ":";
      for (const auto& t : bucket.terms) out << " " << t.term;
      out << "\n";
    }
  }
  return out.str();
}

std::string ValidationReport::scatter_csv() const {
  std::string out = "distance_km,mmi\n";
  if (attenuation) {
    for (const auto& [d, mmi] : attenuation->pairs) {
      char line[64];
      std::snprintf(line, sizeof(line), "%.3f,%.0f\n", d, mmi);
      out += line;
    }
  }
  return out;
}

ValidationReport build_validation_report(const std::vector<assess::AssessmentRecord>& records,
                                         const std::vector<DyfiRecord>& dyfi, const GeoPoint& epicenter,
                                         const ValidationOptions& options) {
  ValidationReport report;
  for (const auto& rec : records) {
    if (rec.outcome == assess::Outcome::assessed) ++report.n_assessed;
  }
  auto aggregates = assess::aggregate_by_city(records);
  report.n_cities = static_cast<int>(aggregates.size());
  report.join = join_with_dyfi(aggregates, dyfi, options.max_join_km);

  if (report.join.matched.size() >= 2) {
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<double> ws;
    for (const auto& m : report.join.matched) {
      xs.push_back(m.mean_mmi);
      ys.push_back(m.cdi);
      ws.push_back(static_cast<double>(m.nresp));
    }
    try {
      report.city_r = pearson_r(xs, ys);
      if (options.weight_nresp) report.city_r_weighted = weighted_pearson_r(xs, ys, ws);
    } catch (const ConstantSeriesError& e) {
      report.city_r_note = e.what();
    }
  } else {
    report.city_r_note = "fewer than 2 matched cities";
  }

  try {
    report.attenuation = distance_attenuation(records, epicenter);
  } catch (const StatsError&) {
    // too few points or constant levels; leave unset
  }

  try {
    report.exterior = exterior_subset_correlation(records, dyfi, options.max_join_km);
  } catch (const StatsError& e) {
    report.exterior_note = e.what();
  }

  // Reasoning-term analysis over whichever buckets actually hold records.
  std::vector<MmiBucket> buckets = options.tfidf_buckets.empty() ? grouped_buckets()
                                                                 : options.tfidf_buckets;
  std::vector<MmiBucket> populated;
  for (const auto& bucket : buckets) {
    bool any = false;
    for (const auto& rec : records) {
      if (rec.outcome != assess::Outcome::assessed || !rec.verdict) continue;
      if (rec.verdict->damage_level >= bucket.lo && rec.verdict->damage_level <= bucket.hi) {
        any = true;
        break;
      }
    }
    if (any) populated.push_back(bucket);
  }
  if (!populated.empty()) {
    std::set<std::string> stopwords = options.stopwords;
    if (stopwords.empty()) {
      stopwords.insert(builtin_stopwords_en().begin(), builtin_stopwords_en().end());
      stopwords.insert(builtin_stopwords_ja().begin(), builtin_stopwords_ja().end());
    }
    auto ranked = tfidf_by_mmi(records, populated, options.tfidf_top_k, stopwords);
    for (std::size_t b = 0; b < populated.size(); ++b) {
      report.reasoning_terms.push_back(BucketTerms{populated[b].label, ranked[b]});
    }
  }
  return report;
}

const std::set<std::string>& builtin_stopwords_en() {
  static const std::set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",    "at",    "be",   "been", "but",  "by",   "for",
      "from", "had",  "has",  "have", "he",    "her",   "his",  "i",    "in",   "is",   "it",
      "its",  "no",   "not",  "of",   "on",    "or",    "s",    "she",  "so",   "t",    "that",
      "the",  "their", "there", "they", "this", "to",    "was",  "we",   "were", "which", "with",
      "you"};
  return words;
}

const std::set<std::string>& builtin_stopwords_ja() {
  // Tokenization is per CJK codepoint, so only single-character particles
  // are effective here.
  static const std::set<std::string> words = {"の", "に", "は", "を", "た", "が", "で",
                                              "て", "と", "し", "れ", "さ", "も", "な"};
  return words;
}

}  // namespace quake3m::validate
