#include "adaptexp/ingestion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "adaptexp/errors.hpp"

namespace adaptexp {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

double parse_real(const std::string& text, const std::string& source, std::size_t line, const char* field) {
  double value = 0.0;
  const auto* begin = text.data();
  const auto* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError(source, line, std::string("field '") + field + "' is not a finite number: '" + text + "'");
  }
  return value;
}

std::int64_t parse_int(const std::string& text, const std::string& source, std::size_t line, const char* field) {
  std::int64_t value = 0;
  const auto* begin = text.data();
  const auto* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(source, line, std::string("field '") + field + "' is not an integer: '" + text + "'");
  }
  return value;
}

void check_id(const std::string& id, const char* what) {
  if (id.find_first_of(",\n\r") != std::string::npos) {
    throw InvalidInput(std::string(what) + " '" + id + "' contains a separator character");
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

void read_header(std::istream& in, const std::string& source, std::string& header) {
  if (!next_line(in, header)) throw ParseError(source, 1, "missing header row");
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Moment tables

std::vector<MomentRow> read_moment_rows(std::istream& in, const std::string& source) {
  std::string line;
  read_header(in, source, line);
  if (line != kMomentHeader) throw ParseError(source, 1, std::string("header must be exactly '") + kMomentHeader + "'");
  std::vector<MomentRow> rows;
  std::map<std::tuple<std::string, std::string, std::int64_t, std::string>, std::size_t> seen;
  std::size_t line_no = 1;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 7) throw ParseError(source, line_no, "expected 7 fields, got " + std::to_string(f.size()));
    MomentRow row;
    row.experiment_id = f[0];
    row.metric_id = f[1];
    row.time_index = parse_int(f[2], source, line_no, "time_index");
    row.arm_id = f[3];
    row.mean = parse_real(f[4], source, line_no, "mean");
    row.variance = parse_real(f[5], source, line_no, "variance");
    row.n = parse_int(f[6], source, line_no, "n");
    if (row.time_index < 0) throw ParseError(source, line_no, "time_index must be nonnegative");
    if (!(row.variance > 0.0)) throw ParseError(source, line_no, "variance must be positive");
    if (row.n <= 0) throw ParseError(source, line_no, "n must be positive");
    const auto key = std::make_tuple(row.experiment_id, row.metric_id, row.time_index, row.arm_id);
    if (auto it = seen.find(key); it != seen.end()) {
      throw ParseError(source, line_no, "duplicate (experiment, metric, time, arm) key first seen on line " +
                                            std::to_string(it->second));
    }
    seen.emplace(key, line_no);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_moment_rows(std::ostream& out, std::span<const MomentRow> rows) {
  out << kMomentHeader << '\n';
  for (const auto& r : rows) {
    check_id(r.experiment_id, "experiment_id");
    check_id(r.metric_id, "metric_id");
    check_id(r.arm_id, "arm_id");
    out << r.experiment_id << ',' << r.metric_id << ',' << r.time_index << ',' << r.arm_id << ','
        << format_double(r.mean) << ',' << format_double(r.variance) << ',' << r.n << '\n';
  }
}

std::vector<MomentGroup> build_moment_tables(std::span<const MomentRow> rows) {
  std::vector<MomentGroup> groups;
  std::map<std::pair<std::string, std::string>, std::size_t> group_index;
  std::vector<std::vector<const MomentRow*>> members;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.experiment_id, r.metric_id);
    auto [it, inserted] = group_index.emplace(key, groups.size());
    if (inserted) {
      groups.push_back(MomentGroup{r.experiment_id, r.metric_id, {}, {}, {}});
      members.emplace_back();
    }
    members[it->second].push_back(&r);
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& group = groups[g];
    std::set<std::int64_t> times;
    for (const auto* r : members[g]) {
      times.insert(r->time_index);
      if (std::find(group.arm_ids.begin(), group.arm_ids.end(), r->arm_id) == group.arm_ids.end()) {
        group.arm_ids.push_back(r->arm_id);
      }
    }
    group.times.assign(times.begin(), times.end());
    const auto t_count = static_cast<Eigen::Index>(group.times.size());
    const auto k = static_cast<Eigen::Index>(group.arm_ids.size());
    group.table.means = Matrix::Constant(t_count, k, std::nan(""));
    group.table.vars = Matrix::Constant(t_count, k, std::nan(""));
    for (const auto* r : members[g]) {
      const auto t = std::lower_bound(group.times.begin(), group.times.end(), r->time_index) - group.times.begin();
      const auto a = std::find(group.arm_ids.begin(), group.arm_ids.end(), r->arm_id) - group.arm_ids.begin();
      group.table.means(t, a) = r->mean;
      group.table.vars(t, a) = r->variance;
    }
    std::string gaps;
    for (Eigen::Index t = 0; t < t_count; ++t) {
      for (Eigen::Index a = 0; a < k; ++a) {
        if (std::isnan(group.table.means(t, a))) {
          gaps += (gaps.empty() ? "" : ", ") + std::string("(time ") + std::to_string(group.times[t]) + ", arm " +
                  group.arm_ids[a] + ")";
        }
      }
    }
    if (!gaps.empty()) {
      throw InvalidInput("moment table " + group.experiment_id + "/" + group.metric_id + " is missing cells: " + gaps);
    }
  }
  return groups;
}

std::vector<MomentGroup> parse_moment_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  const auto rows = read_moment_rows(in, path.string());
  return build_moment_tables(rows);
}

// ---------------------------------------------------------------------------
// Unit tables

std::vector<std::size_t> UnitTable::cluster_sizes() const {
  std::vector<std::size_t> sizes(cluster_names.size(), 0);
  for (std::size_t c : cluster_of) ++sizes[c];
  return sizes;
}

UnitTable read_units(std::istream& in, const std::string& source) {
  std::string line;
  read_header(in, source, line);
  const auto header = split_fields(line);
  const auto prefix = split_fields(kUnitHeaderPrefix);
  if (header.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), header.begin())) {
    throw ParseError(source, 1, std::string("header must start with '") + kUnitHeaderPrefix + "'");
  }
  UnitTable table;
  table.covariate_dim = header.size() - prefix.size();
  for (std::size_t j = 0; j < table.covariate_dim; ++j) {
    if (header[prefix.size() + j] != "x" + std::to_string(j)) {
      throw ParseError(source, 1, "covariate column " + std::to_string(j) + " must be named x" + std::to_string(j));
    }
  }
  std::map<std::string, std::size_t> clusters;
  std::size_t line_no = 1;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != header.size()) {
      throw ParseError(source, line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                            std::to_string(f.size()) + " (ragged covariates)");
    }
    UnitRow row;
    row.unit_id = f[0];
    row.arm_id = f[1];
    row.outcome = parse_real(f[2], source, line_no, "outcome");
    if (!f[3].empty()) row.cluster_id = f[3];
    for (std::size_t j = 0; j < table.covariate_dim; ++j) {
      row.covariates.push_back(parse_real(f[prefix.size() + j], source, line_no, "covariate"));
    }
    const std::string cluster = row.cluster_id.value_or("");
    auto [it, inserted] = clusters.emplace(cluster, table.cluster_names.size());
    if (inserted) table.cluster_names.push_back(cluster);
    table.cluster_of.push_back(it->second);
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_units(std::ostream& out, std::span<const UnitRow> rows) {
  const std::size_t p = rows.empty() ? 0 : rows.front().covariates.size();
  out << kUnitHeaderPrefix;
  for (std::size_t j = 0; j < p; ++j) out << ",x" << j;
  out << '\n';
  for (const auto& r : rows) {
    if (r.covariates.size() != p) throw InvalidInput("unit '" + r.unit_id + "' has ragged covariates");
    check_id(r.unit_id, "unit_id");
    check_id(r.arm_id, "arm_id");
    if (r.cluster_id) check_id(*r.cluster_id, "cluster_id");
    out << r.unit_id << ',' << r.arm_id << ',' << format_double(r.outcome) << ',' << r.cluster_id.value_or("");
    for (double x : r.covariates) out << ',' << format_double(x);
    out << '\n';
  }
}

UnitTable parse_units_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_units(in, path.string());
}

std::vector<std::string> arm_labels(std::span<const UnitRow> rows) {
  std::set<std::string> unique;
  for (const auto& r : rows) unique.insert(r.arm_id);
  std::vector<std::string> labels(unique.begin(), unique.end());
  const bool numeric = std::all_of(labels.begin(), labels.end(), [](const std::string& s) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
  });
  if (numeric) {
    std::sort(labels.begin(), labels.end(),
              [](const std::string& a, const std::string& b) { return std::stoll(a) < std::stoll(b); });
  }
  return labels;
}

std::vector<ObservedUnit> to_observed_units(std::span<const UnitRow> rows, std::span<const std::string> labels) {
  std::vector<ObservedUnit> units;
  units.reserve(rows.size());
  for (const auto& r : rows) {
    const auto it = std::find(labels.begin(), labels.end(), r.arm_id);
    if (it == labels.end()) throw ConfigError("units", "arm '" + r.arm_id + "' is not among the arm labels");
    Vector x = Eigen::Map<const Vector>(r.covariates.data(), static_cast<Eigen::Index>(r.covariates.size()));
    units.push_back(ObservedUnit{std::move(x), static_cast<std::size_t>(it - labels.begin()), r.outcome});
  }
  return units;
}

Matrix impute_counterfactuals(std::span<const UnitRow> rows, std::size_t k) {
  const auto labels = arm_labels(rows);
  if (labels.size() > k) {
    throw ConfigError("k", std::to_string(labels.size()) + " distinct arms observed but k=" + std::to_string(k));
  }
  const auto units = to_observed_units(rows, labels);
  const std::size_t p = rows.empty() ? 0 : rows.front().covariates.size();
  std::vector<std::size_t> counts(k, 0);
  for (const auto& u : units) ++counts[u.arm];
  for (std::size_t a = 0; a < k; ++a) {
    if (counts[a] < p + 1) {
      const std::string name = a < labels.size() ? labels[a] : std::to_string(a);
      throw ConfigError("units", "arm " + name + " has " + std::to_string(counts[a]) +
                                     " observations; imputation needs at least " + std::to_string(p + 1));
    }
  }
  const Matrix theta = fit_per_arm_coefficients(units, k);
  Matrix completed(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    completed.row(row) = (theta * units[i].covariates).transpose();
    completed(row, static_cast<Eigen::Index>(units[i].arm)) = units[i].outcome;
  }
  return completed;
}

SiteData sites_from_units(const UnitTable& table) {
  SiteData sites(table.cluster_names.size());
  std::vector<std::size_t> counts(sites.size(), 0);
  const auto p = static_cast<Eigen::Index>(table.covariate_dim);
  for (auto& s : sites) s.features = Vector::Zero(p);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    auto& site = sites[table.cluster_of[i]];
    if (r.arm_id == "0") site.control.push_back(r.outcome);
    else if (r.arm_id == "1") site.treated.push_back(r.outcome);
    else throw ConfigError("units", "site data arm ids must be 0 (control) or 1 (treated), got '" + r.arm_id + "'");
    site.features += Eigen::Map<const Vector>(r.covariates.data(), p);
    ++counts[table.cluster_of[i]];
  }
  for (std::size_t a = 0; a < sites.size(); ++a) sites[a].features /= static_cast<double>(counts[a]);
  validate(sites);
  return sites;
}

// ---------------------------------------------------------------------------
// Summary statistics

std::vector<SummaryStatRow> read_summary_rows(std::istream& in, const std::string& source) {
  std::string line;
  read_header(in, source, line);
  if (line != kSummaryHeader) throw ParseError(source, 1, std::string("header must be exactly '") + kSummaryHeader + "'");
  std::vector<SummaryStatRow> rows;
  std::size_t line_no = 1;
  while (next_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 5) throw ParseError(source, line_no, "expected 5 fields, got " + std::to_string(f.size()));
    SummaryStatRow row;
    row.site_id = f[0];
    row.mean = parse_real(f[1], source, line_no, "mean");
    if (!f[2].empty()) row.variance = parse_real(f[2], source, line_no, "variance");
    row.n = parse_int(f[3], source, line_no, "n");
    if (!f[4].empty()) row.significance = f[4];
    if (row.variance && !(*row.variance > 0.0)) throw ParseError(source, line_no, "variance must be positive");
    if (!row.variance) {
      try {
        row.variance = variance_from_significance(row.mean, row.n, row.significance.value_or(""));
      } catch (const InvalidInput& e) {
        throw ParseError(source, line_no, e.what());
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

double significance_z(const std::string& marker) {
  if (marker.empty()) return 1.0;
  if (marker == "*") return 1.96;
  if (marker == "**") return 2.576;
  if (marker == "***") return 3.291;
  throw InvalidInput("unknown significance marker '" + marker + "'");
}

double variance_from_significance(double mean, std::int64_t n, const std::string& marker) {
  if (n < 1) throw InvalidInput("sample size must be positive");
  const double z = significance_z(marker);
  if (mean == 0.0) {
    throw InvalidInput("a zero mean carries no variance information; supply the variance explicitly");
  }
  const double se = std::abs(mean) / z;
  return static_cast<double>(n) * se * se;
}

double resolved_variance(const SummaryStatRow& row) {
  if (row.variance) return *row.variance;
  return variance_from_significance(row.mean, row.n, row.significance.value_or(""));
}

}  // namespace adaptexp
