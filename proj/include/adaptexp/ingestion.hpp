#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptexp/environments.hpp"
#include "adaptexp/linear_model.hpp"

namespace adaptexp {

// Moment files: experiment_id,metric_id,time_index,arm_id,mean,variance,n
inline constexpr const char* kMomentHeader = "experiment_id,metric_id,time_index,arm_id,mean,variance,n";
// Unit files: unit_id,arm_id,outcome,cluster_id,x0,...,x{p-1}
inline constexpr const char* kUnitHeaderPrefix = "unit_id,arm_id,outcome,cluster_id";
// Site summary files: site_id,mean,variance,n,significance
inline constexpr const char* kSummaryHeader = "site_id,mean,variance,n,significance";

struct MomentRow {
  std::string experiment_id;
  std::string metric_id;
  std::int64_t time_index = 0;
  std::string arm_id;
  double mean = 0.0;
  double variance = 1.0;
  std::int64_t n = 1;

  bool operator==(const MomentRow&) const = default;
};

/// One (experiment, metric) series as a dense T x K table.
struct MomentGroup {
  std::string experiment_id;
  std::string metric_id;
  std::vector<std::int64_t> times;    // ascending
  std::vector<std::string> arm_ids;   // first-appearance order
  MomentTable table;
};

std::vector<MomentRow> read_moment_rows(std::istream& in, const std::string& source = "<stream>");
void write_moment_rows(std::ostream& out, std::span<const MomentRow> rows);
/// Groups rows per (experiment, metric); any missing (time, arm) cell is an error listing the gaps.
std::vector<MomentGroup> build_moment_tables(std::span<const MomentRow> rows);
std::vector<MomentGroup> parse_moment_csv(const std::filesystem::path& path);

struct UnitRow {
  std::string unit_id;
  std::vector<double> covariates;
  std::string arm_id;
  double outcome = 0.0;
  std::optional<std::string> cluster_id;

  bool operator==(const UnitRow&) const = default;
};

struct UnitTable {
  std::vector<UnitRow> rows;
  std::vector<std::size_t> cluster_of;        // per row
  std::vector<std::string> cluster_names;     // first-appearance order; "" is the implicit cluster
  std::size_t covariate_dim = 0;

  std::vector<std::size_t> cluster_sizes() const;
};

UnitTable read_units(std::istream& in, const std::string& source = "<stream>");
void write_units(std::ostream& out, std::span<const UnitRow> rows);
UnitTable parse_units_csv(const std::filesystem::path& path);

/// Arm labels sorted numerically when all are integers, lexicographically otherwise; index = position.
std::vector<std::string> arm_labels(std::span<const UnitRow> rows);

std::vector<ObservedUnit> to_observed_units(std::span<const UnitRow> rows, std::span<const std::string> labels);

/// Units x K outcome matrix: observed cells keep their outcome, the rest take per-arm ridge(1e-6) predictions.
Matrix impute_counterfactuals(std::span<const UnitRow> rows, std::size_t k);

/// Sites from clustered two-arm unit data: cluster = site, arm "0" = control, "1" = treated,
/// site features = mean covariates of the cluster.
SiteData sites_from_units(const UnitTable& table);

struct SummaryStatRow {
  std::string site_id;
  double mean = 0.0;
  std::optional<double> variance;
  std::int64_t n = 1;
  std::optional<std::string> significance;
};

std::vector<SummaryStatRow> read_summary_rows(std::istream& in, const std::string& source = "<stream>");

/// z for a two-sided significance marker: "" -> 1.0, "*" -> 1.96, "**" -> 2.576, "***" -> 3.291.
double significance_z(const std::string& marker);

/// se = |mean| / z(marker), variance = n * se^2.
double variance_from_significance(double mean, std::int64_t n, const std::string& marker);

/// The row's variance, recovered from its marker when missing.
double resolved_variance(const SummaryStatRow& row);

/// 17 significant digits; parses back to the same double.
std::string format_double(double v);

}  // namespace adaptexp
