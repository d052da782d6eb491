#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "patrolscope/corpus.hpp"

namespace patrolscope::econ {

double arsinh(double x);

// Column store for regressions. NaN marks a missing value; fits drop
// incomplete rows listwise per model.
class Table {
public:
  std::size_t n_rows() const { return row_ids_.size(); }

  std::size_t add_row(std::string row_id, std::string group = "");
  void set(const std::string& col, std::size_t row, double value);

  bool has(const std::string& col) const { return cols_.count(col) > 0; }
  double get(const std::string& col, std::size_t row) const;
  const std::vector<double>& col(const std::string& name) const;
  const std::vector<std::string>& row_ids() const { return row_ids_; }
  const std::vector<std::string>& groups() const { return groups_; }

private:
  std::vector<std::string> row_ids_;
  std::vector<std::string> groups_;
  std::map<std::string, std::vector<double>> cols_;
};

struct ModelSpec {
  std::string name = "model";
  std::string outcome;
  std::vector<std::string> regressors;
  std::set<std::string> mean_center;  // centered before entering the design
  std::vector<std::pair<std::string, std::string>> interactions;
  bool city_fe = false;        // absorb Table group labels by within-demeaning
  std::string filter_column;   // optional; keep rows where the column is nonzero
};

std::string significance_stars(double p);

struct Coefficient {
  std::string term;
  double beta = 0.0;
  double se = 0.0;
  double p = 1.0;
  std::string stars;
};

struct RegressionResult {
  std::vector<Coefficient> coefficients;  // (const), regressors, interactions
  std::vector<std::vector<double>> vcov;  // HC1, aligned with coefficients
  double r_squared = 0.0;
  std::size_t n_obs = 0;
  std::size_t n_groups = 0;  // absorbed fixed-effect groups, 0 when none

  const Coefficient* find(const std::string& term) const;
};

// OLS via a column-pivoted QR decomposition with HC1 sandwich errors. Fixed
// effects are absorbed by within-demeaning and counted in the small-sample
// correction; R-squared is computed against the untransformed outcome, so it
// equals the dummy-variable fit's. Normal p-values, stars at
// *** p<0.001, ** p<0.01, * p<0.05, + p<0.1.
RegressionResult fit_ols(const Table& data, const ModelSpec& spec);

struct ElasticityInput {
  double y_mean = 0.0;  // outcome mean in levels, > 0
  double x_mean = 0.0;
  double beta = 0.0;
};

double arsinh_elasticity_factor(double y_mean);
double elasticity_arsinh(const ElasticityInput& e);

struct RelativeShares {
  std::string bg_id;
  std::optional<double> rel_black;
  std::optional<double> rel_hispanic;
  std::optional<double> rel_asian;
};

// BG share divided by city share, per group; undefined (absent) when the BG
// share is missing or the city share is missing or zero. City shares come
// from the city table, never from BG aggregation.
std::vector<RelativeShares> build_relative_shares(const std::vector<io::BlockGroup>& bgs,
                                                  const io::CityTable& city_table);

struct DecompRow {
  std::string city;
  std::size_t n_obs = 0;
  std::vector<double> r2_cumulative;
  std::vector<double> delta_r2;
};

struct DecompResult {
  std::vector<std::string> block_names;
  std::vector<DecompRow> rows;  // one per group label, sorted
};

// Cumulative R-squared from fitting ordered covariate blocks per city (Table
// group label). The estimation sample is rows complete for every block, so
// nested R-squared never decreases. Cities with too few complete rows are
// skipped.
DecompResult variance_decomposition(const Table& data, const std::string& outcome,
                                    const std::vector<std::pair<std::string, std::vector<std::string>>>& blocks);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct BinnedScatter {
  std::vector<double> x_mean;  // one entry per bin
  std::vector<double> y_mean;
  double rho = 0.0;  // Pearson on the unbinned pairs as given
  bool single_bin_fallback = false;
};

// Equal-size bins after sorting by (x, y); bin sizes differ by at most one.
// Fewer points than bins collapses to a single bin.
BinnedScatter binned_scatter(std::vector<double> x, std::vector<double> y, int n_bins = 20);

struct CompositionFit {
  std::string group;
  double slope = 0.0;  // on the detected (smartphone) share
  double se = 0.0;
  std::size_t n = 0;
};

struct ValidationInputs {
  // Detected quantities, keyed by city / zone.
  std::map<std::string, double> detected_counts;
  std::map<std::string, std::map<std::string, double>> detected_composition;  // city -> group share
  std::map<std::string, double> detected_zone_counts;  // officer home zones

  // City covariates (population, pct_<group>) from the city table.
  io::CityTable city_table;

  // External comparison tables; an absent table skips its check.
  std::optional<std::map<std::string, double>> employee_counts;
  std::optional<std::map<std::string, std::map<std::string, double>>> police_composition;
  std::optional<std::map<std::string, double>> zone_residences;
};

struct ValidationReport {
  std::optional<double> count_rho;       // detected vs employee counts, by city
  std::optional<double> per_capita_rho;  // both sides divided by city population
  std::optional<double> zone_rho;        // arsinh counts over the zone union
  std::vector<CompositionFit> composition;  // police share on detected + city share
  std::vector<std::string> notes;
};

ValidationReport city_validation_suite(const ValidationInputs& in);

struct ActionOutcomes {
  std::map<std::string, double> arsinh_hours;
  std::map<std::string, double> arsinh_actions;  // missing action counts read as 0
  std::map<std::string, double> arsinh_ratio;    // only block groups with hours > 0
};

ActionOutcomes arrests_per_hour(const std::map<std::string, double>& hours_by_bg,
                                const std::map<std::string, double>& actions_by_bg);

}  // namespace patrolscope::econ
