#include "patrolscope/econ.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "patrolscope/errors.hpp"

namespace patrolscope::econ {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

double arsinh(double x) { return std::asinh(x); }

std::size_t Table::add_row(std::string row_id, std::string group) {
  row_ids_.push_back(std::move(row_id));
  groups_.push_back(std::move(group));
  for (auto& [name, col] : cols_) col.push_back(kNaN);
  return row_ids_.size() - 1;
}

void Table::set(const std::string& col, std::size_t row, double value) {
  if (row >= n_rows()) throw InternalError("Table::set: row out of range");
  auto [it, fresh] = cols_.try_emplace(col);
  if (fresh) it->second.assign(n_rows(), kNaN);
  it->second[row] = value;
}

double Table::get(const std::string& col, std::size_t row) const {
  auto it = cols_.find(col);
  if (it == cols_.end()) return kNaN;
  return it->second[row];
}

const std::vector<double>& Table::col(const std::string& name) const {
  auto it = cols_.find(name);
  if (it == cols_.end()) throw InputError("unknown column " + name);
  return it->second;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  if (p < 0.1) return "+";
  return "";
}

const Coefficient* RegressionResult::find(const std::string& term) const {
  for (const auto& c : coefficients) {
    if (c.term == term) return &c;
  }
  return nullptr;
}

RegressionResult fit_ols(const Table& data, const ModelSpec& spec) {
  if (spec.outcome.empty() || !data.has(spec.outcome)) {
    throw InputError("fit_ols: unknown outcome column " + spec.outcome);
  }

  std::vector<std::string> needed = spec.regressors;
  for (const auto& [a, b] : spec.interactions) {
    needed.push_back(a);
    needed.push_back(b);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  for (const auto& name : needed) {
    if (!data.has(name)) throw InputError("fit_ols: unknown regressor column " + name);
  }

  const auto& yfull = data.col(spec.outcome);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    if (!std::isfinite(yfull[r])) continue;
    bool ok = true;
    for (const auto& name : needed) {
      if (!std::isfinite(data.get(name, r))) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    if (!spec.filter_column.empty()) {
      const double f = data.get(spec.filter_column, r);
      if (!std::isfinite(f) || f == 0.0) continue;
    }
    if (spec.city_fe && data.groups()[r].empty()) continue;
    rows.push_back(r);
  }

  // Center listed variables on the estimation sample before any interaction.
  std::map<std::string, double> center;
  for (const auto& name : needed) {
    if (!spec.mean_center.count(name)) continue;
    double s = 0.0;
    for (auto r : rows) s += data.get(name, r);
    center[name] = rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
  }
  auto val = [&](const std::string& name, std::size_t r) {
    const double v = data.get(name, r);
    auto it = center.find(name);
    return it == center.end() ? v : v - it->second;
  };

  std::vector<std::string> terms;
  const bool intercept = !spec.city_fe;
  if (intercept) terms.push_back("const");
  for (const auto& name : spec.regressors) terms.push_back(name);
  for (const auto& [a, b] : spec.interactions) terms.push_back(a + " x " + b);

  const std::size_t n = rows.size();
  const std::size_t k = terms.size();
  std::size_t n_groups = 0;

  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rows[i];
    y(static_cast<Eigen::Index>(i)) = yfull[r];
    std::size_t cidx = 0;
    if (intercept) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cidx++)) = 1.0;
    for (const auto& name : spec.regressors) {
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cidx++)) = val(name, r);
    }
    for (const auto& [a, b] : spec.interactions) {
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cidx++)) = val(a, r) * val(b, r);
    }
  }

  const double y_mean = n ? y.mean() : 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = y(static_cast<Eigen::Index>(i)) - y_mean;
    sst += d * d;
  }

  if (spec.city_fe) {
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) members[data.groups()[rows[i]]].push_back(i);
    n_groups = members.size();
    for (const auto& [label, idx] : members) {
      const double m = static_cast<double>(idx.size());
      double gy = 0.0;
      for (auto i : idx) gy += y(static_cast<Eigen::Index>(i));
      gy /= m;
      for (auto i : idx) y(static_cast<Eigen::Index>(i)) -= gy;
      for (std::size_t c = 0; c < k; ++c) {
        double gx = 0.0;
        for (auto i : idx) gx += X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        gx /= m;
        for (auto i : idx) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) -= gx;
      }
    }
  }

  const std::size_t k_total = k + n_groups;
  if (n <= k_total) {
    throw InputError("fit_ols: " + std::to_string(n) + " rows cannot identify " +
                     std::to_string(k_total) + " parameters in model " + spec.name);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (static_cast<std::size_t>(qr.rank()) < k) {
    const auto perm = qr.colsPermutation().indices();
    const std::size_t bad = static_cast<std::size_t>(perm(static_cast<Eigen::Index>(k - 1)));
    throw InputError("fit_ols: design is rank deficient in model " + spec.name +
                     " (column " + terms[bad] + ")");
  }
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd resid = y - X * beta;

  const double ssr = resid.squaredNorm();
  const double r2 = sst > 0.0 ? 1.0 - ssr / sst : 0.0;

  // HC1 sandwich with the absorbed groups counted in the correction.
  const double scale =
      static_cast<double>(n) / static_cast<double>(n - k_total);
  const Eigen::MatrixXd xtx_inv =
      (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(
          static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k),
                                               static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = X.row(static_cast<Eigen::Index>(i));
    const double e = resid(static_cast<Eigen::Index>(i));
    meat.noalias() += (e * e * scale) * (xi.transpose() * xi);
  }
  const Eigen::MatrixXd cov = xtx_inv * meat * xtx_inv;

  RegressionResult out;
  out.n_obs = n;
  out.n_groups = n_groups;
  out.r_squared = r2;
  out.coefficients.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    Coefficient coef;
    coef.term = terms[c];
    coef.beta = beta(static_cast<Eigen::Index>(c));
    const double var = cov(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
    coef.se = var > 0.0 ? std::sqrt(var) : 0.0;
    const double t = coef.se > 0.0 ? std::abs(coef.beta) / coef.se
                                   : (coef.beta == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    coef.p = std::erfc(t / std::sqrt(2.0));
    coef.stars = significance_stars(coef.p);
    out.coefficients.push_back(std::move(coef));
  }
  out.vcov.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      out.vcov[a][b] = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  }
  return out;
}

double arsinh_elasticity_factor(double y_mean) {
  if (y_mean <= 0.0) throw InputError("arsinh elasticity needs a positive outcome mean");
  return std::sqrt(1.0 + y_mean * y_mean) / y_mean;
}

double elasticity_arsinh(const ElasticityInput& e) {
  return arsinh_elasticity_factor(e.y_mean) * e.x_mean * e.beta;
}

std::vector<RelativeShares> build_relative_shares(const std::vector<io::BlockGroup>& bgs,
                                                  const io::CityTable& city_table) {
  auto city_share = [&](const std::string& city, const std::string& col) -> std::optional<double> {
    auto cit = city_table.find(city);
    if (cit == city_table.end()) return std::nullopt;
    auto ait = cit->second.find(col);
    if (ait == cit->second.end() || ait->second <= 0.0) return std::nullopt;
    return ait->second;
  };
  auto ratio = [&](const io::BlockGroup& bg, const std::string& col) -> std::optional<double> {
    const auto num = bg.attr(col);
    const auto den = city_share(bg.city_id, col);
    if (!num || !den) return std::nullopt;
    return *num / *den;
  };

  std::vector<RelativeShares> out;
  out.reserve(bgs.size());
  for (const auto& bg : bgs) {
    RelativeShares rs;
    rs.bg_id = bg.bg_id;
    rs.rel_black = ratio(bg, "pct_black");
    rs.rel_hispanic = ratio(bg, "pct_hispanic");
    rs.rel_asian = ratio(bg, "pct_asian");
    out.push_back(std::move(rs));
  }
  return out;
}

DecompResult variance_decomposition(
    const Table& data, const std::string& outcome,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& blocks) {
  DecompResult out;
  std::vector<std::string> all_covariates;
  for (const auto& [name, cols] : blocks) {
    out.block_names.push_back(name);
    all_covariates.insert(all_covariates.end(), cols.begin(), cols.end());
  }

  std::set<std::string> cities(data.groups().begin(), data.groups().end());
  cities.erase("");
  for (const auto& city : cities) {
    // One shared complete-case sample per city keeps the fits nested.
    Table sub;
    for (std::size_t r = 0; r < data.n_rows(); ++r) {
      if (data.groups()[r] != city) continue;
      bool complete = std::isfinite(data.get(outcome, r));
      for (const auto& colname : all_covariates) {
        complete = complete && std::isfinite(data.get(colname, r));
      }
      if (!complete) continue;
      const std::size_t i = sub.add_row(data.row_ids()[r]);
      sub.set(outcome, i, data.get(outcome, r));
      for (const auto& colname : all_covariates) sub.set(colname, i, data.get(colname, r));
    }
    if (sub.n_rows() < all_covariates.size() + 2) continue;

    DecompRow row;
    row.city = city;
    row.n_obs = sub.n_rows();
    ModelSpec spec;
    spec.outcome = outcome;
    spec.name = "decomp:" + city;
    double prev = 0.0;
    for (const auto& [name, cols] : blocks) {
      spec.regressors.insert(spec.regressors.end(), cols.begin(), cols.end());
      const auto fit = fit_ols(sub, spec);
      row.r2_cumulative.push_back(fit.r_squared);
      row.delta_r2.push_back(fit.r_squared - prev);
      prev = fit.r_squared;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return kNaN;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

BinnedScatter binned_scatter(std::vector<double> x, std::vector<double> y, int n_bins) {
  if (x.size() != y.size()) throw InputError("binned_scatter: length mismatch");
  if (x.empty() || n_bins < 1) throw InputError("binned_scatter: empty input");

  BinnedScatter out;
  out.rho = pearson(x, y);

  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(x[a], y[a]) < std::tie(x[b], y[b]);
  });

  std::size_t bins = static_cast<std::size_t>(n_bins);
  if (x.size() < bins) {
    bins = 1;
    out.single_bin_fallback = true;
  }
  const std::size_t base = x.size() / bins;
  const std::size_t extra = x.size() % bins;
  std::size_t at = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      sx += x[order[at + i]];
      sy += y[order[at + i]];
    }
    at += len;
    out.x_mean.push_back(sx / static_cast<double>(len));
    out.y_mean.push_back(sy / static_cast<double>(len));
  }
  return out;
}

namespace {

// Pearson over the key intersection of two maps, in sorted key order.
std::optional<double> paired_rho(const std::map<std::string, double>& a,
                                 const std::map<std::string, double>& b,
                                 std::size_t min_pairs = 3) {
  std::vector<double> xs, ys;
  for (const auto& [key, va] : a) {
    auto it = b.find(key);
    if (it == b.end()) continue;
    xs.push_back(va);
    ys.push_back(it->second);
  }
  if (xs.size() < min_pairs) return std::nullopt;
  const double r = pearson(xs, ys);
  if (!std::isfinite(r)) return std::nullopt;
  return r;
}

}  // namespace

ValidationReport city_validation_suite(const ValidationInputs& in) {
  ValidationReport rep;

  if (in.employee_counts) {
    rep.count_rho = paired_rho(in.detected_counts, *in.employee_counts);
    if (!rep.count_rho) rep.notes.push_back("count correlation skipped: too few matched cities");

    std::map<std::string, double> det_pc, emp_pc;
    for (const auto& [city, n] : in.detected_counts) {
      auto cit = in.city_table.find(city);
      if (cit == in.city_table.end()) continue;
      auto pit = cit->second.find("population");
      if (pit == cit->second.end() || pit->second <= 0.0) continue;
      auto eit = in.employee_counts->find(city);
      if (eit == in.employee_counts->end()) continue;
      det_pc[city] = n / pit->second;
      emp_pc[city] = eit->second / pit->second;
    }
    rep.per_capita_rho = paired_rho(det_pc, emp_pc);
    if (!rep.per_capita_rho) {
      rep.notes.push_back("per-capita correlation skipped: missing city populations");
    }
  } else {
    rep.notes.push_back("employee count table absent: count checks skipped");
  }

  if (in.police_composition) {
    for (const std::string group : {"black", "hispanic", "asian", "white"}) {
      Table t;
      for (const auto& [city, comp] : *in.police_composition) {
        auto dit = in.detected_composition.find(city);
        auto cit = in.city_table.find(city);
        auto git = comp.find(group);
        if (dit == in.detected_composition.end() || cit == in.city_table.end() ||
            git == comp.end()) {
          continue;
        }
        auto sit = dit->second.find(group);
        auto pit = cit->second.find("pct_" + group);
        if (sit == dit->second.end() || pit == cit->second.end()) continue;
        const std::size_t r = t.add_row(city);
        t.set("police", r, git->second);
        t.set("smartphone", r, sit->second);
        t.set("city", r, pit->second);
      }
      if (t.n_rows() < 4) {
        rep.notes.push_back("composition fit skipped for " + group + ": too few cities");
        continue;
      }
      ModelSpec spec;
      spec.name = "composition:" + group;
      spec.outcome = "police";
      spec.regressors = {"smartphone", "city"};
      const auto fit = fit_ols(t, spec);
      const Coefficient* c = fit.find("smartphone");
      rep.composition.push_back({group, c->beta, c->se, fit.n_obs});
    }
  } else {
    rep.notes.push_back("police composition table absent: composition checks skipped");
  }

  if (in.zone_residences) {
    // Zone union with zero fill; compare in arsinh space.
    std::map<std::string, double> det, ext;
    for (const auto& [zone, n] : in.detected_zone_counts) {
      det[zone] = arsinh(n);
      ext[zone] = 0.0;
    }
    for (const auto& [zone, n] : *in.zone_residences) {
      ext[zone] = arsinh(n);
      det.try_emplace(zone, 0.0);
    }
    rep.zone_rho = paired_rho(det, ext);
    if (!rep.zone_rho) rep.notes.push_back("zone correlation skipped: too few zones");
  } else {
    rep.notes.push_back("zone residence table absent: zone check skipped");
  }
  return rep;
}

ActionOutcomes arrests_per_hour(const std::map<std::string, double>& hours_by_bg,
                                const std::map<std::string, double>& actions_by_bg) {
  ActionOutcomes out;
  for (const auto& [bg_id, hours] : hours_by_bg) {
    auto it = actions_by_bg.find(bg_id);
    const double actions = it == actions_by_bg.end() ? 0.0 : it->second;
    out.arsinh_hours[bg_id] = arsinh(hours);
    out.arsinh_actions[bg_id] = arsinh(actions);
    if (hours > 0.0) out.arsinh_ratio[bg_id] = arsinh(actions / hours);
  }
  return out;
}

}  // namespace patrolscope::econ
