#include "adaptexp/optimal_design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "adaptexp/errors.hpp"

namespace adaptexp {

DesignSelection design_selection_start(std::size_t p, double lambda) {
  if (!(lambda > 0.0)) throw InvalidInput("design ridge must be positive");
  const auto n = static_cast<Eigen::Index>(p);
  return DesignSelection{{}, lambda * Matrix::Identity(n, n), static_cast<double>(p) * std::log(lambda)};
}

DesignSelection add_site(const DesignSelection& selection, const Vector& x, std::size_t site) {
  if (std::find(selection.chosen.begin(), selection.chosen.end(), site) != selection.chosen.end()) {
    throw InvalidInput("site " + std::to_string(site) + " already selected");
  }
  Eigen::LLT<Matrix> llt(selection.gram);
  if (llt.info() != Eigen::Success) throw NumericError("design Gram matrix is not positive definite");
  DesignSelection next = selection;
  next.log_det += std::log1p(x.dot(llt.solve(x)));
  next.gram.noalias() += x * x.transpose();
  next.chosen.push_back(site);
  return next;
}

std::size_t d_optimal_next(const DesignSelection& selection, std::span<const Vector> candidates) {
  Eigen::LLT<Matrix> llt(selection.gram);
  if (llt.info() != Eigen::Success) throw NumericError("design Gram matrix is not positive definite");
  std::size_t best = candidates.size();
  double best_gain = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < candidates.size(); ++a) {
    if (std::find(selection.chosen.begin(), selection.chosen.end(), a) != selection.chosen.end()) continue;
    if (candidates[a].size() != selection.gram.rows()) throw InvalidInput("candidate feature length mismatch");
    const double gain = std::log1p(candidates[a].dot(llt.solve(candidates[a])));
    if (best == candidates.size() || gain > best_gain + 1e-12 * std::abs(best_gain)) {
      best_gain = gain;
      best = a;
    }
  }
  if (best == candidates.size()) throw ContractError("no unchosen candidate site left");
  return best;
}

std::string to_string(DesignMethod method) { return method == DesignMethod::DOptimal ? "d_optimal" : "uniform"; }

DesignMethod design_method_from_string(const std::string& name) {
  if (name == "d_optimal") return DesignMethod::DOptimal;
  if (name == "uniform") return DesignMethod::Uniform;
  throw ConfigError("methods", "unknown design method '" + name + "'");
}

std::vector<std::size_t> select_sites(const SiteData& sites, std::size_t budget, DesignMethod method, Rng& rng) {
  if (budget < 1 || budget > sites.size()) {
    throw ConfigError("budget", "must lie in [1, " + std::to_string(sites.size()) + "]");
  }
  if (method == DesignMethod::Uniform) {
    std::vector<std::size_t> order(sites.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `budget` entries are a uniform ordered sample.
    for (std::size_t i = 0; i < budget; ++i) std::swap(order[i], order[i + rng.index(order.size() - i)]);
    order.resize(budget);
    return order;
  }
  std::vector<Vector> candidates;
  candidates.reserve(sites.size());
  for (const auto& s : sites) candidates.push_back(s.features);
  auto selection = design_selection_start(static_cast<std::size_t>(candidates.front().size()));
  while (selection.chosen.size() < budget) {
    const std::size_t next = d_optimal_next(selection, candidates);
    selection = add_site(selection, candidates[next], next);
  }
  return selection.chosen;
}

DesignRun run_design_selection(const SiteData& sites, std::size_t budget, DesignMethod method, Rng& rng) {
  validate(sites);
  DesignRun run;
  run.order = select_sites(sites, budget, method, rng);
  const auto p = static_cast<std::size_t>(sites.front().features.size());
  auto design = design_reset(p, kDesignRidge);
  std::vector<Vector> rows;
  for (std::size_t site : run.order) {
    run.observed_ates.push_back(bootstrap_ate(sites[site], rng));
    rows.push_back(sites[site].features);
  }
  design = design_update(design, rows, run.observed_ates);
  run.model = ols_estimate(design);
  return run;
}

}  // namespace adaptexp
