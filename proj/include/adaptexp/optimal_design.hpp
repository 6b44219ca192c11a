#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adaptexp/environments.hpp"
#include "adaptexp/linear_model.hpp"
#include "adaptexp/random.hpp"

namespace adaptexp {

/// Sites chosen so far and the ridge Gram matrix lambda I + sum x x'.
struct DesignSelection {
  std::vector<std::size_t> chosen;
  Matrix gram;
  double log_det = 0.0;
};

inline constexpr double kDesignRidge = 1e-6;

DesignSelection design_selection_start(std::size_t p, double lambda = kDesignRidge);

/// Appends `site` with features `x`, updating log det through the rank-one identity.
DesignSelection add_site(const DesignSelection& selection, const Vector& x, std::size_t site);

/// Unchosen candidate maximizing log det(G + x x') = log det G + log(1 + x' G^-1 x). Ties go to the lowest index.
std::size_t d_optimal_next(const DesignSelection& selection, std::span<const Vector> candidates);

enum class DesignMethod { DOptimal, Uniform };

std::string to_string(DesignMethod method);
DesignMethod design_method_from_string(const std::string& name);

/// Ordered site choice: greedy D-optimal, or uniform sampling without replacement.
std::vector<std::size_t> select_sites(const SiteData& sites, std::size_t budget, DesignMethod method, Rng& rng);

struct DesignRun {
  std::vector<std::size_t> order;
  std::vector<double> observed_ates;  // one bootstrapped ATE per selected site
  Vector model;                       // ridge(1e-6) least squares of observed ATE on site features
};

/// Selects sites, observes one bootstrapped ATE at each and fits the sign-prediction model.
DesignRun run_design_selection(const SiteData& sites, std::size_t budget, DesignMethod method, Rng& rng);

}  // namespace adaptexp
