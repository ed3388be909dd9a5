#pragma once

#include "nlsteer/common.hpp"
#include "nlsteer/site.hpp"

#include <map>
#include <vector>

namespace nlsteer {

// Per-site direction and statistics, computed once from the contrastive sets
// and immutable afterwards.
struct SiteStats {
  Site site;
  Vec v;                   // unit mean-difference direction (plus minus minus)
  double mu_plus = 0.0;    // mean positive-class projection onto v
  double auc = 0.5;
  bool degenerate = false;
};

struct LossSiteSet {
  std::vector<SiteStats> entries;  // layer-major, then position
  double tau = 0.9;
};

struct NoSupervisionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Probability that a random positive score exceeds a random negative score,
// ties counted 1/2. Midrank Mann-Whitney; exact for counting purposes.
double auc_score(const std::vector<double>& scores_plus, const std::vector<double>& scores_minus);

SiteStats mean_diff_stats(const Site& site, const std::vector<Vec>& acts_plus,
                          const std::vector<Vec>& acts_minus);

// Keeps non-degenerate sites causally downstream of the intervention site with
// auc >= tau, ordered layer-major then position. Throws NoSupervisionError on
// an empty result. Sites must be resolved (non-negative positions).
LossSiteSet select_sites(const std::vector<SiteStats>& all, double tau, const Site& intervention_site);

// sum_s max(0, mu_s^+ - projection_s); every site in `sites` must be covered.
double hinge_loss(const std::map<Site, double>& projections, const LossSiteSet& sites);

}  // namespace nlsteer
