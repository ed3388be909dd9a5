#include "nlsteer/sites.hpp"

#include <algorithm>
#include <numeric>

namespace nlsteer {

std::string Site::str() const {
  return "L" + std::to_string(layer) + ".P" + std::to_string(position);
}

int resolve_position(int position, int seq_len) {
  int p = position < 0 ? seq_len + position : position;
  if (p < 0 || p >= seq_len)
    throw std::invalid_argument("position " + std::to_string(position) +
                                " does not resolve within a sequence of length " + std::to_string(seq_len));
  return p;
}

Site resolve_site(const Site& s, int n_layers, int seq_len) {
  if (s.layer < 0 || s.layer >= n_layers)
    throw std::invalid_argument("site layer " + std::to_string(s.layer) + " out of range");
  Site out = s;
  out.position = resolve_position(s.position, seq_len);
  return out;
}

bool downstream_of(const Site& s, const Site& intervention) {
  if (s.layer > intervention.layer) return true;
  return s.layer == intervention.layer && s.position > intervention.position;
}

double auc_score(const std::vector<double>& scores_plus, const std::vector<double>& scores_minus) {
  if (scores_plus.empty() || scores_minus.empty())
    throw std::invalid_argument("auc_score: empty score set");
  const std::size_t np = scores_plus.size(), nm = scores_minus.size();
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(np + nm);
  for (double s : scores_plus) all.push_back({s, true});
  for (double s : scores_minus) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Midranks; R+ - n+(n+ + 1)/2 counts wins with ties worth 1/2.
  double rank_sum_plus = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (all[k].positive) rank_sum_plus += midrank;
    i = j;
  }
  const double u = rank_sum_plus - 0.5 * static_cast<double>(np) * static_cast<double>(np + 1);
  return u / (static_cast<double>(np) * static_cast<double>(nm));
}

SiteStats mean_diff_stats(const Site& site, const std::vector<Vec>& acts_plus,
                          const std::vector<Vec>& acts_minus) {
  if (acts_plus.empty() || acts_minus.empty())
    throw std::invalid_argument("mean_diff_stats: empty activation set");
  SiteStats st;
  st.site = site;
  Vec mean_plus = Vec::Zero(acts_plus.front().size());
  for (const Vec& a : acts_plus) mean_plus += a;
  mean_plus /= static_cast<double>(acts_plus.size());
  Vec mean_minus = Vec::Zero(acts_minus.front().size());
  for (const Vec& a : acts_minus) mean_minus += a;
  mean_minus /= static_cast<double>(acts_minus.size());

  Vec diff = mean_plus - mean_minus;
  const double n = diff.norm();
  if (n < 1e-10) {
    st.degenerate = true;
    st.v = Vec::Zero(mean_plus.size());
    st.mu_plus = 0.0;
    st.auc = 0.5;
    return st;
  }
  st.v = diff / n;
  std::vector<double> proj_plus, proj_minus;
  proj_plus.reserve(acts_plus.size());
  proj_minus.reserve(acts_minus.size());
  double mu = 0.0;
  for (const Vec& a : acts_plus) {
    const double p = st.v.dot(a);
    proj_plus.push_back(p);
    mu += p;
  }
  st.mu_plus = mu / static_cast<double>(acts_plus.size());
  for (const Vec& a : acts_minus) proj_minus.push_back(st.v.dot(a));
  st.auc = auc_score(proj_plus, proj_minus);
  return st;
}

LossSiteSet select_sites(const std::vector<SiteStats>& all, double tau, const Site& intervention_site) {
  if (!(tau > 0.5 && tau <= 1.0)) throw std::invalid_argument("select_sites: tau must lie in (0.5, 1]");
  LossSiteSet out;
  out.tau = tau;
  for (const SiteStats& st : all) {
    if (st.degenerate) continue;
    if (!downstream_of(st.site, intervention_site)) continue;
    if (st.auc >= tau) out.entries.push_back(st);
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const SiteStats& a, const SiteStats& b) { return a.site < b.site; });
  if (out.entries.empty())
    throw NoSupervisionError("no site separates the classes with AUC >= " + std::to_string(tau) +
                             " downstream of " + intervention_site.str());
  return out;
}

double hinge_loss(const std::map<Site, double>& projections, const LossSiteSet& sites) {
  double total = 0.0;
  for (const SiteStats& st : sites.entries) {
    auto it = projections.find(st.site);
    if (it == projections.end())
      throw std::invalid_argument("hinge_loss: missing projection for site " + st.site.str());
    total += std::max(0.0, st.mu_plus - it->second);
  }
  return total;
}

}  // namespace nlsteer
