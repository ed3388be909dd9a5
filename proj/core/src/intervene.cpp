#include "nlsteer/intervene.hpp"

#include <set>

namespace nlsteer {

void InterventionSpec::validate(int d) const {
  if (coords.size() != alphas.size())
    throw std::invalid_argument("InterventionSpec: coords and alphas differ in length");
  if (coords.empty()) throw std::invalid_argument("InterventionSpec: empty coordinate list");
  std::set<int> seen;
  for (int c : coords) {
    if (c < 0 || c >= d) throw std::invalid_argument("InterventionSpec: coordinate out of range");
    if (!seen.insert(c).second) throw std::invalid_argument("InterventionSpec: duplicate coordinate");
  }
}

Vec linear_intervene(const Vec& h, const std::vector<Vec>& dirs, const std::vector<double>& alphas) {
  if (dirs.size() != alphas.size())
    throw std::invalid_argument("linear_intervene: dirs and alphas differ in length");
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    if (dirs[i].size() != h.size()) throw std::invalid_argument("linear_intervene: dimension mismatch");
    if (std::abs(dirs[i].norm() - 1.0) > 1e-8)
      throw std::invalid_argument("linear_intervene: direction " + std::to_string(i) + " is not unit");
    for (std::size_t j = i + 1; j < dirs.size(); ++j)
      if (std::abs(dirs[i].dot(dirs[j])) > 1e-8)
        throw std::invalid_argument("linear_intervene: directions are not orthogonal");
  }
  Vec out = h;
  for (std::size_t i = 0; i < dirs.size(); ++i) out += alphas[i] * dirs[i];
  return out;
}

Vec basis_intervene(const Vec& h, const LinearFeatureMap& map, const InterventionSpec& spec) {
  spec.validate(map.dim());
  if (spec.mode != InterventionMode::add)
    throw std::invalid_argument("basis_intervene: add mode only");
  Vec z = map.forward(h);
  for (std::size_t i = 0; i < spec.coords.size(); ++i) z[spec.coords[i]] += spec.alphas[i];
  return map.inverse(z).first;
}

Vec nonlinear_intervene(const Vec& h, const FeatureMap& map, const InterventionSpec& spec) {
  spec.validate(map.dim());
  Vec z = map.forward(h);
  for (std::size_t i = 0; i < spec.coords.size(); ++i) {
    if (spec.mode == InterventionMode::add)
      z[spec.coords[i]] += spec.alphas[i];
    else
      z[spec.coords[i]] = spec.alphas[i];
  }
  return map.inverse(z).first;
}

Vec interchange(const Vec& h_minus, const Vec& h_plus, const FeatureMap& map,
                const std::vector<int>& coords) {
  if (!h_minus.allFinite() || !h_plus.allFinite())
    throw std::invalid_argument("interchange: non-finite state");
  const Vec z_plus = map.forward(h_plus);
  const Vec z_minus = map.forward(h_minus);
  InterventionSpec spec;
  spec.coords = coords;
  spec.mode = InterventionMode::add;
  spec.alphas.reserve(coords.size());
  for (int c : coords) {
    if (c < 0 || c >= map.dim()) throw std::invalid_argument("interchange: coordinate out of range");
    spec.alphas.push_back(z_plus[c] - z_minus[c]);
  }
  return nonlinear_intervene(h_minus, map, spec);
}

Vec clamp_to_mean(const Vec& h, const FeatureMap& map, int coord, double mu_bar_plus) {
  if (!std::isfinite(mu_bar_plus)) throw std::invalid_argument("clamp_to_mean: non-finite target");
  InterventionSpec spec;
  spec.coords = {coord};
  spec.alphas = {mu_bar_plus};
  spec.mode = InterventionMode::clamp;
  return nonlinear_intervene(h, map, spec);
}

SteeringDirection dim_direction(const std::vector<Vec>& acts_plus, const std::vector<Vec>& acts_minus) {
  if (acts_plus.empty() || acts_minus.empty())
    throw std::invalid_argument("dim_direction: empty activation set");
  Vec mean_plus = Vec::Zero(acts_plus.front().size());
  for (const Vec& a : acts_plus) mean_plus += a;
  mean_plus /= static_cast<double>(acts_plus.size());
  Vec mean_minus = Vec::Zero(acts_minus.front().size());
  for (const Vec& a : acts_minus) mean_minus += a;
  mean_minus /= static_cast<double>(acts_minus.size());

  Vec diff = mean_minus - mean_plus;  // points toward the refusing class
  const double n = diff.norm();
  if (n < 1e-10) throw std::invalid_argument("dim_direction: degenerate class-mean difference");
  SteeringDirection dir;
  dir.v = diff / n;
  dir.scheme = SteeringScheme::ablation;
  // Projection gap along v; actadd bypass applies it with a negative sign.
  dir.alpha = dir.v.dot(mean_minus - mean_plus);
  return dir;
}

Vec ablate(const Vec& h, const Vec& v) {
  if (v.size() != h.size()) throw std::invalid_argument("ablate: dimension mismatch");
  return h - v.dot(h) * v;
}

Vec actadd(const Vec& h, const Vec& v, double alpha) {
  if (v.size() != h.size()) throw std::invalid_argument("actadd: dimension mismatch");
  return h + alpha * v;
}

}  // namespace nlsteer
