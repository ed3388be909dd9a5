#pragma once

#include "nlsteer/common.hpp"
#include "nlsteer/featmap.hpp"

#include <vector>

namespace nlsteer {

enum class InterventionMode { add, clamp };

struct InterventionSpec {
  std::vector<int> coords;
  std::vector<double> alphas;
  InterventionMode mode = InterventionMode::add;

  // Distinct in-range coords, matching lengths.
  void validate(int d) const;
};

enum class SteeringScheme { ablation, actadd };

// A unit direction plus how to apply it. `alpha` carries the signed actadd
// coefficient; `layer_scope` < 0 means every layer.
struct SteeringDirection {
  Vec v;
  SteeringScheme scheme = SteeringScheme::ablation;
  double alpha = 0.0;
  int layer_scope = -1;
};

// h + sum_i alpha_i v_i over orthonormal directions.
Vec linear_intervene(const Vec& h, const std::vector<Vec>& dirs, const std::vector<double>& alphas);

// W^{-1}(W h + sum alpha_i e_i); add mode only.
Vec basis_intervene(const Vec& h, const LinearFeatureMap& map, const InterventionSpec& spec);

// f^{-1}(f(h) + sum alpha_i e_i); clamp mode sets the targeted coordinates of
// f(h) to alpha_i instead of offsetting them.
Vec nonlinear_intervene(const Vec& h, const FeatureMap& map, const InterventionSpec& spec);

// Replaces the targeted feature coordinates of h_minus with h_plus's.
Vec interchange(const Vec& h_minus, const Vec& h_plus, const FeatureMap& map,
                const std::vector<int>& coords);

// Sets coordinate `coord` of f(h) to the cached positive-class mean.
Vec clamp_to_mean(const Vec& h, const FeatureMap& map, int coord, double mu_bar_plus);

// Normalized class-mean difference, pointing from the plus (compliant) mean
// toward the minus (refusing) mean. Throws on a degenerate difference.
SteeringDirection dim_direction(const std::vector<Vec>& acts_plus, const std::vector<Vec>& acts_minus);

// h - (v^T h) v for unit v.
Vec ablate(const Vec& h, const Vec& v);

// h + alpha v for unit v.
Vec actadd(const Vec& h, const Vec& v, double alpha);

}  // namespace nlsteer
