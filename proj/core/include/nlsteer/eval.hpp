#pragma once

#include "nlsteer/featmap.hpp"
#include "nlsteer/intervene.hpp"
#include "nlsteer/sites.hpp"
#include "nlsteer/subject.hpp"
#include "nlsteer/train.hpp"

#include <memory>
#include <string>
#include <vector>

namespace nlsteer {

// An intervention scheme under evaluation: per example, the list of
// (site, edit) pairs it applies.
class InterventionMethod {
 public:
  virtual ~InterventionMethod() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::pair<Site, Subject::EditFn>> edits_for(const Subject& subject,
                                                                  const Example& example) const = 0;
};

std::unique_ptr<InterventionMethod> make_none_method();
std::unique_ptr<InterventionMethod> make_dim_ablation(SteeringDirection dir);
std::unique_ptr<InterventionMethod> make_dim_actadd(SteeringDirection dir);
std::unique_ptr<InterventionMethod> make_linear_at_loss_sites(LossSiteSet sites);
std::unique_ptr<InterventionMethod> make_fmap_clamp(const FeatureMap& map, Site site, int coord,
                                                    double mu_bar_plus, std::string name);
// Ground-truth probe: overwrites the planted subspace to the given radius.
std::unique_ptr<InterventionMethod> make_oracle_radius(double radius);

struct MagnitudeReport {
  std::vector<int> sites_per_example;
  std::vector<double> l2_per_example;
  double mean_sites = 0.0;
  double mean_l2 = 0.0;
};

struct MethodEval {
  std::string method;
  double compliance = 0.0;
  MagnitudeReport magnitude;
};

// One pass over the test set: compliance (fraction of refuse-labeled inputs
// flipped to comply) plus the magnitude accounting. `threads` > 1 splits the
// examples; reduction order is fixed either way.
MethodEval evaluate_method(const Subject& subject, const InterventionMethod& method,
                           const std::vector<Example>& test_negatives, int threads = 1);

double compliance_rate(const Subject& subject, const InterventionMethod& method,
                       const std::vector<Example>& test_negatives, int threads = 1);

MagnitudeReport intervention_magnitude(const Subject& subject, const InterventionMethod& method,
                                       const std::vector<Example>& test_set, int threads = 1);

// Shifts every loss-site projection to its positive-class mean during the
// forward pass, in causal order.
double linear_at_loss_sites(const Subject& subject, const LossSiteSet& sites,
                            const std::vector<Example>& test_negatives, int threads = 1);

struct SweepEntry {
  int layer = 0;
  double compliance = 0.0;
  double magnitude = 0.0;
  bool failed = false;
  std::string failure;
};
struct SweepResult {
  std::vector<SweepEntry> entries;
  int best_layer = -1;
};

// Retrains the map per layer under otherwise identical configs and evaluates
// the clamp on the held-out negatives. Per-layer failures are recorded and the
// sweep continues.
SweepResult layer_sweep(const Subject& subject, const ContrastiveDataset& data, const TrainConfig& base,
                        const std::vector<int>& layers, int threads = 1);

struct AblationResult {
  double nonlinear_rate = 0.0;
  double linear_rate = 0.0;
  TrainResult nonlinear;
  TrainResult linear;
};

// Re-trains the same pipeline with the activation slope set to 1 (an affine
// map) and juxtaposes the two compliance rates.
AblationResult run_linear_fmap_ablation(const Subject& subject, const ContrastiveDataset& data,
                                        const TrainConfig& cfg, int threads = 1);

}  // namespace nlsteer
