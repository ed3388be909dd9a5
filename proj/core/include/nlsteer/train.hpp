#pragma once

#include "nlsteer/featmap.hpp"
#include "nlsteer/sites.hpp"
#include "nlsteer/subject.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <vector>

namespace nlsteer {

struct TrainConfig {
  Site site{2, -4};
  std::vector<int> coords{0};
  double tau = 0.9;
  double learning_rate = 1e-3;
  int steps = 2000;
  int batch = 32;
  std::uint64_t seed = 0;
  IResNetConfig map;
  double skip_abort_fraction = 0.01;  // abort when more pairs than this are skipped
  int log_every = 50;

  void validate() const;
};

struct TrainReport {
  std::vector<double> loss_curve;             // per-step batch mean hinge
  std::vector<int> saturation_steps;          // steps at which fractions were sampled
  std::vector<std::vector<double>> saturation;  // per sampled step: per-site saturated fraction
  double mu_bar_plus = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  long skipped_pairs = 0;
  long total_pairs = 0;
  double wall_clock_s = 0.0;
  double grad_check_max_rel_err = -1.0;  // < 0 when not run
};

// Uniform independent draws of (negative, positive) example indices.
std::vector<std::pair<int, int>> sample_pairs(const ContrastiveDataset& data, int batch, Rng& rng);

// Plain forward states for every training example, cached once (the subject is
// frozen, so they never change during training).
struct PreparedData {
  std::vector<SubjectStates> pos_states, neg_states;
  std::vector<Vec> pos_h, neg_h;  // hidden state at the intervention site
  Site site;                      // resolved
};
PreparedData prepare_training_data(const Subject& subject, const ContrastiveDataset& data, const Site& site);

// Site statistics over every exposed site from the cached plain states.
std::vector<SiteStats> compute_site_stats(const Subject& subject, const PreparedData& prep);

struct TrainResult {
  std::unique_ptr<IResNetFeatureMap> map;
  LossSiteSet sites;
  TrainReport report;
};

// Learns the feature map by minimizing the hinge objective over interchange-
// intervened forward passes, the subject frozen throughout.
TrainResult train_fmap(const Subject& subject, const ContrastiveDataset& data, const TrainConfig& cfg);

// Batch-mean objective and analytic parameter gradient for a fixed pair list.
// Frozen spectral scales; `tight` switches the inverse and the implicit-
// differentiation solve to a tightened tolerance. `sat_counts`, when given,
// receives the per-site count of saturated (inactive-hinge) pairs.
double objective_and_gradient(const Subject& subject, const PreparedData& prep,
                              const LossSiteSet& sites, const IResNetFeatureMap& map,
                              const std::vector<int>& coords,
                              const std::vector<std::pair<int, int>>& pairs, Vec* grad,
                              long* skipped = nullptr, bool tight = false,
                              std::vector<int>* sat_counts = nullptr);

struct GradCheckResult {
  double max_rel_err = 0.0;
  int probes = 0;
};

// Central finite differences (step 1e-5) against the analytic gradient on
// randomly probed parameters of the full objective.
GradCheckResult grad_check(const Subject& subject, const ContrastiveDataset& data, const TrainConfig& cfg,
                           const IResNetFeatureMap& map, int n_probes, int n_pairs = 8);

}  // namespace nlsteer
