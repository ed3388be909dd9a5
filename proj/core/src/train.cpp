#include "nlsteer/train.hpp"

#include <chrono>
#include <cmath>

namespace nlsteer {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
  if (steps < 0) throw ConfigError("train.steps", "must be >= 0");
  if (batch < 1) throw ConfigError("train.batch", "must be >= 1");
  if (!(tau > 0.5 && tau <= 1.0)) throw ConfigError("train.tau", "must lie in (0.5, 1]");
  if (coords.empty()) throw ConfigError("train.coords", "must not be empty");
  for (int c : coords)
    if (c < 0 || c >= map.dim) throw ConfigError("train.coords", "coordinate out of range");
  if (!(skip_abort_fraction >= 0.0 && skip_abort_fraction <= 1.0))
    throw ConfigError("train.skip_abort_fraction", "must lie in [0, 1]");
  if (log_every < 1) throw ConfigError("train.log_every", "must be >= 1");
  map.validate();
}

std::vector<std::pair<int, int>> sample_pairs(const ContrastiveDataset& data, int batch, Rng& rng) {
  if (data.train_neg.empty() || data.train_pos.empty())
    throw std::invalid_argument("sample_pairs: both train splits must be non-empty");
  std::uniform_int_distribution<int> dn(0, static_cast<int>(data.train_neg.size()) - 1);
  std::uniform_int_distribution<int> dp(0, static_cast<int>(data.train_pos.size()) - 1);
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const int n = dn(rng);
    const int p = dp(rng);
    out.emplace_back(n, p);
  }
  return out;
}

PreparedData prepare_training_data(const Subject& subject, const ContrastiveDataset& data,
                                   const Site& site) {
  PreparedData prep;
  prep.site = resolve_site(site, subject.layers(), subject.seq_len());
  auto run = [&](const std::vector<Example>& exs, std::vector<SubjectStates>& states,
                 std::vector<Vec>& hs) {
    states.reserve(exs.size());
    hs.reserve(exs.size());
    for (const Example& ex : exs) {
      states.push_back(subject.forward(ex.input));
      hs.push_back(states.back().blocks[static_cast<std::size_t>(prep.site.layer)]
                       .row(prep.site.position)
                       .transpose());
    }
  };
  run(data.train_pos, prep.pos_states, prep.pos_h);
  run(data.train_neg, prep.neg_states, prep.neg_h);
  return prep;
}

std::vector<SiteStats> compute_site_stats(const Subject& subject, const PreparedData& prep) {
  std::vector<SiteStats> out;
  for (const Site& s : subject.all_sites()) {
    std::vector<Vec> acts_plus, acts_minus;
    acts_plus.reserve(prep.pos_states.size());
    acts_minus.reserve(prep.neg_states.size());
    for (const auto& st : prep.pos_states)
      acts_plus.push_back(st.blocks[static_cast<std::size_t>(s.layer)].row(s.position).transpose());
    for (const auto& st : prep.neg_states)
      acts_minus.push_back(st.blocks[static_cast<std::size_t>(s.layer)].row(s.position).transpose());
    out.push_back(mean_diff_stats(s, acts_plus, acts_minus));
  }
  return out;
}

namespace {
const InversionConfig kTight{200, 1e-12};
}

double objective_and_gradient(const Subject& subject, const PreparedData& prep,
                              const LossSiteSet& sites, const IResNetFeatureMap& map,
                              const std::vector<int>& coords,
                              const std::vector<std::pair<int, int>>& pairs, Vec* grad, long* skipped,
                              bool tight, std::vector<int>* sat_counts) {
  const InversionConfig* inv = tight ? &kTight : nullptr;
  if (grad) grad->setZero(map.param_count());
  if (sat_counts) sat_counts->assign(sites.entries.size(), 0);
  double total = 0.0;
  for (const auto& [ni, pi] : pairs) {
    const Vec& h_minus = prep.neg_h[static_cast<std::size_t>(ni)];
    const Vec& h_plus = prep.pos_h[static_cast<std::size_t>(pi)];

    IResNetFeatureMap::ForwardTrace tm, tp;
    const Vec z_minus = map.forward_traced(h_minus, tm);
    const Vec z_plus = map.forward_traced(h_plus, tp);
    Vec z_int = z_minus;
    for (int c : coords) z_int[c] = z_plus[c];

    IResNetFeatureMap::InverseTrace it;
    const Vec h_int = map.inverse_traced(z_int, it, inv);
    if (!it.report.converged) {
      if (skipped) ++*skipped;
      continue;
    }

    Subject::ResumeTrace rt;
    const SubjectStates intervened =
        subject.forward_from_override(prep.neg_states[static_cast<std::size_t>(ni)], prep.site, h_int,
                                      grad ? &rt : nullptr);

    double pair_loss = 0.0;
    std::vector<std::pair<Site, Vec>> taps;
    for (std::size_t s = 0; s < sites.entries.size(); ++s) {
      const SiteStats& st = sites.entries[s];
      const double proj =
          st.v.dot(intervened.blocks[static_cast<std::size_t>(st.site.layer)].row(st.site.position));
      const double term = st.mu_plus - proj;
      if (term > 0.0) {
        pair_loss += term;
        if (grad) taps.emplace_back(st.site, Vec(-st.v));
      } else if (sat_counts) {
        ++(*sat_counts)[s];
      }
    }
    total += pair_loss;
    if (grad && !taps.empty()) {
      const Vec dh_int = subject.backward_from_taps(rt, taps);
      Vec dz_int = map.backward_inverse(it, dh_int, *grad, inv);
      Vec cot_plus = Vec::Zero(map.dim());
      for (int c : coords) {
        cot_plus[c] = dz_int[c];
        dz_int[c] = 0.0;
      }
      map.backward_forward(tm, dz_int, *grad);
      map.backward_forward(tp, cot_plus, *grad);
    }
  }
  const double n = static_cast<double>(pairs.size());
  if (grad) *grad /= n;
  return total / n;
}

TrainResult train_fmap(const Subject& subject, const ContrastiveDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.map.dim != subject.width())
    throw ConfigError("train.map.dim", "must equal the subject hidden width");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult out;
  PreparedData prep = prepare_training_data(subject, data, cfg.site);
  const std::vector<SiteStats> stats = compute_site_stats(subject, prep);
  out.sites = select_sites(stats, cfg.tau, prep.site);

  out.map = std::make_unique<IResNetFeatureMap>(cfg.map, cfg.seed);
  IResNetFeatureMap& map = *out.map;
  const int P = map.param_count();

  Vec m = Vec::Zero(P), v = Vec::Zero(P), grad(P);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  Rng pair_rng = make_rng(cfg.seed, 0x9a125);
  long skipped = 0, total_pairs = 0;
  std::vector<int> sat_counts;

  for (int step = 0; step < cfg.steps; ++step) {
    map.refresh_spectral(1);
    const auto pairs = sample_pairs(data, cfg.batch, pair_rng);
    total_pairs += cfg.batch;
    const bool log_now = (step % cfg.log_every == 0) || step == cfg.steps - 1;
    const double loss = objective_and_gradient(subject, prep, out.sites, map, cfg.coords, pairs, &grad,
                                               &skipped, false, log_now ? &sat_counts : nullptr);
    if (!std::isfinite(loss))
      throw TrainingError("non-finite training loss at step " + std::to_string(step));
    if (skipped > cfg.skip_abort_fraction * static_cast<double>(total_pairs) && skipped > 0)
      throw TrainingError("more than " + std::to_string(100.0 * cfg.skip_abort_fraction) +
                          "% of pairs skipped by non-converged inversions");
    out.report.loss_curve.push_back(loss);
    if (log_now) {
      out.report.saturation_steps.push_back(step);
      std::vector<double> fr(sat_counts.size());
      for (std::size_t i = 0; i < sat_counts.size(); ++i)
        fr[i] = static_cast<double>(sat_counts[i]) / static_cast<double>(cfg.batch);
      out.report.saturation.push_back(std::move(fr));
    }

    Vec p = map.flat_params();
    const double bc1 = 1.0 - std::pow(beta1, step + 1);
    const double bc2 = 1.0 - std::pow(beta2, step + 1);
    for (int i = 0; i < P; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      p[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam_eps);
    }
    map.set_flat_params(p);
  }

  if (cfg.steps > 0) map.refresh_spectral(20);

  double mu = 0.0;
  for (const Vec& h : prep.pos_h) mu += map.forward(h)[cfg.coords.front()];
  out.report.mu_bar_plus = mu / static_cast<double>(prep.pos_h.size());

  out.report.skipped_pairs = skipped;
  out.report.total_pairs = total_pairs;
  if (!out.report.loss_curve.empty()) {
    out.report.initial_loss = out.report.loss_curve.front();
    const std::size_t n = out.report.loss_curve.size();
    const std::size_t tail = std::min<std::size_t>(100, n);
    double acc = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) acc += out.report.loss_curve[i];
    out.report.final_loss = acc / static_cast<double>(tail);
  }
  out.report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

GradCheckResult grad_check(const Subject& subject, const ContrastiveDataset& data, const TrainConfig& cfg,
                           const IResNetFeatureMap& map, int n_probes, int n_pairs) {
  if (n_probes < 1) throw std::invalid_argument("grad_check: n_probes must be >= 1");
  PreparedData prep = prepare_training_data(subject, data, cfg.site);
  const std::vector<SiteStats> stats = compute_site_stats(subject, prep);
  const LossSiteSet sites = select_sites(stats, cfg.tau, prep.site);

  Rng rng = make_rng(cfg.seed, 0x6cc);
  const auto pairs = sample_pairs(data, n_pairs, rng);

  Vec grad(map.param_count());
  objective_and_gradient(subject, prep, sites, map, cfg.coords, pairs, &grad, nullptr, true);

  IResNetFeatureMap probe = map;
  const Vec p0 = map.flat_params();
  const double step = 1e-5;
  std::uniform_int_distribution<int> pick(0, map.param_count() - 1);
  GradCheckResult res;
  res.probes = n_probes;
  for (int k = 0; k < n_probes; ++k) {
    const int idx = pick(rng);
    Vec p = p0;
    p[idx] = p0[idx] + step;
    probe.set_flat_params(p);
    const double fp =
        objective_and_gradient(subject, prep, sites, probe, cfg.coords, pairs, nullptr, nullptr, true);
    p[idx] = p0[idx] - step;
    probe.set_flat_params(p);
    const double fm =
        objective_and_gradient(subject, prep, sites, probe, cfg.coords, pairs, nullptr, nullptr, true);
    const double fd = (fp - fm) / (2.0 * step);
    const double rel = std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
    res.max_rel_err = std::max(res.max_rel_err, rel);
  }
  return res;
}

}  // namespace nlsteer
