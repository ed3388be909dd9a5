#include "nlsteer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace nlsteer {

namespace {

class NoneMethod final : public InterventionMethod {
 public:
  std::string name() const override { return "none"; }
  std::vector<std::pair<Site, Subject::EditFn>> edits_for(const Subject&, const Example&) const override {
    return {};
  }
};

class DimAblation final : public InterventionMethod {
 public:
  explicit DimAblation(SteeringDirection dir) : dir_(std::move(dir)) {}
  std::string name() const override { return "dim-ablate"; }
  std::vector<std::pair<Site, Subject::EditFn>> edits_for(const Subject& subject,
                                                          const Example&) const override {
    std::vector<std::pair<Site, Subject::EditFn>> out;
    const Vec v = dir_.v;
    for (const Site& s : subject.all_sites())
      out.emplace_back(s, [v](const Vec& h) { return ablate(h, v); });
    return out;
  }

 private:
  SteeringDirection dir_;
};

class DimActAdd final : public InterventionMethod {
 public:
  explicit DimActAdd(SteeringDirection dir) : dir_(std::move(dir)) {
    if (dir_.layer_scope < 0)
      throw std::invalid_argument("dim-actadd requires a designated layer");
  }
  std::string name() const override { return "dim-actadd"; }
  std::vector<std::pair<Site, Subject::EditFn>> edits_for(const Subject& subject,
                                                          const Example&) const override {
    std::vector<std::pair<Site, Subject::EditFn>> out;
    const Vec v = dir_.v;
    const double a = dir_.alpha;
    for (int t = 0; t < subject.seq_len(); ++t)
      out.emplace_back(Site{dir_.layer_scope, t}, [v, a](const Vec& h) { return actadd(h, v, a); });
    return out;
  }

 private:
  SteeringDirection dir_;
};

class LinearAtLossSites final : public InterventionMethod {
 public:
  explicit LinearAtLossSites(LossSiteSet sites) : sites_(std::move(sites)) {}
  std::string name() const override { return "linear-at-loss-sites"; }
  std::vector<std::pair<Site, Subject::EditFn>> edits_for(const Subject&, const Example&) const override {
    std::vector<std::pair<Site, Subject::EditFn>> out;
    for (const SiteStats& st : sites_.entries) {
      const Vec v = st.v;
      const double mu = st.mu_plus;
      out.emplace_back(st.site, [v, mu](const Vec& h) { return h + (mu - v.dot(h)) * v; });
    }
    return out;
  }

 private:
  LossSiteSet sites_;
};

class FmapClamp final : public InterventionMethod {
 public:
  FmapClamp(const FeatureMap& map, Site site, int coord, double mu, std::string name)
      : map_(map), site_(site), coord_(coord), mu_(mu), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::vector<std::pair<Site, Subject::EditFn>> edits_for(const Subject&, const Example&) const override {
    const FeatureMap& map = map_;
    const int coord = coord_;
    const double mu = mu_;
    return {{site_, [&map, coord, mu](const Vec& h) { return clamp_to_mean(h, map, coord, mu); }}};
  }

 private:
  const FeatureMap& map_;
  Site site_;
  int coord_;
  double mu_;
  std::string name_;
};

class OracleRadius final : public InterventionMethod {
 public:
  explicit OracleRadius(double radius) : radius_(radius) {}
  std::string name() const override { return "oracle-radius"; }
  std::vector<std::pair<Site, Subject::EditFn>> edits_for(const Subject& subject,
                                                          const Example&) const override {
    const Vec q1 = subject.params().qp1;
    const Vec q2 = subject.params().qp2;
    const double r = radius_;
    const Site site{subject.config().planted_layer, subject.config().encode_position};
    return {{site, [q1, q2, r](const Vec& h) {
               return Vec(h - q1.dot(h) * q1 - q2.dot(h) * q2 + r * q1);
             }}};
  }

 private:
  double radius_;
};

}  // namespace

std::unique_ptr<InterventionMethod> make_none_method() { return std::make_unique<NoneMethod>(); }
std::unique_ptr<InterventionMethod> make_dim_ablation(SteeringDirection dir) {
  return std::make_unique<DimAblation>(std::move(dir));
}
std::unique_ptr<InterventionMethod> make_dim_actadd(SteeringDirection dir) {
  return std::make_unique<DimActAdd>(std::move(dir));
}
std::unique_ptr<InterventionMethod> make_linear_at_loss_sites(LossSiteSet sites) {
  return std::make_unique<LinearAtLossSites>(std::move(sites));
}
std::unique_ptr<InterventionMethod> make_fmap_clamp(const FeatureMap& map, Site site, int coord,
                                                    double mu_bar_plus, std::string name) {
  return std::make_unique<FmapClamp>(map, site, coord, mu_bar_plus, std::move(name));
}
std::unique_ptr<InterventionMethod> make_oracle_radius(double radius) {
  return std::make_unique<OracleRadius>(radius);
}

MethodEval evaluate_method(const Subject& subject, const InterventionMethod& method,
                           const std::vector<Example>& test_set, int threads) {
  if (test_set.empty()) throw EvalError("evaluate_method: empty test set");
  const int n = static_cast<int>(test_set.size());
  std::vector<char> comply(static_cast<std::size_t>(n), 0);
  std::vector<int> sites(static_cast<std::size_t>(n), 0);
  std::vector<double> l2(static_cast<std::size_t>(n), 0.0);

  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const Example& ex = test_set[static_cast<std::size_t>(i)];
      const auto edits = method.edits_for(subject, ex);
      const auto res = subject.forward_with_hooks(ex.input, edits);
      comply[static_cast<std::size_t>(i)] = res.comply ? 1 : 0;
      sites[static_cast<std::size_t>(i)] = static_cast<int>(res.edits.size());
      double total = 0.0;
      for (const EditRecord& e : res.edits) total += (e.after - e.before).norm();
      l2[static_cast<std::size_t>(i)] = total;
    }
  };

  if (threads <= 1) {
    work(0, n);
  } else {
    const int k = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(k));
    for (int t = 0; t < k; ++t) {
      const int begin = n * t / k, end = n * (t + 1) / k;
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  MethodEval out;
  out.method = method.name();
  long flips = 0;
  double sum_sites = 0.0, sum_l2 = 0.0;
  for (int i = 0; i < n; ++i) {
    flips += comply[static_cast<std::size_t>(i)];
    sum_sites += sites[static_cast<std::size_t>(i)];
    sum_l2 += l2[static_cast<std::size_t>(i)];
  }
  out.compliance = static_cast<double>(flips) / static_cast<double>(n);
  out.magnitude.sites_per_example.assign(sites.begin(), sites.end());
  out.magnitude.l2_per_example.assign(l2.begin(), l2.end());
  out.magnitude.mean_sites = sum_sites / static_cast<double>(n);
  out.magnitude.mean_l2 = sum_l2 / static_cast<double>(n);
  return out;
}

double compliance_rate(const Subject& subject, const InterventionMethod& method,
                       const std::vector<Example>& test_negatives, int threads) {
  return evaluate_method(subject, method, test_negatives, threads).compliance;
}

MagnitudeReport intervention_magnitude(const Subject& subject, const InterventionMethod& method,
                                       const std::vector<Example>& test_set, int threads) {
  return evaluate_method(subject, method, test_set, threads).magnitude;
}

double linear_at_loss_sites(const Subject& subject, const LossSiteSet& sites,
                            const std::vector<Example>& test_negatives, int threads) {
  const auto method = make_linear_at_loss_sites(sites);
  return compliance_rate(subject, *method, test_negatives, threads);
}

SweepResult layer_sweep(const Subject& subject, const ContrastiveDataset& data, const TrainConfig& base,
                        const std::vector<int>& layers, int threads) {
  if (layers.size() < 2) throw std::invalid_argument("layer_sweep: need at least 2 layers");
  SweepResult out;
  double best = -1.0;
  for (int layer : layers) {
    SweepEntry entry;
    entry.layer = layer;
    TrainConfig cfg = base;
    cfg.site.layer = layer;
    try {
      TrainResult res = train_fmap(subject, data, cfg);
      const auto method = make_fmap_clamp(*res.map, cfg.site, cfg.coords.front(),
                                          res.report.mu_bar_plus, "nonlinear-clamp");
      const MethodEval ev = evaluate_method(subject, *method, data.test_neg, threads);
      entry.compliance = ev.compliance;
      entry.magnitude = ev.magnitude.mean_l2;
    } catch (const std::exception& e) {
      entry.failed = true;
      entry.failure = e.what();
      entry.compliance = 0.0;
      entry.magnitude = 0.0;
    }
    if (entry.compliance > best) {
      best = entry.compliance;
      out.best_layer = layer;
    }
    out.entries.push_back(std::move(entry));
  }
  return out;
}

AblationResult run_linear_fmap_ablation(const Subject& subject, const ContrastiveDataset& data,
                                        const TrainConfig& cfg, int threads) {
  AblationResult out;
  out.nonlinear = train_fmap(subject, data, cfg);
  TrainConfig linear_cfg = cfg;
  linear_cfg.map.slope = 1.0;  // identity activation: every block affine
  out.linear = train_fmap(subject, data, linear_cfg);

  const auto nl = make_fmap_clamp(*out.nonlinear.map, cfg.site, cfg.coords.front(),
                                  out.nonlinear.report.mu_bar_plus, "nonlinear-clamp");
  const auto lin = make_fmap_clamp(*out.linear.map, cfg.site, cfg.coords.front(),
                                   out.linear.report.mu_bar_plus, "linear-fmap");
  out.nonlinear_rate = compliance_rate(subject, *nl, data.test_neg, threads);
  out.linear_rate = compliance_rate(subject, *lin, data.test_neg, threads);
  return out;
}

}  // namespace nlsteer
