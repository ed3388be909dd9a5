#include <doctest.h>

#include <nlsteer/train.hpp>

#include "oracles.hpp"

using namespace nlsteer;

namespace {

struct Fixture {
  SubjectConfig scfg;
  Subject subject;
  ContrastiveDataset data;
  Fixture() : subject(scfg, 7), data(generate_dataset(subject, 100, 100, 8)) {}
};

TrainConfig quick_config(int steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("pair sampling is uniform, independent, and reproducible") {
  SUBCASE("singleton splits always give the same pair") {
    ContrastiveDataset tiny;
    tiny.train_pos.resize(1);
    tiny.train_neg.resize(1);
    Rng rng = make_rng(1, 1);
    const auto pairs = sample_pairs(tiny, 4, rng);
    REQUIRE(pairs.size() == 4);
    for (const auto& [n, p] : pairs) {
      CHECK(n == 0);
      CHECK(p == 0);
    }
  }
  SUBCASE("identical seeds give identical pair streams") {
    ContrastiveDataset d;
    d.train_pos.resize(13);
    d.train_neg.resize(9);
    Rng a = make_rng(5, 5), b = make_rng(5, 5);
    CHECK(sample_pairs(d, 64, a) == sample_pairs(d, 64, b));
  }
  SUBCASE("marginal frequencies stay within 3-sigma binomial bounds") {
    ContrastiveDataset d;
    d.train_pos.resize(10);
    d.train_neg.resize(10);
    Rng rng = make_rng(6, 6);
    const int draws = 100000;
    std::vector<int> cn(10, 0), cp(10, 0);
    for (const auto& [n, p] : sample_pairs(d, draws, rng)) {
      ++cn[static_cast<std::size_t>(n)];
      ++cp[static_cast<std::size_t>(p)];
    }
    const double mean = draws / 10.0;
    const double sigma = std::sqrt(draws * 0.1 * 0.9);
    for (int i = 0; i < 10; ++i) {
      CHECK(std::abs(cn[static_cast<std::size_t>(i)] - mean) <= 3 * sigma);
      CHECK(std::abs(cp[static_cast<std::size_t>(i)] - mean) <= 3 * sigma);
    }
  }
}

TEST_CASE("site statistics on the default subject give a rich supervision set") {
  Fixture f;
  const PreparedData prep = prepare_training_data(f.subject, f.data, Site{2, -4});
  const auto stats = compute_site_stats(f.subject, prep);
  CHECK(stats.size() == static_cast<std::size_t>(f.scfg.layers * f.scfg.seq_len));
  const LossSiteSet sites = select_sites(stats, 0.9, prep.site);
  CHECK(sites.entries.size() >= 5);
  for (const auto& st : sites.entries) {
    CHECK(downstream_of(st.site, prep.site));
    CHECK(st.auc >= 0.9);
    CHECK(std::abs(st.v.norm() - 1.0) <= 1e-10);
  }
}

TEST_CASE("zero training steps leave the map bitwise at its initialization") {
  Fixture f;
  TrainConfig cfg = quick_config(0);
  const TrainResult res = train_fmap(f.subject, f.data, cfg);
  IResNetFeatureMap fresh(cfg.map, cfg.seed);
  CHECK(res.map->flat_params() == fresh.flat_params());
  CHECK(res.report.loss_curve.empty());
}

TEST_CASE("training is deterministic given the seed") {
  Fixture f;
  TrainConfig cfg = quick_config(60);
  const TrainResult a = train_fmap(f.subject, f.data, cfg);
  const TrainResult b = train_fmap(f.subject, f.data, cfg);
  CHECK(a.report.loss_curve == b.report.loss_curve);
  CHECK(a.map->flat_params() == b.map->flat_params());
  CHECK(a.report.mu_bar_plus == b.report.mu_bar_plus);
}

TEST_CASE("training lowers the hinge loss and leaves the subject untouched") {
  Fixture f;
  const std::uint64_t checksum_before = f.subject.weight_checksum();
  TrainConfig cfg = quick_config(2000);
  const TrainResult res = train_fmap(f.subject, f.data, cfg);
  CHECK(f.subject.weight_checksum() == checksum_before);

  REQUIRE_FALSE(res.report.loss_curve.empty());
  CHECK(res.report.final_loss < 0.1 * res.report.initial_loss);

  // averaged over disjoint 100-step windows, the curve does not increase
  const auto& curve = res.report.loss_curve;
  std::vector<double> windows;
  for (std::size_t i = 0; i + 100 <= curve.size(); i += 100) {
    double acc = 0.0;
    for (std::size_t j = i; j < i + 100; ++j) acc += curve[j];
    windows.push_back(acc / 100.0);
  }
  for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1] + 1e-9);

  // the contraction guarantee holds after training
  for (const auto& b : res.map->blocks()) CHECK(lipschitz_estimate(b, 10000, 3) <= cfg.map.kappa);

  // interchange consistency on a trained map: the targeted coordinate moves
  const PreparedData prep = prepare_training_data(f.subject, f.data, cfg.site);
  const Vec z_plus = res.map->forward(prep.pos_h[0]);
  const Vec z_minus = res.map->forward(prep.neg_h[0]);
  Vec z_int = z_minus;
  z_int[0] = z_plus[0];
  auto [h_int, report] = res.map->inverse(z_int);
  CHECK(report.converged);
  CHECK(std::abs(res.map->forward(h_int)[0] - z_plus[0]) <= 1e-4);

  // saturation fractions were sampled and lie in [0, 1]
  REQUIRE_FALSE(res.report.saturation.empty());
  for (const auto& fr : res.report.saturation)
    for (double x : fr) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
}

TEST_CASE("gradient checks against central differences") {
  Fixture f;
  TrainConfig cfg = quick_config(0);

  SUBCASE("identity-initialized map") {
    IResNetFeatureMap map(cfg.map, cfg.seed);
    map.set_flat_params(Vec::Zero(map.param_count()));
    map.refresh_spectral(1);
    const GradCheckResult res = grad_check(f.subject, f.data, cfg, map, 25);
    CHECK(res.max_rel_err <= 1e-4);
  }
  SUBCASE("randomly initialized map") {
    IResNetFeatureMap map(cfg.map, 19);
    const GradCheckResult res = grad_check(f.subject, f.data, cfg, map, 25);
    CHECK(res.max_rel_err <= 1e-4);
  }
  SUBCASE("briefly trained map") {
    TrainConfig tc = quick_config(150);
    const TrainResult tr = train_fmap(f.subject, f.data, tc);
    const GradCheckResult res = grad_check(f.subject, f.data, tc, *tr.map, 20);
    CHECK(res.max_rel_err <= 1e-3);
  }
  SUBCASE("a loss with no active sites has zero gradient") {
    IResNetFeatureMap map(cfg.map, 19);
    const PreparedData prep = prepare_training_data(f.subject, f.data, cfg.site);
    LossSiteSet empty;
    empty.tau = 0.9;
    Vec grad(map.param_count());
    const double loss = objective_and_gradient(f.subject, prep, empty, map, cfg.coords,
                                               {{0, 0}, {1, 1}}, &grad);
    CHECK(loss == 0.0);
    CHECK(grad.norm() == 0.0);
  }
}

TEST_CASE("systematic inversion failure aborts training with a diagnostic") {
  Fixture f;
  TrainConfig cfg = quick_config(10);
  cfg.map.inversion.max_iters = 1;
  cfg.map.inversion.rel_tol = 1e-15;
  CHECK_THROWS_AS(train_fmap(f.subject, f.data, cfg), TrainingError);
}

TEST_CASE("config validation names the offending field") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "train.learning_rate");
  }
  TrainConfig cfg2;
  cfg2.map.kappa = 1.0;
  CHECK_THROWS_AS(cfg2.validate(), ConfigError);
}

TEST_SUITE_END();
