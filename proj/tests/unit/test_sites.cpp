#include <doctest.h>

#include <nlsteer/sites.hpp>

#include "oracles.hpp"

using namespace nlsteer;

namespace {

Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<int>(xs.size()));
  int i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("sites");

TEST_CASE("auc on small hand-checked sets") {
  const std::vector<double> plus{0.9, 0.3}, minus{0.5, 0.1};
  CHECK(oracles::exhaustive_auc(plus, minus) == 0.75);  // 3 of 4 pairs
  CHECK(auc_score(plus, minus) == 0.75);

  CHECK(auc_score({2.0, 3.0}, {0.0, 1.0}) == 1.0);
  CHECK(auc_score({1.0, 2.0, 2.0}, {2.0, 1.0, 2.0}) == 0.5);
}

TEST_CASE("rank-based auc equals the exhaustive pairwise oracle, ties included") {
  Rng rng = make_rng(77, 0);
  std::uniform_int_distribution<int> size_dist(1, 300);
  std::uniform_int_distribution<int> value_dist(0, 12);  // heavy ties
  for (int trial = 0; trial < 100; ++trial) {
    const int np = size_dist(rng), nm = size_dist(rng);
    std::vector<double> plus(static_cast<std::size_t>(np)), minus(static_cast<std::size_t>(nm));
    for (auto& x : plus) x = static_cast<double>(value_dist(rng)) * 0.25;
    for (auto& x : minus) x = static_cast<double>(value_dist(rng)) * 0.25;
    CHECK(auc_score(plus, minus) == oracles::exhaustive_auc(plus, minus));
  }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
  Rng rng = make_rng(78, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> plus(40), minus(55);
    std::uniform_int_distribution<int> value_dist(-6, 6);
    for (auto& x : plus) x = 0.5 * value_dist(rng);
    for (auto& x : minus) x = 0.5 * value_dist(rng);
    const double base = auc_score(plus, minus);
    auto squash = [](double x) { return x * x * x + 2.0 * x; };
    for (auto& x : plus) x = squash(x);
    for (auto& x : minus) x = squash(x);
    CHECK(auc_score(plus, minus) == base);
  }
}

TEST_CASE("mean-difference stats on separated point masses") {
  std::vector<Vec> plus{make_vec({1, 0}), make_vec({1, 0})};
  std::vector<Vec> minus{make_vec({0, 0}), make_vec({0, 0})};
  const SiteStats st = mean_diff_stats(Site{0, 0}, plus, minus);
  CHECK_FALSE(st.degenerate);
  CHECK(st.v == make_vec({1, 0}));
  CHECK(st.mu_plus == 1.0);
  CHECK(st.auc == 1.0);
}

TEST_CASE("identical classes make a site degenerate") {
  std::vector<Vec> same{make_vec({0.5, -0.5})};
  const SiteStats st = mean_diff_stats(Site{1, 2}, same, same);
  CHECK(st.degenerate);
  const std::vector<SiteStats> all{st};
  CHECK_THROWS_AS(select_sites(all, 0.9, Site{0, 0}), NoSupervisionError);
}

TEST_CASE("cluster auc matches the exhaustive oracle exactly") {
  Rng rng = make_rng(6, 0);
  std::vector<Vec> plus, minus;
  for (int i = 0; i < 400; ++i) {
    plus.push_back(make_vec({1.0, 0.5}) + gaussian_vec(2, rng));
    minus.push_back(make_vec({-1.0, -0.5}) + gaussian_vec(2, rng));
  }
  const SiteStats st = mean_diff_stats(Site{0, 0}, plus, minus);
  std::vector<double> sp, sm;
  for (const auto& a : plus) sp.push_back(st.v.dot(a));
  for (const auto& a : minus) sm.push_back(st.v.dot(a));
  CHECK(st.auc == oracles::exhaustive_auc(sp, sm));
  CHECK(st.auc > 0.8);
}

TEST_CASE("site selection thresholds, ordering, and the causal cone") {
  auto stat = [](int layer, int pos, double auc) {
    SiteStats st;
    st.site = Site{layer, pos};
    st.v = make_vec({1, 0});
    st.mu_plus = 1.0;
    st.auc = auc;
    return st;
  };
  const Site intervention{2, 4};

  SUBCASE("all high-auc downstream sites are kept") {
    std::vector<SiteStats> all{stat(3, 0, 1.0), stat(4, 2, 1.0), stat(2, 5, 1.0)};
    const auto set = select_sites(all, 0.9, intervention);
    CHECK(set.entries.size() == 3);
  }
  SUBCASE("uniformly weak sites mean no supervision") {
    std::vector<SiteStats> all{stat(3, 0, 0.6), stat(4, 2, 0.6)};
    CHECK_THROWS_AS(select_sites(all, 0.9, intervention), NoSupervisionError);
  }
  SUBCASE("mixed aucs keep exactly the ones at or above tau") {
    std::vector<SiteStats> all{stat(3, 0, 0.95), stat(3, 1, 0.85), stat(3, 2, 0.92)};
    const auto set = select_sites(all, 0.9, intervention);
    REQUIRE(set.entries.size() == 2);
    CHECK(set.entries[0].site.position == 0);
    CHECK(set.entries[1].site.position == 2);
  }
  SUBCASE("upstream and same-position sites are excluded") {
    std::vector<SiteStats> all{stat(1, 7, 1.0), stat(2, 4, 1.0), stat(2, 3, 1.0), stat(2, 5, 1.0)};
    const auto set = select_sites(all, 0.9, intervention);
    REQUIRE(set.entries.size() == 1);
    CHECK(set.entries[0].site == Site{2, 5});
  }
  SUBCASE("entries come out layer-major, then by position") {
    std::vector<SiteStats> all{stat(4, 1, 1.0), stat(3, 6, 1.0), stat(3, 5, 1.0)};
    const auto set = select_sites(all, 0.9, intervention);
    REQUIRE(set.entries.size() == 3);
    CHECK(set.entries[0].site == Site{3, 5});
    CHECK(set.entries[1].site == Site{3, 6});
    CHECK(set.entries[2].site == Site{4, 1});
  }
}

TEST_CASE("hinge loss saturates at the positive-class mean") {
  auto stat = [](int layer, int pos, double mu) {
    SiteStats st;
    st.site = Site{layer, pos};
    st.v = make_vec({1, 0});
    st.mu_plus = mu;
    st.auc = 1.0;
    return st;
  };
  LossSiteSet set;
  set.entries = {stat(3, 0, 1.0), stat(3, 1, 1.0), stat(4, 0, 1.0)};

  std::map<Site, double> proj{{Site{3, 0}, 2.0}, {Site{3, 1}, 0.5}, {Site{4, 0}, 1.0}};
  CHECK(hinge_loss(proj, set) == 0.5);  // only the middle term is active

  std::map<Site, double> sat{{Site{3, 0}, 1.0}, {Site{3, 1}, 3.0}, {Site{4, 0}, 1.5}};
  CHECK(hinge_loss(sat, set) == 0.0);

  LossSiteSet one;
  one.entries = {stat(0, 0, 1.0)};
  CHECK(hinge_loss({{Site{0, 0}, 0.2}}, one) == doctest::Approx(0.8).epsilon(1e-15));

  std::map<Site, double> missing{{Site{3, 0}, 2.0}};
  CHECK_THROWS_AS(hinge_loss(missing, set), std::invalid_argument);
}

TEST_CASE("hinge subgradient is -1 below the target and 0 above") {
  SiteStats st;
  st.site = Site{0, 0};
  st.v = make_vec({1});
  st.mu_plus = 1.0;
  st.auc = 1.0;
  LossSiteSet set;
  set.entries = {st};
  const double h = 1e-6;
  for (double p : {0.2, 0.7, -1.0}) {
    const double fd = (hinge_loss({{Site{0, 0}, p + h}}, set) - hinge_loss({{Site{0, 0}, p - h}}, set)) /
                      (2 * h);
    CHECK(fd == doctest::Approx(-1.0).epsilon(1e-9));
  }
  for (double p : {1.5, 2.0, 10.0}) {
    const double fd = (hinge_loss({{Site{0, 0}, p + h}}, set) - hinge_loss({{Site{0, 0}, p - h}}, set)) /
                      (2 * h);
    CHECK(fd == 0.0);
  }
}

TEST_CASE("position resolution and the downstream relation") {
  CHECK(resolve_position(-1, 8) == 7);
  CHECK(resolve_position(-4, 8) == 4);
  CHECK(resolve_position(3, 8) == 3);
  CHECK_THROWS_AS(resolve_position(-9, 8), std::invalid_argument);
  CHECK_THROWS_AS(resolve_position(8, 8), std::invalid_argument);

  CHECK(downstream_of(Site{3, 0}, Site{2, 4}));
  CHECK(downstream_of(Site{2, 5}, Site{2, 4}));
  CHECK_FALSE(downstream_of(Site{2, 4}, Site{2, 4}));
  CHECK_FALSE(downstream_of(Site{1, 7}, Site{2, 4}));
}

TEST_SUITE_END();
