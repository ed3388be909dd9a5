#include <doctest.h>

#include <nlsteer/intervene.hpp>

using namespace nlsteer;

namespace {

Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<int>(xs.size()));
  int i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

IResNetFeatureMap identity_map(int d) {
  IResNetConfig cfg;
  cfg.dim = d;
  cfg.width = 8;
  IResNetFeatureMap map(cfg, 11);
  map.set_flat_params(Vec::Zero(map.param_count()));
  map.refresh_spectral(1);
  return map;
}

}  // namespace

TEST_SUITE_BEGIN("intervene");

TEST_CASE("linear intervention adds scaled directions") {
  CHECK(linear_intervene(make_vec({1, 0}), {make_vec({0, 1})}, {2.0}) == make_vec({1, 2}));
  const Vec h = make_vec({0.3, -0.7});
  CHECK(linear_intervene(h, {make_vec({1, 0})}, {0.0}) == h);
  const Vec r = linear_intervene(make_vec({1, 1, 0}), {make_vec({1, 0, 0}), make_vec({0, 1, 0})},
                                 {-1.0, 3.0});
  CHECK(r == make_vec({0, 4, 0}));
}

TEST_CASE("non-orthonormal directions are rejected") {
  CHECK_THROWS_AS(linear_intervene(make_vec({1, 0}), {make_vec({1, 1})}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(
      linear_intervene(make_vec({1, 0}), {make_vec({1, 0}), make_vec({1, 0})}, {1.0, 1.0}),
      std::invalid_argument);
}

TEST_CASE("basis intervention in the identity basis") {
  LinearFeatureMap map(Mat::Identity(2, 2));
  InterventionSpec spec;
  spec.coords = {0};
  spec.alphas = {1.0};
  CHECK(basis_intervene(make_vec({5, 5}), map, spec) == make_vec({6, 5}));
  spec.alphas = {0.0};
  CHECK(basis_intervene(make_vec({5, 5}), map, spec) == make_vec({5, 5}));
}

TEST_CASE("basis intervention equals the direction form under rotation") {
  Mat W(2, 2);
  W << 0, -1, 1, 0;
  LinearFeatureMap map(W);
  InterventionSpec spec;
  spec.coords = {0};
  spec.alphas = {1.0};
  const Vec h = make_vec({1, 0});
  const Vec via_basis = basis_intervene(h, map, spec);
  const Vec via_dirs = linear_intervene(h, {map.direction(0)}, {1.0});
  CHECK((via_basis - via_dirs).norm() <= 1e-10);
}

TEST_CASE("the three intervention forms agree for orthogonal maps") {
  Rng rng = make_rng(1234, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 3 + static_cast<int>(trial % 6);
    LinearFeatureMap map = LinearFeatureMap::random(d, rng);
    const Vec h = gaussian_vec(d, rng);
    InterventionSpec spec;
    std::uniform_int_distribution<int> pick(0, d - 1);
    const int c0 = pick(rng);
    spec.coords = {c0, (c0 + 1) % d};
    spec.alphas = {gaussian_vec(1, rng)[0], gaussian_vec(1, rng)[0]};

    const Vec a = basis_intervene(h, map, spec);
    const Vec b = nonlinear_intervene(h, map, spec);
    const Vec c = linear_intervene(h, {map.direction(spec.coords[0]), map.direction(spec.coords[1])},
                                   spec.alphas);
    CHECK((a - b).norm() <= 1e-10);
    CHECK((a - c).norm() <= 1e-10);
  }
}

TEST_CASE("non-linear intervention reduces to the linear form on an identity map") {
  auto map = identity_map(2);
  InterventionSpec spec;
  spec.coords = {1};
  spec.alphas = {5.0};
  const Vec out = nonlinear_intervene(make_vec({1, 2}), map, spec);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(7.0).epsilon(1e-12));

  IResNetConfig cfg;
  cfg.dim = 4;
  IResNetFeatureMap rnd(cfg, 21);
  Rng rng = make_rng(21, 3);
  const Vec h = gaussian_vec(4, rng);
  InterventionSpec zero;
  zero.coords = {0};
  zero.alphas = {0.0};
  CHECK(rel_err(nonlinear_intervene(h, rnd, zero), h) <= 1e-4);
}

TEST_CASE("interchange pins the targeted coordinates to the source") {
  SUBCASE("identical states round-trip") {
    IResNetConfig cfg;
    cfg.dim = 4;
    IResNetFeatureMap map(cfg, 4);
    Rng rng = make_rng(4, 1);
    const Vec h = gaussian_vec(4, rng);
    CHECK(rel_err(interchange(h, h, map, {0}), h) <= 1e-4);
  }
  SUBCASE("identity map transfers the raw coordinate") {
    auto map = identity_map(2);
    const Vec out = interchange(make_vec({0, 0}), make_vec({3, 4}), map, {0});
    CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("random map transfers the coordinate in feature space") {
    IResNetConfig cfg;
    cfg.dim = 6;
    IResNetFeatureMap map(cfg, 4);
    Rng rng = make_rng(4, 2);
    for (int i = 0; i < 100; ++i) {
      const Vec hm = gaussian_vec(6, rng), hp = gaussian_vec(6, rng);
      const Vec out = interchange(hm, hp, map, {0});
      const Vec zo = map.forward(out);
      const Vec zp = map.forward(hp);
      const Vec zm = map.forward(hm);
      CHECK(std::abs(zo[0] - zp[0]) <= 1e-4);
      for (int j = 1; j < 6; ++j) CHECK(std::abs(zo[j] - zm[j]) <= 1e-4);
    }
  }
}

TEST_CASE("clamping sets the feature coordinate to the cached mean") {
  SUBCASE("identity map") {
    auto map = identity_map(2);
    const Vec out = clamp_to_mean(make_vec({0.2, 7.0}), map, 0, 1.0);
    CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(7.0).epsilon(1e-12));
  }
  SUBCASE("already at the target") {
    IResNetConfig cfg;
    cfg.dim = 4;
    IResNetFeatureMap map(cfg, 7);
    Rng rng = make_rng(7, 1);
    const Vec h = gaussian_vec(4, rng);
    const double mu = map.forward(h)[0];
    CHECK(rel_err(clamp_to_mean(h, map, 0, mu), h) <= 1e-4);
  }
  SUBCASE("random map: the clamped coordinate lands on the target") {
    IResNetConfig cfg;
    cfg.dim = 5;
    IResNetFeatureMap map(cfg, 7);
    Rng rng = make_rng(7, 2);
    for (int i = 0; i < 100; ++i) {
      const Vec h = gaussian_vec(5, rng);
      const Vec out = clamp_to_mean(h, map, 2, 0.8);
      CHECK(std::abs(map.forward(out)[2] - 0.8) <= 1e-4);
    }
  }
  SUBCASE("clamping twice equals clamping once") {
    IResNetConfig cfg;
    cfg.dim = 5;
    IResNetFeatureMap map(cfg, 7);
    Rng rng = make_rng(7, 3);
    const Vec h = gaussian_vec(5, rng);
    const Vec once = clamp_to_mean(h, map, 1, -0.4);
    const Vec twice = clamp_to_mean(once, map, 1, -0.4);
    CHECK((twice - once).norm() <= 10 * cfg.inversion.rel_tol * std::max(once.norm(), 1.0));
  }
}

TEST_CASE("difference-in-means direction points toward the refusing class") {
  SUBCASE("separated point masses") {
    std::vector<Vec> plus{make_vec({0, 0}), make_vec({0, 0})};
    std::vector<Vec> minus{make_vec({1, 0})};
    const auto dir = dim_direction(plus, minus);
    CHECK(dir.v == make_vec({1, 0}));
  }
  SUBCASE("identical sets are degenerate") {
    std::vector<Vec> same{make_vec({1, 2})};
    CHECK_THROWS_AS(dim_direction(same, same), std::invalid_argument);
  }
  SUBCASE("gaussian clusters recover the separating axis") {
    Rng rng = make_rng(5, 0);
    const Vec axis = make_vec({2, 1}).normalized();
    std::vector<Vec> plus, minus;
    for (int i = 0; i < 1000; ++i) {
      plus.push_back(-axis + gaussian_vec(2, rng));
      minus.push_back(axis + gaussian_vec(2, rng));
    }
    const auto dir = dim_direction(plus, minus);
    const double angle = std::acos(std::clamp(dir.v.dot(axis), -1.0, 1.0)) * 180.0 / M_PI;
    CHECK(angle <= 5.0);
  }
}

TEST_CASE("ablation removes the projection and is idempotent") {
  CHECK(ablate(make_vec({1, 1}), make_vec({1, 0})) == make_vec({0, 1}));
  const Vec h = make_vec({0, 3});
  CHECK(ablate(h, make_vec({1, 0})) == h);

  Rng rng = make_rng(99, 0);
  for (int i = 0; i < 1000; ++i) {
    const Vec h2 = gaussian_vec(6, rng);
    const Vec v = gaussian_vec(6, rng).normalized();
    const Vec out = ablate(h2, v);
    CHECK(std::abs(v.dot(out)) <= 1e-10);
    CHECK(out.norm() <= h2.norm() + 1e-12);
    CHECK((ablate(out, v) - out).norm() <= 1e-10);
  }
}

TEST_CASE("activation addition shifts by exactly alpha") {
  CHECK(actadd(make_vec({0, 0}), make_vec({0, 1}), 3.0) == make_vec({0, 3}));
  const Vec h = make_vec({4, -2});
  CHECK(actadd(h, make_vec({0, 1}), 0.0) == h);
  Rng rng = make_rng(98, 0);
  for (int i = 0; i < 200; ++i) {
    const Vec h2 = gaussian_vec(5, rng);
    const Vec v = gaussian_vec(5, rng).normalized();
    const double a = 2.0 * gaussian_vec(1, rng)[0];
    CHECK((actadd(h2, v, a) - h2).norm() == doctest::Approx(std::abs(a)).epsilon(1e-10));
  }
}

TEST_SUITE_END();
