#include <doctest.h>

#include <nlsteer/sites.hpp>
#include <nlsteer/subject.hpp>

#include "oracles.hpp"

using namespace nlsteer;

namespace {

Example planted_example(const SubjectConfig& cfg, double radius, double phi, Rng& rng) {
  Example ex;
  ex.input = gaussian_mat(cfg.seq_len, cfg.input_dim, rng);
  const int car = resolve_position(cfg.carrier_position, cfg.seq_len);
  ex.input(car, 0) = radius * std::cos(phi);
  ex.input(car, 1) = radius * std::sin(phi);
  ex.radius = radius;
  return ex;
}

}  // namespace

TEST_SUITE_BEGIN("subject");

TEST_CASE("planted rule holds on ten thousand random inputs") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  Rng rng = make_rng(7, 100);
  std::uniform_real_distribution<double> ur(cfg.radius_min, cfg.radius_max);
  std::uniform_real_distribution<double> ua(0.0, 2.0 * M_PI);
  int checked = 0;
  while (checked < 10000) {
    const double r = ur(rng);
    if (std::abs(r - cfg.r0) <= cfg.label_margin) continue;
    Example ex = planted_example(cfg, r, ua(rng), rng);
    const SubjectStates states = subject.forward(ex.input);
    CHECK(subject.comply_label(states) == (r > cfg.r0));
    CHECK(subject.planted_radius(states) == doctest::Approx(r).epsilon(1e-10));
    ++checked;
  }
}

TEST_CASE("radii on either side of the threshold give the expected labels") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  Rng rng = make_rng(7, 101);
  CHECK_FALSE(subject.comply_label(planted_example(cfg, 0.5, 1.1, rng).input));
  CHECK(subject.comply_label(planted_example(cfg, 1.5, 4.2, rng).input));
}

TEST_CASE("hooks are transparent when no edits are given") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  Rng rng = make_rng(7, 102);
  const Example ex = planted_example(cfg, 1.5, 0.3, rng);
  const SubjectStates plain = subject.forward(ex.input);
  const auto hooked = subject.forward_with_hooks(ex.input, {});
  REQUIRE(hooked.states.blocks.size() == plain.blocks.size());
  for (std::size_t l = 0; l < plain.blocks.size(); ++l)
    CHECK(hooked.states.blocks[l] == plain.blocks[l]);

  const auto identity = subject.forward_with_hooks(ex.input, {{Site{3, -1}, [](const Vec& h) {
                                                                 return h;
                                                               }}});
  for (std::size_t l = 0; l < plain.blocks.size(); ++l)
    CHECK(identity.states.blocks[l] == plain.blocks[l]);
}

TEST_CASE("overwriting the planted subspace flips refusals to compliance") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  const Vec q1 = subject.params().qp1, q2 = subject.params().qp2;
  const double target = 2.0 * cfg.r0;
  const Site site{cfg.planted_layer, cfg.encode_position};
  Subject::EditFn overwrite = [&](const Vec& h) {
    return Vec(h - q1.dot(h) * q1 - q2.dot(h) * q2 + target * q1);
  };
  Rng rng = make_rng(7, 103);
  std::uniform_real_distribution<double> ur(cfg.radius_min, cfg.r0 - cfg.label_margin);
  std::uniform_real_distribution<double> ua(0.0, 2.0 * M_PI);
  for (int i = 0; i < 1000; ++i) {
    const Example ex = planted_example(cfg, ur(rng), ua(rng), rng);
    REQUIRE_FALSE(subject.comply_label(ex.input));
    const auto res = subject.forward_with_hooks(ex.input, {{site, overwrite}});
    CHECK(res.comply);
  }
}

TEST_CASE("edits change nothing at earlier layers or earlier positions") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  Rng rng = make_rng(7, 104);
  const Example ex = planted_example(cfg, 0.6, 2.0, rng);
  const SubjectStates plain = subject.forward(ex.input);
  const Site edit_site{3, 4};
  const auto res = subject.forward_with_hooks(
      ex.input, {{edit_site, [](const Vec& h) { return Vec(h + Vec::Ones(h.size())); }}});
  for (int l = 0; l < cfg.layers; ++l)
    for (int t = 0; t < cfg.seq_len; ++t) {
      if (l < edit_site.layer || t < edit_site.position) {
        CHECK(res.states.blocks[static_cast<std::size_t>(l)].row(t) ==
              plain.blocks[static_cast<std::size_t>(l)].row(t));
      }
    }
  // downstream of the edit, same position: must differ
  CHECK(res.states.blocks[4].row(4) != plain.blocks[4].row(4));
}

TEST_CASE("one edit per site, finite outputs, resolvable sites") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  Rng rng = make_rng(7, 105);
  const Example ex = planted_example(cfg, 1.4, 0.0, rng);
  auto id = [](const Vec& h) { return h; };
  CHECK_THROWS_AS(subject.forward_with_hooks(ex.input, {{Site{2, -4}, id}, {Site{2, 4}, id}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(subject.forward_with_hooks(ex.input, {{Site{9, 0}, id}}), std::invalid_argument);
  CHECK_THROWS_AS(subject.forward_with_hooks(
                      ex.input, {{Site{2, 4}, [](const Vec& h) {
                                    Vec bad = h;
                                    bad[0] = std::numeric_limits<double>::quiet_NaN();
                                    return bad;
                                  }}}),
                  std::invalid_argument);
}

TEST_CASE("dataset generation fills verified, reproducible splits") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  const ContrastiveDataset data = generate_dataset(subject, 100, 100, 8, 50, 50);
  CHECK(data.train_pos.size() == 100);
  CHECK(data.train_neg.size() == 100);
  CHECK(data.test_pos.size() == 50);
  CHECK(data.test_neg.size() == 50);
  for (const Example& ex : data.train_pos) {
    CHECK(ex.comply);
    CHECK(subject.comply_label(ex.input));
    CHECK(ex.radius > cfg.r0);
  }
  for (const Example& ex : data.test_neg) {
    CHECK_FALSE(ex.comply);
    CHECK(ex.radius < cfg.r0);
  }

  const ContrastiveDataset again = generate_dataset(subject, 100, 100, 8, 50, 50);
  REQUIRE(again.train_pos.size() == data.train_pos.size());
  for (std::size_t i = 0; i < data.train_pos.size(); ++i)
    CHECK(again.train_pos[i].input == data.train_pos[i].input);

  CHECK_THROWS_AS(generate_dataset(subject, 0, 10, 8), std::invalid_argument);
}

TEST_CASE("no single direction linearly separates the planted classes") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  const ContrastiveDataset data = generate_dataset(subject, 500, 500, 8, 1, 1);
  const Site site{cfg.planted_layer, cfg.encode_position};
  const Site resolved = resolve_site(site, cfg.layers, cfg.seq_len);

  std::vector<Vec> plus, minus;
  for (const Example& ex : data.train_pos)
    plus.push_back(subject.forward(ex.input)
                       .blocks[static_cast<std::size_t>(resolved.layer)]
                       .row(resolved.position)
                       .transpose());
  for (const Example& ex : data.train_neg)
    minus.push_back(subject.forward(ex.input)
                        .blocks[static_cast<std::size_t>(resolved.layer)]
                        .row(resolved.position)
                        .transpose());

  Rng rng = make_rng(7, 106);
  double worst = 0.0;
  std::vector<double> sp(plus.size()), sm(minus.size());
  for (int k = 0; k < 10000; ++k) {
    const Vec dir = gaussian_vec(cfg.width, rng).normalized();
    for (std::size_t i = 0; i < plus.size(); ++i) sp[i] = dir.dot(plus[i]);
    for (std::size_t i = 0; i < minus.size(); ++i) sm[i] = dir.dot(minus[i]);
    const double a = auc_score(sp, sm);
    worst = std::max({worst, a, 1.0 - a});
  }
  CHECK(worst < 0.8);
}

TEST_CASE("invalid configurations name the offending field") {
  SubjectConfig cfg;
  cfg.layers = 3;
  try {
    Subject subject(cfg, 7);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "subject.layers");
  }
  SubjectConfig cfg2;
  cfg2.carrier_position = 6;  // does not precede the encode position
  CHECK_THROWS_AS(Subject(cfg2, 7), ConfigError);
}

TEST_CASE("identical seeds build identical subjects") {
  SubjectConfig cfg;
  Subject a(cfg, 7), b(cfg, 7), c(cfg, 8);
  CHECK(a.weight_checksum() == b.weight_checksum());
  CHECK(a.weight_checksum() != c.weight_checksum());
}

TEST_CASE("reverse mode through the resumed pass matches finite differences") {
  SubjectConfig cfg;
  Subject subject(cfg, 7);
  Rng rng = make_rng(7, 107);
  const Example ex = planted_example(cfg, 0.7, 1.9, rng);
  const SubjectStates plain = subject.forward(ex.input);

  for (const Site edit : {Site{2, 4}, Site{1, 4}, Site{3, 5}}) {
    const Vec h0 =
        plain.blocks[static_cast<std::size_t>(edit.layer)].row(edit.position).transpose();

    // a fixed linear functional over several downstream block outputs
    std::vector<std::pair<Site, Vec>> taps;
    Rng trng = make_rng(7, 108);
    for (const Site tap : {Site{3, 4}, Site{4, 6}, Site{5, 7}, Site{5, 4}})
      if (tap.layer > edit.layer) taps.emplace_back(tap, gaussian_vec(cfg.width, trng));

    auto value = [&](const Vec& h) {
      const SubjectStates st = subject.forward_from_override(plain, edit, h);
      double acc = 0.0;
      for (const auto& [site, w] : taps)
        acc += w.dot(st.blocks[static_cast<std::size_t>(site.layer)].row(site.position));
      return acc;
    };

    Subject::ResumeTrace trace;
    subject.forward_from_override(plain, edit, h0, &trace);
    const Vec analytic = subject.backward_from_taps(trace, taps);

    const double step = 1e-6;
    for (int i = 0; i < cfg.width; ++i) {
      Vec hp = h0, hm = h0;
      hp[i] += step;
      hm[i] -= step;
      const double fd = (value(hp) - value(hm)) / (2.0 * step);
      CHECK(rel_diff(analytic[i], fd, 1e-6) <= 1e-5);
    }
  }
}

TEST_SUITE_END();
