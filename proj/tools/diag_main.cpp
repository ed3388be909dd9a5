// Scratch diagnostics for training dynamics; not part of the deliverable
// surface (built only when needed).
#include <nlsteer/eval.hpp>
#include <nlsteer/train.hpp>

#include <cstdio>

using namespace nlsteer;

int main(int argc, char** argv) {
  double lr = argc > 1 ? std::atof(argv[1]) : 1e-3;
  int steps = argc > 2 ? std::atoi(argv[2]) : 2000;
  double decay = argc > 3 ? std::atof(argv[3]) : 0.0;  // final lr fraction = 1-decay
  double embed = argc > 4 ? std::atof(argv[4]) : -1.0;
  double mlp_early = argc > 5 ? std::atof(argv[5]) : -1.0;
  double mlp_late = argc > 6 ? std::atof(argv[6]) : -1.0;
  bool quiet = argc > 7;

  SubjectConfig scfg;
  if (embed > 0) scfg.embed_scale = embed;
  if (mlp_early >= 0) scfg.mlp_gain = mlp_early;
  if (mlp_late >= 0) scfg.mlp_gain_late = mlp_late;
  int ndata = argc > 8 ? std::atoi(argv[8]) : 100;
  if (argc > 9) scfg.foothold_gain = std::atof(argv[9]);
  if (argc > 10) scfg.foothold_noise = std::atof(argv[10]);
  if (argc > 11) scfg.radius_min = std::atof(argv[11]);
  bool run_linear = argc > 12 && std::string(argv[12]) == "lin";
  Subject subject(scfg, 7);
  ContrastiveDataset data = generate_dataset(subject, ndata, ndata, 8, 100, 100);

  TrainConfig cfg;
  cfg.seed = 7;
  cfg.steps = steps;
  cfg.learning_rate = lr;

  PreparedData prep = prepare_training_data(subject, data, cfg.site);
  auto stats = compute_site_stats(subject, prep);
  LossSiteSet sites = select_sites(stats, cfg.tau, prep.site);
  double min_auc = 1.0, min_align = 1.0;
  for (const auto& st : sites.entries) {
    min_auc = std::min(min_auc, st.auc);
    min_align = std::min(min_align, std::abs(st.v.dot(subject.params().qv)));
  }
  std::printf("sites=%zu min_auc=%.4f min_align=%.3f\n", sites.entries.size(), min_auc, min_align);

  IResNetFeatureMap map(cfg.map, cfg.seed);
  const int P = map.param_count();
  Vec m = Vec::Zero(P), v = Vec::Zero(P), grad(P);
  Rng pair_rng = make_rng(cfg.seed, 0x9a125);

  auto corr_probe = [&]() {
    double sr = 0, sf = 0, srr = 0, sff = 0, srf = 0;
    const auto n = static_cast<double>(prep.pos_h.size());
    for (std::size_t i = 0; i < prep.pos_h.size(); ++i) {
      const double r = data.train_pos[i].radius;
      const double f0 = map.forward(prep.pos_h[i])[0];
      sr += r; sf += f0; srr += r * r; sff += f0 * f0; srf += r * f0;
    }
    const double cov = srf / n - sr / n * sf / n;
    const double vr = srr / n - sr / n * sr / n, vf = sff / n - sf / n * sf / n;
    return cov / std::sqrt(std::max(vr * vf, 1e-300));
  };
  auto probe = [&](int step, double loss) {
    // measure the intervened radius on a fixed probe set
    double mean_r = 0.0, mean_disp = 0.0;
    const int n = 32;
    for (int i = 0; i < n; ++i) {
      const Vec& hm = prep.neg_h[i % prep.neg_h.size()];
      const Vec& hp = prep.pos_h[(i * 7) % prep.pos_h.size()];
      Vec zi = map.forward(hm);
      zi[0] = map.forward(hp)[0];
      IResNetFeatureMap::InverseTrace it;
      Vec hi = map.inverse_traced(zi, it);
      if (!it.report.converged) continue;
      const auto& p = subject.params();
      const double a = p.qp1.dot(hi), b = p.qp2.dot(hi);
      mean_r += std::sqrt(a * a + b * b);
      mean_disp += (hi - hm).norm();
    }
    std::printf("step %5d loss %10.4f  int_radius %.3f  disp %.3f  corr %.3f\n", step, loss,
                mean_r / n, mean_disp / n, corr_probe());
  };

  for (int step = 0; step < cfg.steps; ++step) {
    map.refresh_spectral(1);
    auto pairs = sample_pairs(data, cfg.batch, pair_rng);
    double loss = objective_and_gradient(subject, prep, sites, map, cfg.coords, pairs, &grad);
    if (!quiet && step % 100 == 0) probe(step, loss);
    const double bc1 = 1.0 - std::pow(0.9, step + 1);
    const double bc2 = 1.0 - std::pow(0.999, step + 1);
    Vec p = map.flat_params();
    for (int i = 0; i < P; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grad[i];
      v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
      const double lr_t = cfg.learning_rate * (1.0 - decay * static_cast<double>(step) / std::max(1, cfg.steps - 1));
      p[i] -= lr_t * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
    }
    map.set_flat_params(p);
  }
  map.refresh_spectral(20);
  probe(cfg.steps, -1.0);

  double mu = 0.0;
  for (const Vec& h : prep.pos_h) mu += map.forward(h)[0];
  mu /= static_cast<double>(prep.pos_h.size());

  // f0-vs-radius fidelity on the train positives
  {
    double sr = 0, sf = 0, srr = 0, sff = 0, srf = 0;
    const auto n = static_cast<double>(prep.pos_h.size());
    for (std::size_t i = 0; i < prep.pos_h.size(); ++i) {
      const double r = data.train_pos[i].radius;
      const double f0 = map.forward(prep.pos_h[i])[0];
      sr += r; sf += f0; srr += r * r; sff += f0 * f0; srf += r * f0;
    }
    const double cov = srf / n - sr / n * sf / n;
    const double vr = srr / n - sr / n * sr / n, vf = sff / n - sf / n * sf / n;
    std::printf("corr(f0, radius) over D+ = %.3f (std f0 = %.3f)\n",
                cov / std::sqrt(vr * vf), std::sqrt(vf));
  }

  auto clamp = make_fmap_clamp(map, cfg.site, 0, mu, "clamp");
  const auto& p = subject.params();
  int n_comply = 0, n_radius = 0, n_votes = 0, n_cert = 0;
  double mean_rho = 0, mean_rho2 = 0;
  for (const Example& ex : data.test_neg) {
    const auto res = subject.forward_with_hooks(ex.input, clamp->edits_for(subject, ex));
    const Vec& h2 = res.edits[0].after;
    const double a = p.qp1.dot(h2), b = p.qp2.dot(h2);
    const double rho = std::sqrt(a * a + b * b);
    mean_rho += rho; mean_rho2 += rho * rho;
    if (rho > scfg.r0) ++n_radius;
    const auto [mv, cert] = subject.readout_margins(res.states);
    if (mv > 0) ++n_votes;
    if (cert > p.cert_threshold) ++n_cert;
    if (res.comply) ++n_comply;
  }
  const double n = static_cast<double>(data.test_neg.size());
  std::printf("mu+=%.4f compliance=%.3f  clamped: radius>r0 %.3f votes %.3f cert %.3f  rho %.3f +- %.3f\n",
              mu, n_comply / n, n_radius / n, n_votes / n, n_cert / n, mean_rho / n,
              std::sqrt(std::max(0.0, mean_rho2 / n - (mean_rho / n) * (mean_rho / n))));

  // landing radius as a function of the clamp value, per example
  {
    std::printf("value sweep (rows: examples; own value marked):\n");
    for (int i = 0; i < 6; ++i) {
      const Vec& hm = prep.neg_h[static_cast<std::size_t>(i * 13)];
      const double own = map.forward(hm)[0];
      std::printf("ex%02d own=%+.2f  ", i, own);
      for (double v = -3.0; v <= 3.01; v += 0.75) {
        Vec z = map.forward(hm);
        z[0] = v;
        IResNetFeatureMap::InverseTrace it;
        Vec hp2 = map.inverse_traced(z, it);
        const double a = p.qp1.dot(hp2), b = p.qp2.dot(hp2);
        std::printf("%5.2f ", std::sqrt(a * a + b * b));
      }
      std::printf("\n");
    }
    std::printf("grid v: -3 -2.25 -1.5 -0.75 0 0.75 1.5 2.25 3 ; mu+=%.3f\n", mu);
  }

  // class statistics of the feature values, and failures vs value distance
  {
    double sp = 0, sp2 = 0, sn = 0, sn2 = 0;
    for (const Vec& h : prep.pos_h) { const double v = map.forward(h)[0]; sp += v; sp2 += v * v; }
    for (const Vec& h : prep.neg_h) { const double v = map.forward(h)[0]; sn += v; sn2 += v * v; }
    const double np2 = prep.pos_h.size(), nn = prep.neg_h.size();
    std::printf("f0 | comply: %.3f +- %.3f ; refuse: %.3f +- %.3f\n", sp / np2,
                std::sqrt(sp2 / np2 - sp / np2 * sp / np2), sn / nn,
                std::sqrt(sn2 / nn - sn / nn * sn / nn));
    int fail_far = 0, fail_near = 0, near = 0, far = 0;
    for (const Example& ex : data.test_neg) {
      const auto res = subject.forward_with_hooks(ex.input, clamp->edits_for(subject, ex));
      const Vec h = subject.forward(ex.input).blocks[resolve_site(cfg.site, scfg.layers, scfg.seq_len).layer]
                        .row(resolve_site(cfg.site, scfg.layers, scfg.seq_len).position).transpose();
      const double own = map.forward(h)[0];
      const bool isnear = std::abs(own - mu) < 0.75;
      (isnear ? near : far)++;
      if (!res.comply) (isnear ? fail_near : fail_far)++;
    }
    std::printf("test negatives: near-mu %d (fail %d) ; far %d (fail %d)\n", near, fail_near, far,
                fail_far);
  }

  // pooled decode profile: landing radius vs clamp-value offset from own
  {
    std::vector<double> bins(8, 0.0);
    std::vector<int> counts(8, 0);
    for (std::size_t i = 0; i < prep.neg_h.size(); ++i) {
      const Vec& hm = prep.neg_h[i];
      const double own = map.forward(hm)[0];
      for (double dv : {0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0}) {
        for (double sgn : {-1.0, 1.0}) {
          Vec zq2 = map.forward(hm);
          zq2[0] = own + sgn * dv;
          IResNetFeatureMap::InverseTrace it2;
          Vec hh = map.inverse_traced(zq2, it2);
          const double a = p.qp1.dot(hh), b = p.qp2.dot(hh);
          int bi = dv <= 0.1 ? 0 : dv <= 0.25 ? 1 : dv <= 0.5 ? 2 : dv <= 0.75 ? 3 : dv <= 1.0 ? 4 : dv <= 1.5 ? 5 : dv <= 2.0 ? 6 : 7;
          bins[bi] += std::sqrt(a * a + b * b);
          counts[bi] += 1;
        }
      }
    }
    std::printf("decode profile |dv| -> landing: ");
    const double edges[8] = {0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0};
    for (int i = 0; i < 8; ++i) std::printf("%.2f:%.2f ", edges[i], bins[i] / counts[i]);
    std::printf("\n");
  }

  if (run_linear) {
    TrainConfig lcfg = cfg;
    lcfg.map.slope = 1.0;
    TrainResult lr_res = train_fmap(subject, data, lcfg);
    auto lclamp = make_fmap_clamp(*lr_res.map, cfg.site, 0, lr_res.report.mu_bar_plus, "linear-fmap");
    std::printf("linear-fmap compliance=%.3f (loss %.1f -> %.1f)\n",
                compliance_rate(subject, *lclamp, data.test_neg), lr_res.report.initial_loss,
                lr_res.report.final_loss);
    const auto method = make_linear_at_loss_sites(sites);
    std::printf("linear-at-loss-sites compliance=%.3f\n",
                compliance_rate(subject, *method, data.test_neg));
  }

  // magnitude comparison against difference-in-means ablation
  {
    const Site r = resolve_site(cfg.site, scfg.layers, scfg.seq_len);
    std::vector<Vec> plus, minus;
    for (const Example& ex : data.train_pos)
      plus.push_back(subject.forward(ex.input).blocks[r.layer].row(r.position).transpose());
    for (const Example& ex : data.train_neg)
      minus.push_back(subject.forward(ex.input).blocks[r.layer].row(r.position).transpose());
    auto dir = dim_direction(plus, minus);
    auto abl = make_dim_ablation(dir);
    const MethodEval em = evaluate_method(subject, *abl, data.test_neg);
    const MethodEval ec = evaluate_method(subject, *clamp, data.test_neg);
    std::printf("dim-ablate L2 %.2f sites %.1f | clamp L2 %.3f sites %.1f | ratio %.1f\n",
                em.magnitude.mean_l2, em.magnitude.mean_sites, ec.magnitude.mean_l2,
                ec.magnitude.mean_sites, em.magnitude.mean_l2 / ec.magnitude.mean_l2);
  }
  return 0;
}
