#include "nlsteer/subject.hpp"

#include <cmath>
#include <set>

namespace nlsteer {

void SubjectConfig::validate() const {
  if (layers < 4) throw ConfigError("subject.layers", "must be >= 4");
  if (width < 10) throw ConfigError("subject.width", "must be >= 10 (nine reserved coordinates plus nuisance)");
  if (seq_len < 2) throw ConfigError("subject.seq_len", "must be >= 2");
  if (input_dim < 3) throw ConfigError("subject.input_dim", "must be >= 3");
  if (!(r0 > 0.0)) throw ConfigError("subject.r0", "must be > 0");
  if (!(radius_min > 0.0)) throw ConfigError("subject.radius_min", "must be > 0");
  if (!(radius_min < r0 - label_margin)) throw ConfigError("subject.radius_min", "must lie below r0 - label_margin");
  if (!(radius_max > r0 + label_margin)) throw ConfigError("subject.radius_max", "must lie above r0 + label_margin");
  if (!(band_max > radius_max)) throw ConfigError("subject.band_max", "must lie above radius_max");
  if (!(comply_radius_lo > r0 + label_margin && comply_radius_hi > comply_radius_lo &&
        comply_radius_hi <= radius_max))
    throw ConfigError("subject.comply_radius_lo", "comply radius range must lie in (r0 + margin, radius_max]");
  if (!(label_margin > 0.0)) throw ConfigError("subject.label_margin", "must be > 0");
  if (planted_layer < 1 || planted_layer > layers - 2)
    throw ConfigError("subject.planted_layer", "must lie in [1, layers-2]");
  int enc, car;
  try {
    enc = resolve_position(encode_position, seq_len);
  } catch (const std::exception&) {
    throw ConfigError("subject.encode_position", "does not resolve within seq_len");
  }
  try {
    car = resolve_position(carrier_position, seq_len);
  } catch (const std::exception&) {
    throw ConfigError("subject.carrier_position", "does not resolve within seq_len");
  }
  if (car >= enc) throw ConfigError("subject.carrier_position", "must precede encode_position");
  if (!(mix_gain > 0.0)) throw ConfigError("subject.mix_gain", "must be > 0");
  if (!(anchor_weight > 0.0 && anchor_weight < 1.0))
    throw ConfigError("subject.anchor_weight", "must lie in (0, 1)");
  if (!(embed_scale > 0.0)) throw ConfigError("subject.embed_scale", "must be > 0");
  if (!(mlp_gain >= 0.0)) throw ConfigError("subject.mlp_gain", "must be >= 0");
  if (!(mlp_gain_late >= 0.0)) throw ConfigError("subject.mlp_gain_late", "must be >= 0");
  if (mlp_hidden < 1) throw ConfigError("subject.mlp_hidden", "must be >= 1");
  if (!(vote_gain > 0.0)) throw ConfigError("subject.vote_gain", "must be > 0");
  if (!(vote_sharpness > 0.0)) throw ConfigError("subject.vote_sharpness", "must be > 0");
  if (!(foothold_noise > 0.0)) throw ConfigError("subject.foothold_noise", "must be > 0");
  if (!(foothold_gain > 0.0)) throw ConfigError("subject.foothold_gain", "must be > 0");
  if (!(radius_eps > 0.0)) throw ConfigError("subject.radius_eps", "must be > 0");
}

double Subject::smooth_radius(double a, double b) const {
  const double e = cfg_.radius_eps;
  return std::sqrt(a * a + b * b + e * e) - e;
}

double Subject::vote_value(double rho, double scale) const {
  const double rho0 = smooth_radius(scale * cfg_.r0, 0.0);
  return cfg_.vote_gain * std::tanh(cfg_.vote_sharpness * (rho - rho0));
}

// run_block and backward_from_taps must agree on this expression exactly.
static double smooth_norm(double a, double b, double eps) {
  return std::sqrt(a * a + b * b + eps * eps) - eps;
}

Subject::Subject(const SubjectConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const int d = cfg_.width, T = cfg_.seq_len, H = cfg_.mlp_hidden;
  enc_pos_ = resolve_position(cfg_.encode_position, T);

  Rng rng = make_rng(seed, 0x5b1ec7);
  // The correlate channel sits on the first stream axis (features often have
  // partially axis-aligned shadows); everything else is random within its
  // orthogonal complement, so the planted plane stays unaligned.
  p_.qf = Vec::Zero(d);
  p_.qf[0] = 1.0;
  const Mat Qc = random_orthogonal(d - 1, rng);
  auto lift = [&](int col) {
    Vec v = Vec::Zero(d);
    for (int i = 0; i < d - 1; ++i) v[i + 1] = Qc(i, col);
    return v;
  };
  p_.qc1 = lift(0);
  p_.qc2 = lift(1);
  p_.qc3 = lift(2);
  p_.qp1 = lift(3);
  p_.qp2 = lift(4);
  p_.qv = lift(5);
  p_.qg1 = lift(6);
  p_.qg2 = lift(7);

  p_.embed = cfg_.embed_scale * gaussian_mat(d, cfg_.input_dim, rng) /
             std::sqrt(static_cast<double>(cfg_.input_dim));

  std::uniform_real_distribution<double> uw(0.2, 1.0);
  const int vote_block = cfg_.planted_layer + 1;
  p_.blocks.resize(cfg_.layers);
  for (int l = 0; l < cfg_.layers; ++l) {
    Block& blk = p_.blocks[static_cast<std::size_t>(l)];
    blk.mix = Mat::Zero(T, T);
    for (int t = 0; t < T; ++t) {
      if (l == vote_block && t >= enc_pos_) {
        // Pin a fixed share of the row on the encode position so the code
        // reaches every later position with a known scale.
        double rest = 0.0;
        std::vector<double> w(static_cast<std::size_t>(t) + 1, 0.0);
        for (int s = 0; s <= t; ++s) {
          if (s == enc_pos_) continue;
          w[static_cast<std::size_t>(s)] = uw(rng);
          rest += w[static_cast<std::size_t>(s)];
        }
        blk.mix(t, enc_pos_) = cfg_.anchor_weight;
        if (rest > 0.0)
          for (int s = 0; s <= t; ++s)
            if (s != enc_pos_)
              blk.mix(t, s) = (1.0 - cfg_.anchor_weight) * w[static_cast<std::size_t>(s)] / rest;
      } else {
        double total = 0.0;
        std::vector<double> w(static_cast<std::size_t>(t) + 1);
        for (int s = 0; s <= t; ++s) {
          w[static_cast<std::size_t>(s)] = uw(rng);
          total += w[static_cast<std::size_t>(s)];
        }
        for (int s = 0; s <= t; ++s) blk.mix(t, s) = w[static_cast<std::size_t>(s)] / total;
      }
    }
    blk.mlp_in = gaussian_mat(H, d, rng) / std::sqrt(static_cast<double>(d));
    blk.mlp_bias = 0.2 * gaussian_vec(H, rng);
    blk.mlp_out = gaussian_mat(d, H, rng) / std::sqrt(static_cast<double>(H));
  }

  // Certificate angle probe lives in the nuisance span.
  Vec raw = Vec::Zero(d);
  for (int j = 8; j < d - 1; ++j) raw += gaussian_vec(1, rng)[0] * lift(j);
  p_.wpsi = raw.normalized();

  p_.spread = Vec::Zero(T);
  const Mat& vmix = p_.blocks[static_cast<std::size_t>(vote_block)].mix;
  for (int t = 0; t < T; ++t) {
    if (t < enc_pos_) continue;
    p_.spread[t] = cfg_.mix_gain * vmix(t, enc_pos_) + (t == enc_pos_ ? 1.0 : 0.0);
  }
  p_.cert_threshold = smooth_radius(p_.spread[T - 1] * cfg_.r0, 0.0);
  p_.cert_upper = smooth_radius(p_.spread[T - 1] * cfg_.band_max, 0.0);
  finish_init();
}

Subject::Subject(const SubjectConfig& cfg, std::uint64_t seed, Params params)
    : cfg_(cfg), seed_(seed), p_(std::move(params)) {
  cfg_.validate();
  enc_pos_ = resolve_position(cfg_.encode_position, cfg_.seq_len);
  finish_init();
}

void Subject::finish_init() {
  const int d = cfg_.width;
  auto outer = [](const Vec& q) { return q * q.transpose(); };
  const Mat reserved = outer(p_.qc1) + outer(p_.qc2) + outer(p_.qc3) + outer(p_.qp1) + outer(p_.qp2) +
                       outer(p_.qf) + outer(p_.qv) + outer(p_.qg1) + outer(p_.qg2);
  proj_early_ = Mat::Identity(d, d) - reserved;
  proj_late_ = Mat::Identity(d, d) - outer(p_.qv) - outer(p_.qg1) - outer(p_.qg2);
  clean_ = Mat::Identity(d, d) - outer(p_.qp1) - outer(p_.qp2) - outer(p_.qf) - outer(p_.qv) -
           outer(p_.qg1) - outer(p_.qg2);
}

namespace {
struct BlockScratch {
  Mat post_mix;
  Mat mlp_preact;
  Vec head_rho;
  double head_psi = 0.0;
};
}  // namespace

// One block applied in place. `scratch`, when given, captures what the VJP
// needs.
static void run_block(const Subject::Params& p, const SubjectConfig& cfg, int l, int enc_pos,
                      const Mat& proj_early, const Mat& proj_late, const Mat& clean, Mat& H,
                      BlockScratch* scratch) {
  const int T = cfg.seq_len;
  const bool early = l <= cfg.planted_layer;
  const Mat& P = early ? proj_early : proj_late;
  const double mlp_gain = early ? cfg.mlp_gain : cfg.mlp_gain_late;
  const Subject::Block& blk = p.blocks[static_cast<std::size_t>(l)];

  if (early) H = H * clean;  // clean is symmetric; rows are states

  const Mat mixed = blk.mix * H;
  H += cfg.mix_gain * (mixed * P);
  if (scratch) scratch->post_mix = H;

  if (l == cfg.planted_layer) {
    const int car = resolve_position(cfg.carrier_position, T);
    const double c1 = H.row(car).dot(p.qc1);
    const double c2 = H.row(car).dot(p.qc2);
    const double y = cfg.foothold_gain * H.row(car).dot(p.qc3);
    H.row(enc_pos) += c1 * p.qp1.transpose() + c2 * p.qp2.transpose() + y * p.qf.transpose();
  }

  if (l == cfg.planted_layer + 1) {
    Vec rho(T);
    for (int t = 0; t < T; ++t) {
      const double a = H.row(t).dot(p.qp1);
      const double b = H.row(t).dot(p.qp2);
      rho[t] = smooth_norm(a, b, cfg.radius_eps);
      const double rho0 = smooth_norm(p.spread[t] * cfg.r0, 0.0, cfg.radius_eps);
      const double rho1 = smooth_norm(p.spread[t] * cfg.band_max, 0.0, cfg.radius_eps);
      // positive exactly inside the band (rho0, rho1)
      const double vote = cfg.vote_gain * (std::tanh(cfg.vote_sharpness * (rho[t] - rho0)) +
                                           std::tanh(cfg.vote_sharpness * (rho1 - rho[t])) - 1.0);
      H.row(t) += vote * p.qv.transpose();
    }
    const double psi = cfg.cert_angle_gain * H.row(T - 1).dot(p.wpsi);
    H.row(T - 1) += rho[T - 1] * (std::cos(psi) * p.qg1.transpose() + std::sin(psi) * p.qg2.transpose());
    if (scratch) {
      scratch->head_rho = rho;
      scratch->head_psi = psi;
    }
  }

  if (scratch) scratch->mlp_preact = Mat(T, cfg.mlp_hidden);
  for (int t = 0; t < T; ++t) {
    Vec pre = blk.mlp_in * H.row(t).transpose() + blk.mlp_bias;
    if (scratch) scratch->mlp_preact.row(t) = pre.transpose();
    Vec hidden = pre.array().tanh().matrix();
    H.row(t) += mlp_gain * (P * (blk.mlp_out * hidden)).transpose();
  }
}

SubjectStates Subject::forward(const Mat& input) const {
  return forward_with_hooks(input, {}).states;
}

Subject::HookResult Subject::forward_with_hooks(const Mat& input,
                                                const std::vector<std::pair<Site, EditFn>>& edits) const {
  const int T = cfg_.seq_len, d = cfg_.width;
  if (input.rows() != T || input.cols() != cfg_.input_dim)
    throw std::invalid_argument("Subject: input must be seq_len x input_dim");
  if (!input.allFinite()) throw std::invalid_argument("Subject: non-finite input");

  // Resolve and bucket the edits per layer; at most one per site.
  std::vector<std::vector<std::pair<int, const EditFn*>>> per_layer(static_cast<std::size_t>(cfg_.layers));
  std::set<std::pair<int, int>> seen;
  for (const auto& [site, fn] : edits) {
    const Site r = resolve_site(site, cfg_.layers, T);
    if (!seen.insert({r.layer, r.position}).second)
      throw std::invalid_argument("forward_with_hooks: more than one edit at site " + r.str());
    per_layer[static_cast<std::size_t>(r.layer)].push_back({r.position, &fn});
  }
  for (auto& v : per_layer)
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  HookResult out;
  Mat H(T, d);
  for (int t = 0; t < T; ++t) H.row(t) = (proj_early_ * (p_.embed * input.row(t).transpose())).transpose();
  const int car = resolve_position(cfg_.carrier_position, T);
  H.row(car) += input(car, 0) * p_.qc1.transpose() + input(car, 1) * p_.qc2.transpose() +
                input(car, 2) * p_.qc3.transpose();

  out.states.blocks.reserve(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    run_block(p_, cfg_, l, enc_pos_, proj_early_, proj_late_, clean_, H, nullptr);
    for (const auto& [pos, fn] : per_layer[static_cast<std::size_t>(l)]) {
      EditRecord rec;
      rec.site = Site{l, pos};
      rec.before = H.row(pos).transpose();
      rec.after = (*fn)(rec.before);
      if (rec.after.size() != d || !rec.after.allFinite())
        throw std::invalid_argument("forward_with_hooks: edit at " + rec.site.str() +
                                    " produced an invalid state");
      H.row(pos) = rec.after.transpose();
      out.edits.push_back(std::move(rec));
    }
    out.states.blocks.push_back(H);
  }
  out.comply = comply_label(out.states);
  return out;
}

std::pair<double, double> Subject::readout_margins(const SubjectStates& states) const {
  const Mat& final = states.blocks.back();
  double min_vote = std::numeric_limits<double>::infinity();
  for (int t = enc_pos_; t < cfg_.seq_len; ++t) min_vote = std::min(min_vote, final.row(t).dot(p_.qv));
  const double a = final.row(cfg_.seq_len - 1).dot(p_.qg1);
  const double b = final.row(cfg_.seq_len - 1).dot(p_.qg2);
  const double cert = std::sqrt(a * a + b * b);
  return {min_vote, cert};
}

bool Subject::comply_label(const SubjectStates& states) const {
  const auto [min_vote, cert] = readout_margins(states);
  return min_vote > 0.0 && cert > p_.cert_threshold && cert < p_.cert_upper;
}

bool Subject::comply_label(const Mat& input) const { return comply_label(forward(input)); }

SubjectStates Subject::forward_from_override(const SubjectStates& plain, const Site& site,
                                             const Vec& value, ResumeTrace* trace) const {
  const Site r = resolve_site(site, cfg_.layers, cfg_.seq_len);
  if (value.size() != cfg_.width) throw std::invalid_argument("forward_from_override: bad state size");
  SubjectStates out;
  out.blocks = plain.blocks;
  out.blocks[static_cast<std::size_t>(r.layer)].row(r.position) = value.transpose();
  if (trace) {
    trace->edit_layer = r.layer;
    trace->edit_pos = r.position;
    trace->post_mix.clear();
    trace->mlp_preact.clear();
    trace->head_rho.clear();
    trace->head_psi.clear();
  }
  Mat H = out.blocks[static_cast<std::size_t>(r.layer)];
  for (int l = r.layer + 1; l < cfg_.layers; ++l) {
    BlockScratch scratch;
    run_block(p_, cfg_, l, enc_pos_, proj_early_, proj_late_, clean_, H, trace ? &scratch : nullptr);
    if (trace) {
      trace->post_mix.push_back(std::move(scratch.post_mix));
      trace->mlp_preact.push_back(std::move(scratch.mlp_preact));
      trace->head_rho.push_back(std::move(scratch.head_rho));
      trace->head_psi.push_back(scratch.head_psi);
    }
    out.blocks[static_cast<std::size_t>(l)] = H;
  }
  return out;
}

Vec Subject::backward_from_taps(const ResumeTrace& trace,
                                const std::vector<std::pair<Site, Vec>>& taps) const {
  const int T = cfg_.seq_len, d = cfg_.width;
  Mat G = Mat::Zero(T, d);
  Vec own_tap = Vec::Zero(d);
  std::vector<std::vector<std::pair<int, const Vec*>>> per_layer(static_cast<std::size_t>(cfg_.layers));
  for (const auto& [site, cot] : taps) {
    if (site.layer < trace.edit_layer)
      throw std::invalid_argument("backward_from_taps: tap above the edit layer");
    if (site.layer == trace.edit_layer) {
      // Only the edited position depends on the edit at its own layer.
      if (site.position == trace.edit_pos) own_tap += cot;
      continue;
    }
    per_layer[static_cast<std::size_t>(site.layer)].push_back({site.position, &cot});
  }

  for (int l = cfg_.layers - 1; l > trace.edit_layer; --l) {
    for (const auto& [pos, cot] : per_layer[static_cast<std::size_t>(l)])
      G.row(pos) += cot->transpose();

    const auto k = static_cast<std::size_t>(l - trace.edit_layer - 1);
    const bool early = l <= cfg_.planted_layer;
    const Mat& P = early ? proj_early_ : proj_late_;
    const Subject::Block& blk = p_.blocks[static_cast<std::size_t>(l)];

    // MLP write: out_t = s_t + gain * P * mlp_out * tanh(mlp_in s_t + bias)
    const double mlp_gain = early ? cfg_.mlp_gain : cfg_.mlp_gain_late;
    for (int t = 0; t < T; ++t) {
      Vec pre = trace.mlp_preact[k].row(t).transpose();
      Vec up = blk.mlp_out.transpose() * (P * G.row(t).transpose()) * mlp_gain;
      for (int i = 0; i < up.size(); ++i) {
        const double th = std::tanh(pre[i]);
        up[i] *= 1.0 - th * th;
      }
      G.row(t) += (blk.mlp_in.transpose() * up).transpose();
    }

    if (l == cfg_.planted_layer + 1) {
      const Vec& rho = trace.head_rho[k];
      const double psi = trace.head_psi[k];
      // Certificate write at the last position, applied after the votes.
      {
        const int t = T - 1;
        Vec row_pm = trace.post_mix[k].row(t).transpose();
        const double a = row_pm.dot(p_.qp1);
        const double b = row_pm.dot(p_.qp2);
        const Vec pvec = (a * p_.qp1 + b * p_.qp2) / (rho[t] + cfg_.radius_eps);
        const double a1 = G.row(t).dot(p_.qg1);
        const double a2 = G.row(t).dot(p_.qg2);
        G.row(t) += (pvec * (std::cos(psi) * a1 + std::sin(psi) * a2)).transpose();
        G.row(t) += (p_.wpsi * cfg_.cert_angle_gain * rho[t] * (-std::sin(psi) * a1 + std::cos(psi) * a2))
                        .transpose();
      }
      for (int t = 0; t < T; ++t) {
        Vec row_pm = trace.post_mix[k].row(t).transpose();
        const double a = row_pm.dot(p_.qp1);
        const double b = row_pm.dot(p_.qp2);
        const Vec pvec = (a * p_.qp1 + b * p_.qp2) / (rho[t] + cfg_.radius_eps);
        const double rho0 = smooth_radius(p_.spread[t] * cfg_.r0, 0.0);
        const double rho1 = smooth_radius(p_.spread[t] * cfg_.band_max, 0.0);
        const double ta = std::tanh(cfg_.vote_sharpness * (rho[t] - rho0));
        const double tb = std::tanh(cfg_.vote_sharpness * (rho1 - rho[t]));
        const double dvote =
            cfg_.vote_gain * cfg_.vote_sharpness * ((1.0 - ta * ta) - (1.0 - tb * tb));
        G.row(t) += (pvec * dvote * G.row(t).dot(p_.qv)).transpose();
      }
    }

    if (l == cfg_.planted_layer) {
      const int car = resolve_position(cfg_.carrier_position, T);
      const double g1 = G.row(enc_pos_).dot(p_.qp1);
      const double g2 = G.row(enc_pos_).dot(p_.qp2);
      const double gy = cfg_.foothold_gain * G.row(enc_pos_).dot(p_.qf);
      G.row(car) += (g1 * p_.qc1 + g2 * p_.qc2 + gy * p_.qc3).transpose();
    }

    const Mat gmix = blk.mix.transpose() * (G * P);
    G += cfg_.mix_gain * gmix;
    if (early) G = G * clean_;
  }
  return G.row(trace.edit_pos).transpose() + own_tap;
}

std::vector<Site> Subject::all_sites() const {
  std::vector<Site> out;
  out.reserve(static_cast<std::size_t>(cfg_.layers * cfg_.seq_len));
  for (int l = 0; l < cfg_.layers; ++l)
    for (int t = 0; t < cfg_.seq_len; ++t) out.push_back(Site{l, t});
  return out;
}

double Subject::planted_radius(const SubjectStates& states) const {
  const Mat& H = states.blocks[static_cast<std::size_t>(cfg_.planted_layer)];
  const double a = H.row(enc_pos_).dot(p_.qp1);
  const double b = H.row(enc_pos_).dot(p_.qp2);
  return std::sqrt(a * a + b * b);
}

std::uint64_t Subject::weight_checksum() const {
  std::uint64_t h = fnv1a(p_.embed);
  for (const Vec* q : {&p_.qc1, &p_.qc2, &p_.qc3, &p_.qp1, &p_.qp2, &p_.qf, &p_.qv, &p_.qg1, &p_.qg2,
                       &p_.wpsi, &p_.spread})
    h = fnv1a(*q, h);
  for (const auto& b : p_.blocks) {
    h = fnv1a(b.mix, h);
    h = fnv1a(b.mlp_in, h);
    h = fnv1a(b.mlp_bias, h);
    h = fnv1a(b.mlp_out, h);
  }
  h = fnv1a(&p_.cert_threshold, sizeof(double), h);
  h = fnv1a(&p_.cert_upper, sizeof(double), h);
  return h;
}

ContrastiveDataset generate_dataset(const Subject& subject, int n_pos, int n_neg, std::uint64_t seed,
                                    int n_test_pos, int n_test_neg) {
  if (n_pos < 1 || n_neg < 1) throw std::invalid_argument("generate_dataset: class sizes must be >= 1");
  if (n_test_pos < 0) n_test_pos = n_pos;
  if (n_test_neg < 0) n_test_neg = n_neg;
  const SubjectConfig& cfg = subject.config();
  Rng rng = make_rng(seed, 0xda7a);
  std::uniform_real_distribution<double> upos(cfg.comply_radius_lo, cfg.comply_radius_hi);
  std::uniform_real_distribution<double> uneg(cfg.radius_min, cfg.r0 - cfg.label_margin);
  std::uniform_real_distribution<double> uangle(0.0, 2.0 * M_PI);
  std::normal_distribution<double> nfoot(0.0, 1.0);
  std::bernoulli_distribution upick(0.5);
  const int car = resolve_position(cfg.carrier_position, cfg.seq_len);

  ContrastiveDataset out;
  auto fill = [&](std::vector<Example>& pos_bucket, std::vector<Example>& neg_bucket, int want_pos,
                  int want_neg) {
    const long max_attempts = 400L * (want_pos + want_neg) + 1000;
    long attempts = 0;
    while (static_cast<int>(pos_bucket.size()) < want_pos ||
           static_cast<int>(neg_bucket.size()) < want_neg) {
      if (++attempts > max_attempts)
        throw std::runtime_error("generate_dataset: sampling failed to fill the requested classes");
      Example ex;
      ex.input = gaussian_mat(cfg.seq_len, cfg.input_dim, rng);
      const double r = upick(rng) ? upos(rng) : uneg(rng);
      if (std::abs(r - cfg.r0) <= cfg.label_margin) continue;
      const double phi = uangle(rng);
      ex.input(car, 0) = r * std::cos(phi);
      ex.input(car, 1) = r * std::sin(phi);
      ex.input(car, 2) = r + cfg.foothold_noise * nfoot(rng);
      ex.radius = r;
      ex.comply = subject.comply_label(ex.input);
      if (ex.comply != (r > cfg.r0))
        throw std::runtime_error("generate_dataset: planted invariant violated (radius " +
                                 std::to_string(r) + ")");
      if (ex.comply && static_cast<int>(pos_bucket.size()) < want_pos)
        pos_bucket.push_back(std::move(ex));
      else if (!ex.comply && static_cast<int>(neg_bucket.size()) < want_neg)
        neg_bucket.push_back(std::move(ex));
    }
  };
  fill(out.train_pos, out.train_neg, n_pos, n_neg);
  fill(out.test_pos, out.test_neg, n_test_pos, n_test_neg);
  return out;
}

}  // namespace nlsteer
