#include "nlsteer/featmap.hpp"

#include <algorithm>
#include <cmath>

namespace nlsteer {

namespace {

double lrelu(double x, double slope) { return x >= 0.0 ? x : slope * x; }
double lrelu_grad(double x, double slope) { return x >= 0.0 ? 1.0 : slope; }

Vec lrelu_vec(const Vec& x, double slope) {
  Vec y(x.size());
  for (int i = 0; i < x.size(); ++i) y[i] = lrelu(x[i], slope);
  return y;
}

}  // namespace

PowerIterState make_power_state(int rows, int cols, Rng& rng) {
  PowerIterState s;
  s.u = gaussian_vec(rows, rng).normalized();
  s.v = gaussian_vec(cols, rng).normalized();
  return s;
}

SpectralResult spectral_normalize(const Mat& weights, PowerIterState& state) {
  SpectralResult out;
  if (state.u.size() != weights.rows() || state.v.size() != weights.cols())
    throw std::invalid_argument("spectral_normalize: state dimensions do not match the matrix");
  if (state.u.norm() == 0.0) throw std::invalid_argument("spectral_normalize: zero state vector");
  const double wnorm = weights.norm();
  if (wnorm == 0.0) {
    out.normalized = weights;
    out.sigma = 0.0;
    out.scale = 1.0;
    return out;
  }
  // One iteration: v <- W^T u, u <- W v. A degenerate intermediate (u in the
  // left null space) is re-randomized deterministically from a counter.
  const double tiny = 1e-300;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Vec vt = weights.transpose() * state.u;
    if (vt.norm() <= tiny * wnorm) {
      Rng reseed = make_rng(0x5eedu, ++state.reseed_key);
      state.u = gaussian_vec(static_cast<int>(weights.rows()), reseed).normalized();
      continue;
    }
    Vec v = vt.normalized();
    Vec ut = weights * v;
    if (ut.norm() <= tiny * wnorm) {
      Rng reseed = make_rng(0x5eedu, ++state.reseed_key);
      state.u = gaussian_vec(static_cast<int>(weights.rows()), reseed).normalized();
      continue;
    }
    state.u = ut.normalized();
    state.v = v;
    out.sigma = state.u.dot(weights * state.v);
    out.scale = out.sigma > 1.0 ? 1.0 / out.sigma : 1.0;
    out.normalized = weights * out.scale;
    return out;
  }
  throw std::runtime_error("spectral_normalize: could not find a non-degenerate state");
}

// ---------------------------------------------------------------------------
// LinearFeatureMap

LinearFeatureMap::LinearFeatureMap(Mat W) : W_(std::move(W)) {
  if (W_.rows() != W_.cols()) throw std::invalid_argument("LinearFeatureMap: W must be square");
  const Mat gram = W_.transpose() * W_;
  const double dev = (gram - Mat::Identity(W_.rows(), W_.cols())).norm();
  if (dev > 1e-8)
    throw std::invalid_argument("LinearFeatureMap: W is not orthogonal (||W^T W - I|| = " +
                                std::to_string(dev) + ")");
}

LinearFeatureMap LinearFeatureMap::random(int d, Rng& rng) {
  return LinearFeatureMap(random_orthogonal(d, rng));
}

Vec LinearFeatureMap::forward(const Vec& h) const {
  if (h.size() != W_.rows()) throw std::invalid_argument("LinearFeatureMap::forward: dimension mismatch");
  return W_ * h;
}

std::pair<Vec, InversionReport> LinearFeatureMap::inverse(const Vec& z) const {
  if (z.size() != W_.rows()) throw std::invalid_argument("LinearFeatureMap::inverse: dimension mismatch");
  return {W_.transpose() * z, InversionReport{0, 0.0, true}};
}

Vec LinearFeatureMap::direction(int i) const {
  if (i < 0 || i >= dim()) throw std::invalid_argument("LinearFeatureMap::direction: index out of range");
  return W_.row(i).transpose();
}

Vec FeatureMap::inverse_or_throw(const Vec& z) const {
  auto [x, report] = inverse(z);
  if (!report.converged) throw InversionError(report);
  return x;
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock ResidualBlock::init(int dim, int width, double kappa, double slope, Rng& rng,
                                  int warmup_iters) {
  ResidualBlock b;
  b.kappa = kappa;
  b.slope = slope;
  const double a1 = 1.0 / std::sqrt(static_cast<double>(dim));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(width));
  std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
  b.W1 = Mat(width, dim);
  for (int i = 0; i < width; ++i)
    for (int j = 0; j < dim; ++j) b.W1(i, j) = u1(rng);
  b.b1 = Vec::Zero(width);
  b.W2 = Mat(dim, width);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < width; ++j) b.W2(i, j) = u2(rng);
  b.b2 = Vec::Zero(dim);
  b.s1 = make_power_state(width, dim, rng);
  b.s2 = make_power_state(dim, width, rng);
  b.refresh_spectral(warmup_iters);
  return b;
}

void ResidualBlock::refresh_spectral(int iterations) {
  for (int k = 0; k < iterations; ++k) {
    SpectralResult r1 = spectral_normalize(W1, s1);
    SpectralResult r2 = spectral_normalize(W2, s2);
    sigma1 = r1.sigma;
    scale1 = r1.scale;
    sigma2 = r2.sigma;
    scale2 = r2.scale;
  }
}

Vec ResidualBlock::g(const Vec& z) const {
  Vec pre;
  return g_traced(z, pre);
}

Vec ResidualBlock::g_traced(const Vec& z, Vec& preact) const {
  if (z.size() != dim()) throw std::invalid_argument("ResidualBlock: dimension mismatch");
  preact = scale1 * (W1 * z) + b1;
  const Vec hidden = lrelu_vec(preact, slope);
  return kappa * (scale2 * (W2 * hidden) + b2);
}

Vec ResidualBlock::g_vjp_input(const Vec& preact, const Vec& cot) const {
  Vec t = (kappa * scale2) * (W2.transpose() * cot);
  for (int i = 0; i < t.size(); ++i) t[i] *= lrelu_grad(preact[i], slope);
  return scale1 * (W1.transpose() * t);
}

void ResidualBlock::g_vjp_params(const Vec& z, const Vec& preact, const Vec& cot, double* out) const {
  const int w = width(), d = dim();
  const Vec hidden = lrelu_vec(preact, slope);
  Vec t = (kappa * scale2) * (W2.transpose() * cot);
  for (int i = 0; i < w; ++i) t[i] *= lrelu_grad(preact[i], slope);
  double* gW1 = out;
  double* gb1 = gW1 + static_cast<std::ptrdiff_t>(w) * d;
  double* gW2 = gb1 + w;
  double* gb2 = gW2 + static_cast<std::ptrdiff_t>(d) * w;
  for (int i = 0; i < w; ++i) {
    const double ti = scale1 * t[i];
    for (int j = 0; j < d; ++j) gW1[static_cast<std::ptrdiff_t>(i) * d + j] += ti * z[j];
    gb1[i] += t[i];
  }
  for (int i = 0; i < d; ++i) {
    const double ci = kappa * scale2 * cot[i];
    for (int j = 0; j < w; ++j) gW2[static_cast<std::ptrdiff_t>(i) * w + j] += ci * hidden[j];
    gb2[i] += kappa * cot[i];
  }
}

int ResidualBlock::param_count() const { return width() * dim() + width() + dim() * width() + dim(); }

void ResidualBlock::copy_params(double* out) const {
  const int w = width(), d = dim();
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < d; ++j) *out++ = W1(i, j);
  for (int i = 0; i < w; ++i) *out++ = b1[i];
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < w; ++j) *out++ = W2(i, j);
  for (int i = 0; i < d; ++i) *out++ = b2[i];
}

void ResidualBlock::set_params(const double* in) {
  const int w = width(), d = dim();
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < d; ++j) W1(i, j) = *in++;
  for (int i = 0; i < w; ++i) b1[i] = *in++;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < w; ++j) W2(i, j) = *in++;
  for (int i = 0; i < d; ++i) b2[i] = *in++;
}

double lipschitz_estimate(const ResidualBlock& block, int n_pairs, std::uint64_t seed) {
  if (n_pairs < 1) throw std::invalid_argument("lipschitz_estimate: n_pairs must be >= 1");
  Rng rng = make_rng(seed, 0x11b5);
  const int d = block.dim();
  double best = 0.0;
  for (int i = 0; i < n_pairs; ++i) {
    Vec a = gaussian_vec(d, rng);
    Vec b;
    if (i % 2 == 0) {
      b = gaussian_vec(d, rng);
    } else {
      // fixed-norm local probe, approaches the Jacobian norm without
      // amplifying rounding noise
      b = a + 1e-3 * gaussian_vec(d, rng).normalized();
    }
    const double dist = (a - b).norm();
    if (dist < 1e-9) continue;
    best = std::max(best, (block.g(a) - block.g(b)).norm() / dist);
  }
  return best;
}

// ---------------------------------------------------------------------------
// IResNetFeatureMap

void IResNetConfig::validate() const {
  if (dim < 1) throw ConfigError("map.dim", "must be >= 1");
  if (blocks < 1) throw ConfigError("map.blocks", "must be >= 1");
  if (width < 1) throw ConfigError("map.width", "must be >= 1");
  if (!(kappa > 0.0 && kappa < 1.0)) throw ConfigError("map.kappa", "must lie in (0, 1)");
  if (!(slope > 0.0 && slope <= 1.0)) throw ConfigError("map.slope", "must lie in (0, 1]");
  if (inversion.max_iters < 1) throw ConfigError("map.inversion.max_iters", "must be >= 1");
  if (!(inversion.rel_tol > 0.0)) throw ConfigError("map.inversion.rel_tol", "must be > 0");
}

IResNetFeatureMap::IResNetFeatureMap(IResNetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(seed, 0xfea7);
  blocks_.reserve(cfg_.blocks);
  for (int m = 0; m < cfg_.blocks; ++m)
    blocks_.push_back(ResidualBlock::init(cfg_.dim, cfg_.width, cfg_.kappa, cfg_.slope, rng));
}

IResNetFeatureMap::IResNetFeatureMap(IResNetConfig cfg, std::vector<ResidualBlock> blocks)
    : cfg_(cfg), blocks_(std::move(blocks)) {
  cfg_.validate();
  if (static_cast<int>(blocks_.size()) != cfg_.blocks)
    throw std::invalid_argument("IResNetFeatureMap: block count does not match config");
  for (const auto& b : blocks_)
    if (b.dim() != cfg_.dim) throw std::invalid_argument("IResNetFeatureMap: block dimension mismatch");
}

void IResNetFeatureMap::refresh_spectral(int iterations) {
  for (auto& b : blocks_) b.refresh_spectral(iterations);
}

Vec IResNetFeatureMap::forward(const Vec& h) const {
  ForwardTrace trace;
  return forward_traced(h, trace);
}

Vec IResNetFeatureMap::forward_traced(const Vec& h, ForwardTrace& trace) const {
  if (h.size() != cfg_.dim) throw std::invalid_argument("IResNetFeatureMap::forward: dimension mismatch");
  if (!h.allFinite()) throw std::invalid_argument("IResNetFeatureMap::forward: non-finite input");
  trace.inputs.clear();
  trace.preacts.clear();
  Vec z = h;
  for (const auto& b : blocks_) {
    trace.inputs.push_back(z);
    Vec pre;
    z += b.g_traced(z, pre);
    trace.preacts.push_back(std::move(pre));
  }
  return z;
}

std::pair<Vec, InversionReport> IResNetFeatureMap::inverse(const Vec& z) const {
  InverseTrace trace;
  Vec x = inverse_traced(z, trace);
  if (!trace.report.converged) throw InversionError(trace.report);
  return {x, trace.report};
}

Vec IResNetFeatureMap::inverse_traced(const Vec& z, InverseTrace& trace,
                                      const InversionConfig* override_cfg) const {
  if (z.size() != cfg_.dim) throw std::invalid_argument("IResNetFeatureMap::inverse: dimension mismatch");
  if (!z.allFinite()) throw std::invalid_argument("IResNetFeatureMap::inverse: non-finite input");
  const InversionConfig& ic = override_cfg ? *override_cfg : cfg_.inversion;
  trace.solutions.clear();
  trace.preacts.clear();
  trace.report = InversionReport{0, 0.0, true};
  Vec y = z;
  for (int m = cfg_.blocks - 1; m >= 0; --m) {
    const ResidualBlock& b = blocks_[static_cast<std::size_t>(m)];
    const double denom = std::max(y.norm(), 1.0);
    Vec x = y;
    Vec pre;
    Vec gx = b.g_traced(x, pre);
    double res = (x + gx - y).norm() / denom;
    bool ok = res <= ic.rel_tol;
    int iters = 0;
    while (!ok && iters < ic.max_iters) {
      x = y - gx;
      gx = b.g_traced(x, pre);
      res = (x + gx - y).norm() / denom;
      ++iters;
      ok = res <= ic.rel_tol;
    }
    trace.report.iterations += iters;
    trace.report.residual = std::max(trace.report.residual, res);
    trace.report.converged = trace.report.converged && ok;
    trace.solutions.push_back(x);
    trace.preacts.push_back(std::move(pre));
    y = x;
  }
  return y;
}

Vec IResNetFeatureMap::backward_forward(const ForwardTrace& trace, const Vec& dLdz, Vec& grad) const {
  if (static_cast<int>(trace.inputs.size()) != cfg_.blocks)
    throw std::invalid_argument("backward_forward: trace does not match the map");
  if (grad.size() != param_count()) throw std::invalid_argument("backward_forward: bad gradient size");
  Vec cot = dLdz;
  double* gptr = grad.data();
  std::vector<double*> offsets(blocks_.size());
  for (std::size_t m = 0; m < blocks_.size(); ++m) {
    offsets[m] = gptr;
    gptr += blocks_[m].param_count();
  }
  for (int m = cfg_.blocks - 1; m >= 0; --m) {
    const auto& b = blocks_[static_cast<std::size_t>(m)];
    const auto mi = static_cast<std::size_t>(m);
    b.g_vjp_params(trace.inputs[mi], trace.preacts[mi], cot, offsets[mi]);
    cot += b.g_vjp_input(trace.preacts[mi], cot);
  }
  return cot;
}

Vec IResNetFeatureMap::backward_inverse(const InverseTrace& trace, const Vec& dLdx, Vec& grad,
                                        const InversionConfig* override_cfg) const {
  if (!trace.report.converged) throw InversionError(trace.report);
  if (static_cast<int>(trace.solutions.size()) != cfg_.blocks)
    throw std::invalid_argument("backward_inverse: trace does not match the map");
  if (grad.size() != param_count()) throw std::invalid_argument("backward_inverse: bad gradient size");
  const InversionConfig& ic = override_cfg ? *override_cfg : cfg_.inversion;
  const int neumann_cap = std::max(200, ic.max_iters * 10);

  std::vector<double*> offsets(blocks_.size());
  {
    double* gptr = grad.data();
    for (std::size_t m = 0; m < blocks_.size(); ++m) {
      offsets[m] = gptr;
      gptr += blocks_[m].param_count();
    }
  }

  // The inverse applied blocks M-1..0; trace index j holds block M-1-j.
  // Reverse-mode therefore walks blocks 0..M-1.
  Vec cot = dLdx;
  for (int m = 0; m < cfg_.blocks; ++m) {
    const auto& b = blocks_[static_cast<std::size_t>(m)];
    const auto j = static_cast<std::size_t>(cfg_.blocks - 1 - m);
    const Vec& x = trace.solutions[j];
    const Vec& pre = trace.preacts[j];
    // Solve q = (I + J_g^T)^{-1} cot by the Neumann series q <- cot - J_g^T q,
    // contractive because ||J_g|| <= kappa < 1.
    Vec q = cot;
    const double qtol = ic.rel_tol * std::max(cot.norm(), 1.0);
    for (int k = 0; k < neumann_cap; ++k) {
      Vec qn = cot - b.g_vjp_input(pre, q);
      const double delta = (qn - q).norm();
      q = std::move(qn);
      if (delta <= qtol) break;
    }
    b.g_vjp_params(x, pre, -q, offsets[static_cast<std::size_t>(m)]);
    cot = q;
  }
  return cot;
}

int IResNetFeatureMap::param_count() const {
  int n = 0;
  for (const auto& b : blocks_) n += b.param_count();
  return n;
}

Vec IResNetFeatureMap::flat_params() const {
  Vec p(param_count());
  double* out = p.data();
  for (const auto& b : blocks_) {
    b.copy_params(out);
    out += b.param_count();
  }
  return p;
}

void IResNetFeatureMap::set_flat_params(const Vec& p) {
  if (p.size() != param_count()) throw std::invalid_argument("set_flat_params: bad size");
  const double* in = p.data();
  for (auto& b : blocks_) {
    b.set_params(in);
    in += b.param_count();
  }
}

}  // namespace nlsteer
