#pragma once

#include "nlsteer/common.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace nlsteer {

struct InversionConfig {
  int max_iters = 30;
  double rel_tol = 1e-5;
};

struct InversionReport {
  int iterations = 0;      // fixed-point iterations summed over blocks
  double residual = 0.0;   // worst per-block relative residual
  bool converged = true;
};

struct InversionError : std::runtime_error {
  InversionReport report;
  explicit InversionError(const InversionReport& r)
      : std::runtime_error("fixed-point inversion did not converge (residual " +
                           std::to_string(r.residual) + " after " + std::to_string(r.iterations) +
                           " iterations)"),
        report(r) {}
};

// Persistent power-iteration state for one weight matrix. u tracks the left
// singular vector, v the right one.
struct PowerIterState {
  Vec u, v;
  std::uint64_t reseed_key = 0;  // deterministic re-randomization of degenerate states
};

PowerIterState make_power_state(int rows, int cols, Rng& rng);

struct SpectralResult {
  Mat normalized;      // W * min(1, 1/sigma)
  double sigma = 0.0;  // u^T W v after one power iteration
  double scale = 1.0;  // the applied factor min(1, 1/sigma)
};

// One power iteration on `state`, then scales the matrix so its estimated
// spectral norm is at most 1. A zero matrix yields sigma = 0 and scale 1; a
// degenerate state vector is re-randomized deterministically.
SpectralResult spectral_normalize(const Mat& weights, PowerIterState& state);

class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual int dim() const = 0;
  virtual std::string kind() const = 0;
  virtual Vec forward(const Vec& h) const = 0;
  virtual std::pair<Vec, InversionReport> inverse(const Vec& z) const = 0;
  // inverse() that throws InversionError when the report is not converged.
  Vec inverse_or_throw(const Vec& z) const;
};

// Orthogonal change of basis. Rows of W are the feature directions, so the
// inverse is the transpose.
class LinearFeatureMap final : public FeatureMap {
 public:
  explicit LinearFeatureMap(Mat W);
  static LinearFeatureMap random(int d, Rng& rng);

  int dim() const override { return static_cast<int>(W_.rows()); }
  std::string kind() const override { return "linear"; }
  Vec forward(const Vec& h) const override;
  std::pair<Vec, InversionReport> inverse(const Vec& z) const override;

  const Mat& basis() const { return W_; }
  // Feature direction i as a hidden-space vector (W^T e_i).
  Vec direction(int i) const;

 private:
  Mat W_;
};

// Residual branch g(z) = kappa * (W2n * lrelu(W1n z + b1) + b2) with both
// weight matrices spectral-normalized. The normalization scales are frozen
// between refresh_spectral() calls so a step's forward and backward see one
// consistent linearization.
struct ResidualBlock {
  Mat W1;  // width x dim
  Vec b1;  // width
  Mat W2;  // dim x width
  Vec b2;  // dim
  PowerIterState s1, s2;
  double kappa = 0.6;
  double slope = 0.1;
  double scale1 = 1.0, scale2 = 1.0;
  double sigma1 = 0.0, sigma2 = 0.0;

  static ResidualBlock init(int dim, int width, double kappa, double slope, Rng& rng,
                            int warmup_iters = 20);

  int dim() const { return static_cast<int>(W2.rows()); }
  int width() const { return static_cast<int>(W1.rows()); }

  // One power iteration per weight (iterations times), then refreeze scales.
  void refresh_spectral(int iterations = 1);

  Vec g(const Vec& z) const;

  // Forward with cached pre-activation (needed by the VJPs below).
  Vec g_traced(const Vec& z, Vec& preact) const;
  // d(g)/d(z)^T applied to a cotangent, at the cached pre-activation.
  Vec g_vjp_input(const Vec& preact, const Vec& cot) const;
  // Parameter cotangents for raw W1,b1,W2,b2 (normalization scales constant),
  // accumulated into flat storage starting at `out`.
  void g_vjp_params(const Vec& z, const Vec& preact, const Vec& cot, double* out) const;

  int param_count() const;
  void copy_params(double* out) const;
  void set_params(const double* in);
};

// Empirical Lipschitz constant of the residual branch: max over sampled pairs
// of ||g(a)-g(b)|| / ||a-b||. Mixes global pairs with local perturbations.
double lipschitz_estimate(const ResidualBlock& block, int n_pairs, std::uint64_t seed);

struct IResNetConfig {
  int dim = 16;
  int blocks = 2;
  int width = 128;
  double kappa = 0.6;
  double slope = 0.1;
  InversionConfig inversion;

  void validate() const;
};

// Composition of residual blocks z + g(z), inverted per block by the
// contractive fixed-point iteration x <- y - g(x).
class IResNetFeatureMap final : public FeatureMap {
 public:
  IResNetFeatureMap(IResNetConfig cfg, std::uint64_t seed);
  // Assembles a map from pre-built blocks (tests, deserialization).
  IResNetFeatureMap(IResNetConfig cfg, std::vector<ResidualBlock> blocks);

  int dim() const override { return cfg_.dim; }
  std::string kind() const override { return "iresnet"; }
  Vec forward(const Vec& h) const override;
  std::pair<Vec, InversionReport> inverse(const Vec& z) const override;

  const IResNetConfig& config() const { return cfg_; }
  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  std::vector<ResidualBlock>& blocks() { return blocks_; }

  void refresh_spectral(int iterations = 1);

  struct ForwardTrace {
    std::vector<Vec> inputs;    // per block: input state
    std::vector<Vec> preacts;   // per block: W1n z + b1
  };
  struct InverseTrace {
    std::vector<Vec> solutions;  // per block (in inverse application order): x*
    std::vector<Vec> preacts;    // g pre-activation at x*
    InversionReport report;
  };

  Vec forward_traced(const Vec& h, ForwardTrace& trace) const;
  Vec inverse_traced(const Vec& z, InverseTrace& trace, const InversionConfig* override_cfg = nullptr) const;

  // Reverse-mode through the forward pass. Accumulates parameter cotangents
  // into `grad` (layout per flat_params) and returns the input cotangent.
  Vec backward_forward(const ForwardTrace& trace, const Vec& dLdz, Vec& grad) const;
  // Reverse-mode through the inverse pass via implicit differentiation of the
  // fixed point x = y - g(x), realized as a Neumann-series solve. Throws
  // InversionError if the trace did not converge.
  Vec backward_inverse(const InverseTrace& trace, const Vec& dLdx, Vec& grad,
                       const InversionConfig* override_cfg = nullptr) const;

  int param_count() const;
  Vec flat_params() const;
  void set_flat_params(const Vec& p);

 private:
  IResNetConfig cfg_;
  std::vector<ResidualBlock> blocks_;
};

}  // namespace nlsteer
