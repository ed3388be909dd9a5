#pragma once

#include "nlsteer/common.hpp"
#include "nlsteer/site.hpp"

#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace nlsteer {

// Frozen toy model with a planted non-linear feature: the radius of a 2-D
// hidden subspace at one (layer, position) gates the comply/refuse behavior.
//
// Data path, in causal order:
//   - the input carries a 2-D code c = (r cos phi, r sin phi) at
//     carrier_position, together with a noisy scalar correlate of the radius
//     (a linear shadow too weak to separate the classes on its own); the
//     embedding places them in reserved carrier coordinates and everything
//     else in a nuisance subspace,
//   - blocks up to planted_layer mix and transform nuisance content only
//     (reserved coordinates are write-protected, and planted/vote/certificate
//     coordinates are actively cleaned at block entry, so junk injected by an
//     upstream edit cannot masquerade as the code),
//   - a writer head at planted_layer copies the code into the planted 2-D
//     subspace at encode_position; the block output there holds the code
//     exactly,
//   - the next block spreads the code causally and writes, per position, a
//     vote feature that is positive exactly when the radius lies inside the
//     compliance band (r0, band_max), plus a radial certificate at the last
//     position whose angle depends on nuisance content (so no class-mean
//     statistic sees it),
//   - the readout requires every vote positive and the certificate radius
//     inside the band. Generated radii never exceed radius_max < band_max, so
//     on clean inputs the behavior reduces to radius > r0; an edit that
//     overshoots the band reads as refusal, which is what makes imprecise
//     steering fail on this subject.
struct SubjectConfig {
  int layers = 6;       // >= 4
  int width = 16;       // hidden d, >= 8
  int seq_len = 8;
  int input_dim = 8;    // >= 3
  double r0 = 1.0;      // radius threshold
  double radius_min = 0.3;
  double radius_max = 2.0;
  double band_max = 2.2;      // upper edge of the compliance band, > radius_max
  double label_margin = 0.1;  // generated radii avoid (r0 - m, r0 + m)
  // generated comply-eliciting inputs carry radii from this narrow range,
  // the way a prompt set that reliably elicits one behavior clusters
  double comply_radius_lo = 1.35;
  double comply_radius_hi = 1.65;
  int planted_layer = 2;      // block whose output carries the clean code
  int encode_position = -4;   // where the code is written (negative ok)
  int carrier_position = 1;   // where the input carries the code

  double mix_gain = 0.5;
  double anchor_weight = 0.7;   // mixing mass pinned on encode_position downstream
  double embed_scale = 0.5;
  double mlp_gain = 0.1;        // blocks up to the planted layer
  double mlp_gain_late = 0.5;   // later blocks
  int mlp_hidden = 32;
  double vote_gain = 6.0;
  double vote_sharpness = 6.0;
  double cert_angle_gain = 3.0;
  double foothold_noise = 1.2;  // noise sigma of the linear radius correlate
  double foothold_gain = 2.0;   // write amplitude of the correlate (AUC-neutral)
  double radius_eps = 1e-6;     // smoothing of sqrt at the origin

  void validate() const;
};

struct Example {
  Mat input;       // seq_len x input_dim
  bool comply = false;
  double radius = 0.0;  // planted ground truth; diagnostics only
};

// All block outputs of one forward pass; blocks[l] is seq_len x width.
struct SubjectStates {
  std::vector<Mat> blocks;
};

struct EditRecord {
  Site site;  // resolved
  Vec before, after;
};

class Subject {
 public:
  Subject(const SubjectConfig& cfg, std::uint64_t seed);

  const SubjectConfig& config() const { return cfg_; }
  int layers() const { return cfg_.layers; }
  int width() const { return cfg_.width; }
  int seq_len() const { return cfg_.seq_len; }
  std::uint64_t seed() const { return seed_; }

  SubjectStates forward(const Mat& input) const;

  using EditFn = std::function<Vec(const Vec&)>;
  struct HookResult {
    bool comply = false;
    SubjectStates states;            // post-edit values at and downstream of edits
    std::vector<EditRecord> edits;   // in application order
  };
  // Runs the forward pass applying each edit where its site resolves. At most
  // one edit per site; a non-finite edit output is an error.
  HookResult forward_with_hooks(const Mat& input, const std::vector<std::pair<Site, EditFn>>& edits) const;

  bool comply_label(const SubjectStates& states) const;
  bool comply_label(const Mat& input) const;

  // Margin diagnostics behind the label: min vote and certificate radius.
  std::pair<double, double> readout_margins(const SubjectStates& states) const;

  // Everything backward_from_taps needs about one resumed pass. Entry k
  // describes block edit_layer+1+k.
  struct ResumeTrace {
    int edit_layer = 0;
    int edit_pos = 0;
    std::vector<Mat> post_mix;    // state after the mixing write
    std::vector<Mat> mlp_preact;  // seq_len x hidden
    std::vector<Vec> head_rho;    // per-position smoothed radius (vote block only, else empty)
    std::vector<double> head_psi; // certificate angle (vote block only, else 0)
  };
  // Replaces the state at `site` in `plain` by `value` and recomputes the
  // downstream blocks. States at earlier layers are shared with `plain`.
  SubjectStates forward_from_override(const SubjectStates& plain, const Site& site, const Vec& value,
                                      ResumeTrace* trace = nullptr) const;

  // Reverse-mode from cotangents at block outputs (taps) down to the edited
  // state. Tap sites must be resolved and at or downstream of the edit layer.
  Vec backward_from_taps(const ResumeTrace& trace,
                         const std::vector<std::pair<Site, Vec>>& taps) const;

  std::vector<Site> all_sites() const;  // every exposed (layer, position), resolved

  // ||planted subspace component|| of the state at (planted_layer, encode
  // position); equals the generated radius on clean inputs.
  double planted_radius(const SubjectStates& states) const;

  std::uint64_t weight_checksum() const;

  // --- frozen parameters (exposed for serialization and tests) ---
  struct Block {
    Mat mix;       // seq_len x seq_len, causal row-stochastic
    Mat mlp_in;    // hidden x width
    Vec mlp_bias;  // hidden
    Mat mlp_out;   // width x hidden
  };
  struct Params {
    Mat embed;                       // width x input_dim
    Vec qc1, qc2, qc3, qp1, qp2, qf, qv, qg1, qg2;
    std::vector<Block> blocks;
    Vec wpsi;                        // certificate angle probe
    Vec spread;                      // per-position planted-copy scale at the vote block
    double cert_threshold = 0.0;     // lower certificate edge
    double cert_upper = 0.0;         // upper certificate edge
  };
  const Params& params() const { return p_; }
  Subject(const SubjectConfig& cfg, std::uint64_t seed, Params params);  // deserialization

 private:
  SubjectConfig cfg_;
  std::uint64_t seed_ = 0;
  Params p_;
  Mat proj_early_;  // write projector for blocks <= planted_layer
  Mat proj_late_;   // write projector for later blocks
  Mat clean_;       // removes planted/vote/cert components
  int enc_pos_ = 0;

  void finish_init();
  double smooth_radius(double a, double b) const;
  double vote_value(double rho, double scale) const;
};

struct ContrastiveDataset {
  std::vector<Example> train_pos, train_neg;
  std::vector<Example> test_pos, test_neg;
};

// Rejection-samples inputs until the subject's labels fill the requested
// buckets. Deterministic given the seed; throws after a bounded number of
// draws per example.
ContrastiveDataset generate_dataset(const Subject& subject, int n_pos, int n_neg, std::uint64_t seed,
                                    int n_test_pos = -1, int n_test_neg = -1);

}  // namespace nlsteer
