#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace nlsteer {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Derives an independent RNG from (seed, stream) so that the subject, the
// dataset, the map init and the pair sampler never share a stream.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

Vec gaussian_vec(int n, Rng& rng);
Mat gaussian_mat(int rows, int cols, Rng& rng);
// QR of a Gaussian matrix with R's diagonal signs fixed, so the result is
// uniquely determined by the RNG draws.
Mat random_orthogonal(int n, Rng& rng);

// FNV-1a over raw bytes; stable across runs (unlike std::hash).
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const Vec& v, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const Mat& m, std::uint64_t h = 0xcbf29ce484222325ULL);

// |a-b| / max(|a|, |b|, floor)
double rel_diff(double a, double b, double floor = 1e-12);
// ||a-b|| / max(||b||, 1)
double rel_err(const Vec& a, const Vec& b);

struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string field_, const std::string& what_)
      : std::runtime_error("config error: " + field_ + ": " + what_), field(std::move(field_)) {}
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nlsteer
