#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

namespace kopt {

// SplitMix64 finalizer; used to decorrelate seeds for derived streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent per-item stream seed from a master seed, e.g. (seed, sample_id).
// Results of per-item work depend only on (seed, stream), never on scheduling.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// mt19937_64 with explicit uniform/normal transforms. The standard
// distributions are implementation-defined, so sequences would differ across
// standard libraries; these transforms keep every artifact file reproducible
// from a seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Inclusive integer range.
  long uniform_int(long lo, long hi) {
    if (hi <= lo) return lo;
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    const auto draw = static_cast<std::uint64_t>(uniform01() * static_cast<double>(span));
    return lo + static_cast<long>(draw < span ? draw : span - 1);
  }

  // Standard normal via Box-Muller, second value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Square-root factor of a positive semi-definite covariance. Accepts exactly
// singular matrices (Sigma = 0 included); rejects indefinite input.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw std::invalid_argument("covariance must be square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  if (es.info() != Eigen::Success) throw std::invalid_argument("covariance eigendecomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd root(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-9 * scale) throw std::invalid_argument("covariance is not positive semi-definite");
    root[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * root.asDiagonal();
}

// x = mean + L z with z ~ N(0, I) and L a precomputed psd_sqrt factor.
inline Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& sqrt_factor,
                                  Rng& rng) {
  Eigen::VectorXd z(sqrt_factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean + sqrt_factor * z;
}

}  // namespace kopt
