#ifndef DCPF_MC_ESTIMATOR_H_
#define DCPF_MC_ESTIMATOR_H_

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dcpf/geometry.h"
#include "dcpf/rng.h"

namespace dcpf {

// Gaussian rectangle obstacle: mean [x, y, phi, l1, l2] and per-dimension
// standard deviations (diagonal covariance). Position noise is expressed in
// the obstacle's own frame.
struct ObstacleSpec {
  std::array<double, 5> mean = {0.0, 0.0, 0.0, 1.0, 1.0};
  std::array<double, 5> sigma = {0.0, 0.0, 0.0, 0.0, 0.0};

  Pose2 pose() const { return {mean[0], mean[1], mean[2]}; }
  double l1() const { return mean[3]; }
  double l2() const { return mean[4]; }
  void Validate() const;
  bool operator==(const ObstacleSpec&) const = default;
};

// Robot pose expressed in the obstacle's mean frame together with the
// obstacle distribution (zero mean pose). Every estimator consumes this.
struct CpQuery {
  Pose2 robot_pose;
  RobotSpec robot;
  ObstacleSpec obstacle;

  void Validate() const;
  // Re-expresses a world-frame robot pose and obstacle in the obstacle frame.
  static CpQuery FromWorld(const Pose2& robot_pose, const RobotSpec& robot,
                           const ObstacleSpec& obstacle);
};

struct CpEstimate {
  double p_hat = 0.0;
  double ci_half_width = 0.0;
  std::uint64_t n = 0;
  std::uint64_t hits = 0;
};

// Probability intervals [b_i, b_{i+1}) (the last one closed) and the CI
// half-width each must reach before sampling stops.
struct AccuracyProfile {
  std::vector<double> boundaries = {0.0, 0.01, 0.1, 1.0};
  std::vector<double> accuracies = {1e-4, 1e-3, 1e-2};
  std::uint64_t batch_size = 40000;
  std::uint64_t max_samples = 4000000;

  static AccuracyProfile Paper() { return {}; }
  // Ten times looser in the two lower intervals, 1e4-sample batches.
  static AccuracyProfile Relaxed();

  void Validate() const;
  std::size_t num_buckets() const { return accuracies.size(); }
  std::size_t BucketOf(double p) const;
  double AccuracyFor(double p) const { return accuracies[BucketOf(p)]; }
};

struct SafetyDecision {
  enum class Verdict { kSafe, kUnsafe };
  Verdict verdict = Verdict::kUnsafe;
  std::uint64_t samples_used = 0;
  bool budget_exhausted = false;
  double p_hat = 0.0;

  bool safe() const { return verdict == Verdict::kSafe; }
};

// A stream of Bernoulli collision indicators.
class HitSource {
 public:
  virtual ~HitSource() = default;
  virtual bool Draw(RngStream& rng) const = 0;
  virtual std::uint64_t CountHits(std::uint64_t n, RngStream& rng) const;
};

// Draws obstacle configurations for one query and tests them against the
// robot footprint.
class QuerySampler final : public HitSource {
 public:
  explicit QuerySampler(const CpQuery& query);
  bool Draw(RngStream& rng) const override;

 private:
  CpQuery query_;
  std::array<Vec2, 4> robot_corners_;
  Vec2 robot_center_;
  double robot_outer_radius_;
  double robot_inner_radius_;
};

// Hit when any of several independent obstacles collides with the robot.
// Its mean is 1 - prod(1 - p_i).
class JointSampler final : public HitSource {
 public:
  explicit JointSampler(std::span<const CpQuery> queries);
  bool Draw(RngStream& rng) const override;

 private:
  std::vector<QuerySampler> samplers_;
};

// Known-probability stream for calibration tests and latency studies.
class BernoulliSource final : public HitSource {
 public:
  explicit BernoulliSource(double p);
  bool Draw(RngStream& rng) const override { return rng.Uniform() < p_; }

 private:
  double p_;
};

// One draw of the collision indicator for `query`.
bool SampleCollision(const CpQuery& query, RngStream& rng);

// Two-sided 95% CLT interval for hits/n, clipped to [0, 1]. The all-miss and
// all-hit cases use the exact bound 1 - 0.05^(1/n).
std::pair<double, double> CltInterval(std::uint64_t hits, std::uint64_t n);
double CltHalfWidth(std::uint64_t hits, std::uint64_t n);

// Batches of profile.batch_size until the CI half-width reaches the accuracy
// of the interval containing the estimate, or max_samples is reached.
CpEstimate EstimateCpAdaptive(const HitSource& source, const AccuracyProfile& profile,
                              RngStream& rng);
CpEstimate EstimateCpAdaptive(const CpQuery& query, const AccuracyProfile& profile,
                              RngStream& rng);

// Plain Monte Carlo with exactly n draws.
CpEstimate EstimateCpFixed(const HitSource& source, std::uint64_t n, RngStream& rng);

// Worst-case sample count needed to satisfy the profile anywhere in [0, 1].
std::uint64_t MaxSamples(const AccuracyProfile& profile);

struct ZTestOptions {
  std::uint64_t small_batch = 1000;
  std::uint64_t large_batch = 10000;
  std::uint64_t switch_at = 100000;
};

// One-sided 95% z-test of p <= p_max.
SafetyDecision ZTestCheck(const HitSource& source, double p_max, std::uint64_t n_max,
                          RngStream& rng, const ZTestOptions& options = {});

struct SprtParams {
  double delta = 0.5;
  double alpha = 0.05;
  double beta = 0.05;
};

// Wald SPRT of p = p_max(1 - delta) (safe) against p = p_max(1 + delta).
SafetyDecision SprtCheck(const HitSource& source, double p_max, std::uint64_t n_max,
                         const SprtParams& params, RngStream& rng);

}  // namespace dcpf

#endif  // DCPF_MC_ESTIMATOR_H_
